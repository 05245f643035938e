class MeanFlowError(Exception):
    """Base class for every error raised by meanflow."""


class ShapeMismatchError(MeanFlowError, ValueError):
    def __init__(self, component, expected, got):
        self.component = component
        self.expected = tuple(expected)
        self.got = tuple(got)
        super().__init__((f"Shape mismatch in '{component}': "
                          f"expected {self.expected}, got {self.got}."))


class NonScalarLossError(MeanFlowError, ValueError):
    def __init__(self, shape):
        self.shape = tuple(shape)
        super().__init__(f"Loss must be a scalar, got shape {self.shape}.")


class TimeOrderError(MeanFlowError, ValueError):
    def __init__(self, r, t):
        self.r, self.t = r, t
        super().__init__(f"Times must satisfy 0 <= r <= t <= 1, got r={r}, t={t}.")


class ClassIdError(MeanFlowError, ValueError):
    def __init__(self, class_id, num_classes):
        self.class_id = class_id
        self.num_classes = num_classes
        if num_classes == 0:
            msg = (f"Class id {class_id} given to an unconditional model "
                   f"(num_classes=0).")
        else:
            msg = (f"Class id {class_id} out of range "
                   f"[0, {num_classes}).")
        super().__init__(msg)


class GridError(MeanFlowError, ValueError):
    pass


class SingularityError(MeanFlowError, ValueError):
    pass


class ConfigError(MeanFlowError, ValueError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"Config key '{key}': {message}")


class DatasetFormatError(MeanFlowError, ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"Line {line}: {message}")


class CheckpointError(MeanFlowError, ValueError):
    pass


class DegenerateSampleError(MeanFlowError, ValueError):
    pass


class DivergenceError(MeanFlowError, RuntimeError):
    def __init__(self, iteration, loss):
        self.iteration = iteration
        self.loss = loss
        super().__init__((f"Training diverged at iteration {iteration}: "
                          f"loss={loss}."))


class VerificationError(MeanFlowError, RuntimeError):
    def __init__(self, failures):
        self.failures = list(failures)
        super().__init__("Verification failed: " + "; ".join(self.failures))
