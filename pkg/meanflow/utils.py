import jax
import numpy as np
from jax import numpy as jnp

from . import errors


def no_op(*args, **kwargs):
    pass


def flagged_print(flag):
    """Returns a print function that prefixes every line with `flag`.

    Keyword fields are rendered as `key=value` so the lines stay easy to grep.
    """
    def _print(*args, **fields):
        parts = [str(a) for a in args]
        parts += [f"{k}={_format_field(v)}" for k, v in fields.items()]
        print(flag, *parts, flush=True)
    return _print


def _format_field(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def is_concrete(*values):
    """True when none of `values` is a JAX tracer."""
    return not any(isinstance(v, jax.core.Tracer) for v in values)


def expand_to(t, x):
    """Appends trailing unit axes so that per-sample `t` broadcasts against x."""
    t = jnp.asarray(t)
    return jnp.reshape(t, t.shape + (1,) * (jnp.ndim(x) - t.ndim))


def check_same_shape(component, expected, got):
    if jnp.shape(expected) != jnp.shape(got):
        raise errors.ShapeMismatchError(component, jnp.shape(expected),
                                        jnp.shape(got))


def sq_norm(x):
    """Squared L2 norm over every axis except the leading batch axis."""
    x = jnp.asarray(x)
    if x.ndim <= 1:
        return x ** 2
    return jnp.sum(x ** 2, axis=tuple(range(1, x.ndim)))


def sample_batch(rng, dataset, batch_size):
    """Draws a batch of (points, labels) with replacement using `rng`.

    Labels are None for unlabeled datasets.
    """
    index = jax.random.randint(rng, (batch_size,), 0, len(dataset))
    xs = jnp.asarray(dataset.points)[index]
    if dataset.labels is None:
        return xs, None
    return xs, jnp.asarray(dataset.labels)[index]


def parse_range(text, name):
    """Parses "lo:hi:n" into a linspace."""
    try:
        lo, hi, n = text.split(':')
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise errors.GridError((f"Argument {name} should look like "
                                f"'lo:hi:n', was '{text}'."))
    if n < 1:
        raise errors.GridError(f"Argument {name} needs n >= 1, was {n}.")
    return np.linspace(lo, hi, n)


def parse_float_list(text, name):
    items = [s.strip() for s in text.split(',') if s.strip()]
    if len(items) == 0:
        raise errors.GridError(f"Argument {name} is an empty list.")
    try:
        return [float(s) for s in items]
    except ValueError:
        raise errors.GridError(f"Argument {name} has a non-numeric entry: '{text}'.")
