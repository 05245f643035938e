"""Run configuration: dataclasses with defaults plus an INI-style file format.

A run file has `[network]`, `[training]`, `[data]` and `[eval]` sections of
`key = value` lines; `#` starts a comment. Every key must name a field of the
matching dataclass.
"""
import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Tuple

from . import errors

TIME_COND_MODES = ('t_r', 't_dt', 't_r_dt', 'dt_only')
SAMPLERS = ('uniform', 'lognorm')
DATA_KINDS = ('gaussian', 'point_mass', 'gmm_ring', 'moons', 'checkerboard',
              'csv')


@dataclass
class NetworkConfig:
    input_dim: int = 2
    hidden_dim: int = 256
    depth: int = 4
    embed_dim: int = 128
    time_cond_mode: str = 't_dt'
    num_classes: int = 0
    # times are scaled before the sinusoids; frequencies span max_period
    time_scale: float = 10.0
    max_period: float = 1e4

    def __post_init__(self):
        for key in ('input_dim', 'hidden_dim', 'depth', 'embed_dim'):
            if getattr(self, key) < 1:
                raise errors.ConfigError(key, f"must be >= 1, was {getattr(self, key)}")
        if self.embed_dim % 2 != 0:
            raise errors.ConfigError('embed_dim', f"must be even, was {self.embed_dim}")
        if self.time_cond_mode not in TIME_COND_MODES:
            raise errors.ConfigError('time_cond_mode', (
                f"should be one of {TIME_COND_MODES}, was {self.time_cond_mode}"))
        if self.num_classes < 0:
            raise errors.ConfigError('num_classes', f"must be >= 0, was {self.num_classes}")


@dataclass
class TrainConfig:
    ratio_r_neq_t: float = 0.25
    sampler: str = 'lognorm'
    sampler_mu: float = -0.4
    sampler_sigma: float = 1.0
    p: float = 1.0
    c: float = 1e-3
    cfg: bool = True
    omega: float = 1.0
    kappa: float = 0.0
    class_drop_prob: float = 0.1
    cfg_t_interval: Tuple[float, float] = (0.0, 1.0)
    # coefficients of (v, r, t) in the JVP tangent; (1, 0, 1) is correct
    jvp_tangent: Tuple[float, float, float] = (1.0, 0.0, 1.0)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    warmup_steps: int = 0
    batch_size: int = 256
    ema_decay: float = 0.999
    iterations: int = 2000
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 1000

    def __post_init__(self):
        self.cfg_t_interval = tuple(float(v) for v in self.cfg_t_interval)
        self.jvp_tangent = tuple(float(v) for v in self.jvp_tangent)
        if len(self.jvp_tangent) != 3:
            raise errors.ConfigError('jvp_tangent', f"needs 3 values, was {self.jvp_tangent}")
        _check_fraction('ratio_r_neq_t', self.ratio_r_neq_t)
        _check_fraction('class_drop_prob', self.class_drop_prob)
        _check_fraction('ema_decay', self.ema_decay)
        if self.sampler not in SAMPLERS:
            raise errors.ConfigError('sampler', (
                f"should be one of {SAMPLERS}, was {self.sampler}"))
        if self.sampler_sigma <= 0:
            raise errors.ConfigError('sampler_sigma', f"must be > 0, was {self.sampler_sigma}")
        if self.p < 0:
            raise errors.ConfigError('p', f"must be >= 0, was {self.p}")
        if self.c <= 0:
            raise errors.ConfigError('c', f"must be > 0, was {self.c}")
        if not 0.0 <= self.kappa < 1.0:
            raise errors.ConfigError('kappa', f"must be in [0, 1), was {self.kappa}")
        if not math.isfinite(self.effective_scale):
            raise errors.ConfigError('omega', f"effective scale is not finite for omega={self.omega}")
        if (len(self.cfg_t_interval) != 2
                or not 0.0 <= self.cfg_t_interval[0] <= self.cfg_t_interval[1] <= 1.0):
            raise errors.ConfigError('cfg_t_interval', (
                f"must be [lo, hi] within [0, 1], was {self.cfg_t_interval}"))
        for key in ('batch_size', 'log_every', 'checkpoint_every'):
            if getattr(self, key) < 1:
                raise errors.ConfigError(key, f"must be >= 1, was {getattr(self, key)}")
        for key in ('iterations', 'warmup_steps'):
            if getattr(self, key) < 0:
                raise errors.ConfigError(key, f"must be >= 0, was {getattr(self, key)}")

    @property
    def effective_scale(self):
        """omega' = omega / (1 - kappa)."""
        return self.omega / (1.0 - self.kappa)


@dataclass
class DataConfig:
    kind: str = 'gaussian'
    n: int = 10000
    dim: int = 1
    mean: float = 1.0
    var: float = 0.25
    x0: float = 0.5
    k: int = 8
    radius: float = 2.0
    noise: float = 0.05
    path: str = ''
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DATA_KINDS:
            raise errors.ConfigError('kind', f"should be one of {DATA_KINDS}, was {self.kind}")
        if self.kind == 'csv' and not self.path:
            raise errors.ConfigError('path', "is required when kind = csv")
        if self.var < 0:
            raise errors.ConfigError('var', f"must be >= 0, was {self.var}")


@dataclass
class EvalConfig:
    n: int = 10000
    metric: str = 'mmd'
    steps: int = 1
    bandwidth: str = 'median'
    seed: int = 1

    def __post_init__(self):
        if self.metric not in ('mmd', 'w1', 'moments'):
            raise errors.ConfigError('metric', f"should be mmd, w1 or moments, was {self.metric}")
        if self.steps < 1:
            raise errors.ConfigError('steps', f"must be >= 1, was {self.steps}")


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


SECTIONS = {
    'network': NetworkConfig,
    'training': TrainConfig,
    'data': DataConfig,
    'eval': EvalConfig,
}


def _check_fraction(key, value):
    if not 0.0 <= value <= 1.0:
        raise errors.ConfigError(key, f"must be in [0, 1], was {value}")


def _coerce(key, kind, text):
    try:
        if kind is bool:
            lowered = text.strip().lower()
            if lowered in ('1', 'true', 'yes', 'on'):
                return True
            if lowered in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is str:
            return text.strip()
        # tuple of floats
        return tuple(float(v) for v in text.replace('[', '').replace(']', '').split(','))
    except ValueError:
        raise errors.ConfigError(key, f"cannot parse value '{text}'")


def parse_run_config(text):
    """Parses run-file text into a RunConfig. Unknown keys are errors."""
    parser = configparser.ConfigParser(comment_prefixes=('#',),
                                       inline_comment_prefixes=('#',),
                                       interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as e:
        key = e.line.split('=')[0].strip()
        raise errors.ConfigError(key, "appears before any [section] header")
    except configparser.Error as e:
        raise errors.ConfigError('?', str(e).splitlines()[0])

    if len(parser.defaults()) > 0:
        key = next(iter(parser.defaults()))
        raise errors.ConfigError(key, "is in [DEFAULT], which is not a valid section")

    kwargs = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise errors.ConfigError(section, (
                f"is not a known section; expected one of {sorted(SECTIONS)}"))
        cls = SECTIONS[section]
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for key, raw in parser.items(section):
            if key not in types:
                raise errors.ConfigError(key, f"is not a known key of [{section}]")
            values[key] = _coerce(key, types[key], raw)
        kwargs[section] = cls(**values)
    return RunConfig(**kwargs)


def load_run_config(path):
    with open(path, 'r', encoding='utf-8') as f:
        return parse_run_config(f.read())


def _format_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ', '.join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_run_config(run_config):
    """Resolved config text; parse_run_config(format_run_config(c)) == c."""
    lines = []
    for section in SECTIONS:
        lines.append(f'[{section}]')
        values = dataclasses.asdict(getattr(run_config, section))
        for key, value in values.items():
            lines.append(f'{key} = {_format_value(value)}')
        lines.append('')
    return '\n'.join(lines)
