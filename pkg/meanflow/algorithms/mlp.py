import math

import jax
import numpy as np
import optax
from flax import linen as nn
from flax import struct
from jax import numpy as jnp

from .. import autodiff
from .. import errors
from .. import utils
from . import common

# the conditioning variables each time_cond_mode feeds to the network
MODE_VARIABLES = {
    't_r': ('t', 'r'),
    't_dt': ('t', 'dt'),
    't_r_dt': ('t', 'r', 'dt'),
    'dt_only': ('dt',),
}


@struct.dataclass
class NetworkParams:
    live: dict
    ema: dict


@struct.dataclass
class TrainState:
    step: int
    params: NetworkParams
    opt_state: optax.OptState


def sinusoid(s, embed_dim, time_scale=1.0, max_period=1e4):
    """Interleaved (sin, cos) features at a geometric ladder of frequencies."""
    s = jnp.asarray(s, dtype=jnp.float64)
    half = embed_dim // 2
    freqs = time_scale * jnp.exp(
        -math.log(max_period) * jnp.arange(half, dtype=jnp.float64) / half)
    args = s[..., None] * freqs
    features = jnp.stack([jnp.sin(args), jnp.cos(args)], axis=-1)
    return jnp.reshape(features, s.shape + (embed_dim,))


def check_time_order(r, t):
    if not utils.is_concrete(r, t):
        return
    r_np, t_np = np.broadcast_arrays(np.asarray(r, dtype=np.float64),
                                     np.asarray(t, dtype=np.float64))
    ok = (0.0 <= r_np) & (r_np <= t_np) & (t_np <= 1.0)
    if not np.all(ok):
        i = np.flatnonzero(~ok)[0]
        raise errors.TimeOrderError(float(r_np.flat[i]), float(t_np.flat[i]))


def embed_times(r, t, mode='t_dt', embed_dim=128, time_scale=1.0,
                max_period=1e4):
    """Raw sinusoidal blocks of the mode's conditioning variables.

    Returns an array of shape (..., n_variables, embed_dim), variables in
    MODE_VARIABLES[mode] order. The network passes each block through its own
    2-layer MLP and sums the results.
    """
    if mode not in MODE_VARIABLES:
        raise ValueError((f"Argument mode should be one of "
                          f"{sorted(MODE_VARIABLES)}, was {mode}."))
    check_time_order(r, t)
    r, t = jnp.broadcast_arrays(jnp.asarray(r, dtype=jnp.float64),
                                jnp.asarray(t, dtype=jnp.float64))
    values = {'t': t, 'r': r, 'dt': t - r}
    blocks = [sinusoid(values[name], embed_dim, time_scale, max_period)
              for name in MODE_VARIABLES[mode]]
    return jnp.stack(blocks, axis=-2)


class TimeEmbedding(nn.Module):
    hidden_dim: int

    @nn.compact
    def __call__(self, features):
        h = nn.Dense(self.hidden_dim, dtype=jnp.float64,
                     param_dtype=jnp.float64, name='fc0')(features)
        h = nn.silu(h)
        return nn.Dense(self.hidden_dim, dtype=jnp.float64,
                        param_dtype=jnp.float64, name='fc1')(h)


class VelocityMLP(nn.Module):
    input_dim: int
    hidden_dim: int = 256
    depth: int = 4
    embed_dim: int = 128
    time_cond_mode: str = 't_dt'
    num_classes: int = 0
    time_scale: float = 10.0
    max_period: float = 1e4

    @classmethod
    def from_config(cls, config):
        return cls(input_dim=config.input_dim, hidden_dim=config.hidden_dim,
                   depth=config.depth, embed_dim=config.embed_dim,
                   time_cond_mode=config.time_cond_mode,
                   num_classes=config.num_classes,
                   time_scale=config.time_scale,
                   max_period=config.max_period)

    @nn.compact
    def __call__(self, z, r, t, labels):
        batch_shape = z.shape[:-1]
        r = jnp.broadcast_to(jnp.asarray(r, dtype=jnp.float64), batch_shape)
        t = jnp.broadcast_to(jnp.asarray(t, dtype=jnp.float64), batch_shape)
        raw = embed_times(r, t, self.time_cond_mode, self.embed_dim,
                          self.time_scale, self.max_period)

        cond = 0.
        for i, name in enumerate(MODE_VARIABLES[self.time_cond_mode]):
            cond = cond + TimeEmbedding(self.hidden_dim,
                                        name=f'time_{name}')(raw[..., i, :])
        # last row is the null (unconditional) token
        cond = cond + nn.Embed(self.num_classes + 1, self.hidden_dim,
                               dtype=jnp.float64, param_dtype=jnp.float64,
                               name='class_table')(labels)

        hidden_init = nn.initializers.variance_scaling(1.0, 'fan_in', 'uniform')
        x = nn.Dense(self.hidden_dim, kernel_init=hidden_init,
                     dtype=jnp.float64, param_dtype=jnp.float64, name='fc0')(z)
        x = nn.silu(x + cond)
        for layer in range(1, self.depth):
            x = nn.Dense(self.hidden_dim, kernel_init=hidden_init,
                         dtype=jnp.float64, param_dtype=jnp.float64,
                         name=f'fc{layer}')(x)
            x = nn.silu(x)
        return nn.Dense(self.input_dim, kernel_init=nn.initializers.zeros,
                        bias_init=nn.initializers.zeros, dtype=jnp.float64,
                        param_dtype=jnp.float64, name=f'fc{self.depth}')(x)


def resolve_labels(labels, batch_shape, num_classes):
    """Integer label array; None (or a None class id) selects the null row."""
    if labels is None:
        return jnp.full(batch_shape, num_classes, dtype=jnp.int32)
    if utils.is_concrete(labels):
        labels_np = np.asarray(labels)
        bad = labels_np[(labels_np < 0) | (labels_np >= num_classes)]
        if bad.size > 0:
            raise errors.ClassIdError(int(bad.reshape(-1)[0]), num_classes)
    return jnp.broadcast_to(jnp.asarray(labels, dtype=jnp.int32), batch_shape)


def init_params(config, rng):
    model = VelocityMLP.from_config(config)
    z = jnp.zeros((1, config.input_dim), dtype=jnp.float64)
    times = jnp.zeros((1,), dtype=jnp.float64)
    labels = jnp.full((1,), config.num_classes, dtype=jnp.int32)
    params = model.init(rng, z, times, times, labels)['params']
    params = jax.tree_util.tree_map(lambda p: jnp.asarray(p, jnp.float64), params)
    return NetworkParams(live=params, ema=params)


def u_theta(config, params, z, r, t, labels=None):
    """The average velocity u_theta(z, r, t | c) for raw parameters `params`."""
    z = jnp.asarray(z, dtype=jnp.float64)
    if z.shape[-1] != config.input_dim:
        raise errors.ShapeMismatchError('z', (config.input_dim,), z.shape[-1:])
    check_time_order(r, t)
    labels = resolve_labels(labels, z.shape[:-1], config.num_classes)
    return VelocityMLP.from_config(config).apply({'params': params}, z, r, t, labels)


def make_u_fn(config, params):
    """A jitted u_fn(z, r, t, labels) closed over frozen parameters."""
    model = VelocityMLP.from_config(config)

    @jax.jit
    def _apply(z, r, t, labels):
        return model.apply({'params': params}, z, r, t, labels)

    def u_fn(z, r, t, labels=None):
        z = jnp.asarray(z, dtype=jnp.float64)
        if z.shape[-1] != config.input_dim:
            raise errors.ShapeMismatchError('z', (config.input_dim,), z.shape[-1:])
        check_time_order(r, t)
        labels = resolve_labels(labels, z.shape[:-1], config.num_classes)
        r = jnp.asarray(r, dtype=jnp.float64)
        t = jnp.asarray(t, dtype=jnp.float64)
        return _apply(z, r, t, labels)
    return u_fn


def ema_update(params, decay):
    """ema <- decay * ema + (1 - decay) * live, per tensor."""
    if utils.is_concrete(decay) and not 0.0 <= float(decay) <= 1.0:
        raise ValueError(f"Argument decay should be in [0, 1], was {decay}.")
    ema = optax.incremental_update(params.live, params.ema, 1.0 - decay)
    return params.replace(ema=ema)


def make_optimizer(train_config):
    lr = train_config.lr
    if train_config.warmup_steps > 0:
        schedule = optax.join_schedules(
            [optax.linear_schedule(0.0, lr, train_config.warmup_steps),
             optax.constant_schedule(lr)],
            [train_config.warmup_steps])
    else:
        schedule = optax.constant_schedule(lr)
    if train_config.weight_decay > 0:
        return optax.adamw(schedule, b1=train_config.beta1,
                           b2=train_config.beta2, eps=train_config.adam_eps,
                           weight_decay=train_config.weight_decay)
    return optax.adam(schedule, b1=train_config.beta1, b2=train_config.beta2,
                      eps=train_config.adam_eps)


def make_algorithm(net_config, train_config):
    """Builds the MeanFlow training algorithm for one network configuration.

    Returns (init_fn, train_step_fn, eval_fn):
    - init_fn: (int -> TrainState) seed to initial state.
    - train_step_fn: ((TrainState, batch, rng) -> (TrainState, LossBreakdown))
        one optimizer step plus an EMA update. `batch` is (points, labels),
        labels None for unconditional data.
    - eval_fn: ((TrainState, batch, rng) -> LossBreakdown) the loss without
        updating anything.
    """
    model = VelocityMLP.from_config(net_config)
    tx = make_optimizer(train_config)
    num_classes = net_config.num_classes

    def apply_fn(params, z, r, t, labels):
        return model.apply({'params': params}, z, r, t, labels)

    def init_fn(seed):
        params = init_params(net_config, autodiff.make_rng(seed))
        return TrainState(step=0, params=params,
                          opt_state=tx.init(params.live))

    @jax.jit
    def train_step_fn(state, batch, rng):
        breakdown, grads = common.training_step(
            apply_fn, state.params.live, batch, rng, train_config, num_classes)
        updates, opt_state = tx.update(grads, state.opt_state, state.params.live)
        live = optax.apply_updates(state.params.live, updates)
        params = ema_update(state.params.replace(live=live),
                            train_config.ema_decay)
        return TrainState(step=state.step + 1, params=params,
                          opt_state=opt_state), breakdown

    @jax.jit
    def eval_fn(state, batch, rng):
        breakdown, _ = common.training_step(
            apply_fn, state.params.live, batch, rng, train_config, num_classes)
        return breakdown

    return init_fn, train_step_fn, eval_fn
