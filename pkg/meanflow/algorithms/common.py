import jax
from flax import struct
from jax import numpy as jnp

from .. import autodiff
from .. import flows
from .. import timesteps
from .. import utils


@struct.dataclass
class LossBreakdown:
    raw_sq_error: jax.Array  # per-sample ||delta||^2
    weight: jax.Array  # per-sample adaptive weight, gradient-stopped
    weighted_loss: jax.Array
    fraction_r_eq_t: jax.Array


@struct.dataclass
class TrainingBatch:
    x: jax.Array
    eps: jax.Array
    z: jax.Array
    r: jax.Array
    t: jax.Array
    v: jax.Array
    labels: jax.Array  # true labels; the null index for unconditional data
    net_labels: jax.Array  # labels fed to the network after class dropping
    dropped: jax.Array


def meanflow_target(v, du_dt, r, t):
    """u_tgt = v - (t - r) du/dt, under stop-gradient."""
    utils.check_same_shape('du_dt', v, du_dt)
    span = utils.expand_to(jnp.asarray(t) - jnp.asarray(r), v)
    return autodiff.detach(v - span * du_dt)


def adaptive_weight(delta, p, c):
    """w = 1 / (||delta||^2 + c)^p per sample, excluded from gradients."""
    return autodiff.detach(1.0 / (utils.sq_norm(delta) + c) ** p)


def cfg_velocity_tilde(v_cond, u_uncond, u_cond, omega, kappa):
    """omega * v + kappa * u_cond + (1 - omega - kappa) * u_uncond.

    With u_cond equal to the guided field itself this is the usual CFG field
    with effective scale omega / (1 - kappa).
    """
    return omega * v_cond + kappa * u_cond + (1 - omega - kappa) * u_uncond


def prepare_batch(rng, batch, config, num_classes):
    """Draws noise, times and class drops for one batch of data."""
    x, labels = batch
    x = jnp.asarray(x, dtype=jnp.float64)
    n = x.shape[0]
    k_eps, k_time, k_drop = jax.random.split(rng, 3)
    eps = jax.random.normal(k_eps, x.shape, dtype=jnp.float64)
    r, t = timesteps.sample_time_pairs(k_time, config, n)
    z = flows.interpolate(x, eps, t)
    v = flows.conditional_velocity(x, eps, t)

    null = jnp.full((n,), num_classes, dtype=jnp.int32)
    if num_classes == 0 or labels is None:
        labels = null
        dropped = jnp.ones((n,), dtype=bool)
    else:
        labels = jnp.asarray(labels, dtype=jnp.int32)
        dropped = jax.random.bernoulli(k_drop, config.class_drop_prob, (n,))
    net_labels = jnp.where(dropped, null, labels)
    return TrainingBatch(x=x, eps=eps, z=z, r=r, t=t, v=v, labels=labels,
                         net_labels=net_labels, dropped=dropped)


def guided_velocity(apply_fn, params, tb, config, num_classes):
    """The velocity used in the target: v_t, or the CFG field where active.

    The two bootstrap terms are evaluated at (z_t, t, t) with the current
    weights and are gradient-stopped. Samples whose class was dropped use the
    unconditional output in place of the conditional one.
    """
    if not config.cfg or num_classes == 0:
        return tb.v
    null = jnp.full_like(tb.labels, num_classes)
    u_uncond = autodiff.detach(apply_fn(params, tb.z, tb.t, tb.t, null))
    u_cond = autodiff.detach(apply_fn(params, tb.z, tb.t, tb.t, tb.labels))
    u_cond = jnp.where(utils.expand_to(tb.dropped, u_cond), u_uncond, u_cond)
    v_tilde = cfg_velocity_tilde(tb.v, u_uncond, u_cond, config.omega,
                                 config.kappa)
    lo, hi = config.cfg_t_interval
    active = (tb.t >= lo) & (tb.t <= hi)
    return jnp.where(utils.expand_to(active, v_tilde), v_tilde, tb.v)


def meanflow_loss(apply_fn, params, tb, v_tilde, config):
    """Returns (loss, LossBreakdown) for a prepared batch."""
    a, b, c = config.jvp_tangent

    def u_fn(z, r, t):
        return apply_fn(params, z, r, t, tb.net_labels)

    u, du_dt = autodiff.jvp(u_fn, (tb.z, tb.r, tb.t),
                            (a * v_tilde, b * jnp.ones_like(tb.r),
                             c * jnp.ones_like(tb.t)))
    u_tgt = meanflow_target(v_tilde, du_dt, tb.r, tb.t)
    delta = u - u_tgt
    raw = utils.sq_norm(delta)
    weight = adaptive_weight(delta, config.p, config.c)
    loss = jnp.mean(weight * raw)
    breakdown = LossBreakdown(raw_sq_error=raw, weight=weight,
                              weighted_loss=loss,
                              fraction_r_eq_t=jnp.mean(tb.r == tb.t))
    return loss, breakdown


def training_step(apply_fn, params, batch, rng, config, num_classes):
    """One MeanFlow loss evaluation with parameter gradients.

    Returns (LossBreakdown, grads). `apply_fn(params, z, r, t, labels)` is the
    network; the target is built from a forward-mode JVP with tangent
    (v, 0, 1) and is held constant for the reverse pass.
    """
    tb = prepare_batch(rng, batch, config, num_classes)
    v_tilde = guided_velocity(apply_fn, params, tb, config, num_classes)
    grads, breakdown = autodiff.grad_params(
        lambda p: meanflow_loss(apply_fn, p, tb, v_tilde, config),
        params, has_aux=True)
    return breakdown, grads
