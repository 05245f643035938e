"""Ground-truth fields for Gaussian-mixture data.

With z_t = (1 - t) x + t eps, eps ~ N(0, I) and x drawn from component k,
N(m_k, s_k^2 I), the pair (eps - x, z_t) is jointly Gaussian:

    z_t | k       ~ N((1 - t) m_k, ((1 - t)^2 s_k^2 + t^2) I)
    Cov(v, z_t)   = (t - (1 - t) s_k^2) I
    E[v | z, k]   = -m_k + (t - (1 - t) s_k^2) / sigma_k^2 (z - (1 - t) m_k)

The marginal velocity is the responsibility-weighted sum over components.
The average velocity is obtained by integrating the marginal flow.
"""
import math
from dataclasses import dataclass

import jax
import numpy as np
import pandas as pd
from jax import numpy as jnp
from jax.scipy.special import logsumexp

from . import autodiff
from . import errors
from . import utils

DEFAULT_STEP = 1e-4
# trajectories of zero-variance data are integrated down to this time only
R_FLOOR = 1e-6


@dataclass(frozen=True)
class GmmSpec:
    """Isotropic Gaussian mixture: weights (K,), means (K, d), variances (K,)."""
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        means = np.asarray(self.means, dtype=np.float64)
        if means.ndim == 1:
            means = means[:, None]
        variances = np.asarray(self.variances, dtype=np.float64).reshape(-1)
        if not (len(weights) == len(means) == len(variances)) or len(weights) == 0:
            raise ValueError((f"GmmSpec needs one weight, mean and variance per "
                              f"component, got {len(weights)}, {len(means)}, "
                              f"{len(variances)}."))
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"GmmSpec weights must be positive and sum to 1, got {weights}.")
        if np.any(variances < 0):
            raise ValueError(f"GmmSpec variances must be >= 0, got {variances}.")
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'means', means)
        object.__setattr__(self, 'variances', variances)

    @classmethod
    def gaussian(cls, mean, var, dim=1):
        return cls([1.0], np.full((1, dim), mean, dtype=np.float64), [var])

    @classmethod
    def point_mass(cls, x0, dim=1):
        return cls([1.0], np.full((1, dim), x0, dtype=np.float64), [0.0])

    @classmethod
    def ring(cls, k, radius, var):
        angles = 2 * np.pi * np.arange(k) / k
        means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        return cls(np.full(k, 1.0 / k), means, np.full(k, var))

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def num_components(self):
        return len(self.weights)

    @property
    def is_point_mass(self):
        return self.num_components == 1 and self.variances[0] == 0.0

    @property
    def has_zero_variance(self):
        return bool(np.any(self.variances == 0.0))

    def mean(self):
        return self.weights @ self.means

    def covariance(self):
        mu = self.mean()
        second = sum(w * (v * np.eye(self.dim) + np.outer(m, m))
                     for w, m, v in zip(self.weights, self.means, self.variances))
        return second - np.outer(mu, mu)


def sample_gmm(rng, gmm, n):
    """Draws (points, component labels) from the mixture."""
    k_comp, k_noise = jax.random.split(rng)
    labels = jax.random.choice(k_comp, gmm.num_components, (n,),
                               p=jnp.asarray(gmm.weights))
    noise = jax.random.normal(k_noise, (n, gmm.dim), dtype=jnp.float64)
    means = jnp.asarray(gmm.means)[labels]
    std = jnp.sqrt(jnp.asarray(gmm.variances))[labels][:, None]
    return means + std * noise, labels


def _mixture_velocity(weights, means, variances, z, t):
    """Closed-form E[eps - x | z_t = z] for arrays; z (..., d), t (...)."""
    d = z.shape[-1]
    t = jnp.broadcast_to(jnp.asarray(t, dtype=jnp.float64), z.shape[:-1])[..., None]
    a = 1.0 - t
    mu = a[..., None] * means  # (..., K, d)
    var = a ** 2 * variances + t ** 2  # (..., K)
    diff = z[..., None, :] - mu
    log_prob = (jnp.log(weights) - 0.5 * d * jnp.log(2 * math.pi * var)
                - 0.5 * jnp.sum(diff ** 2, axis=-1) / var)
    gamma = jnp.exp(log_prob - logsumexp(log_prob, axis=-1, keepdims=True))
    gain = (t - a * variances) / var
    cond_mean = -means + gain[..., None] * diff
    return jnp.sum(gamma[..., None] * cond_mean, axis=-2)


def _point_mass_velocity(x0, z, t):
    t = utils.expand_to(jnp.asarray(t, dtype=jnp.float64), z)
    return (z - x0) / t


def _gmm_arrays(gmm):
    return (jnp.asarray(gmm.weights), jnp.asarray(gmm.means),
            jnp.asarray(gmm.variances))


def marginal_velocity(gmm, z, t):
    """v(z, t) = E[eps - x | z_t = z] for t in (0, 1].

    At t = 0 the field is only defined when every component has positive
    variance (then v = -z).
    """
    z = jnp.asarray(z, dtype=jnp.float64)
    if utils.is_concrete(t) and gmm.has_zero_variance and np.any(np.asarray(t) <= 0):
        raise errors.SingularityError(
            "Marginal velocity is singular at t=0 for zero-variance data.")
    if gmm.is_point_mass:
        return _point_mass_velocity(jnp.asarray(gmm.means[0]), z, t)
    return _mixture_velocity(*_gmm_arrays(gmm), z, t)


@jax.jit
def _rk4(weights, means, variances, z, t, r, n_steps):
    """Fixed-step RK4 of dz/dtau = v from tau = t to tau = r (per element)."""
    step = (r - t) / n_steps

    def velocity(z, tau):
        return _mixture_velocity(weights, means, variances, z, tau)

    def body(i, z):
        tau = t + i * step
        h = step[..., None]
        k1 = velocity(z, tau)
        k2 = velocity(z + 0.5 * h * k1, tau + 0.5 * step)
        k3 = velocity(z + 0.5 * h * k2, tau + 0.5 * step)
        k4 = velocity(z + h * k3, tau + step)
        return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    return jax.lax.fori_loop(0, n_steps, body, z)


def _integrate_mixture(gmm, z, t, r, h, same):
    r_target = r
    if gmm.has_zero_variance:
        r = np.where(same, r, np.maximum(r, R_FLOOR))
    span = float(np.max(np.abs(t - r))) if r.size else 0.0
    n_steps = max(int(math.ceil(span / h)), 1)
    z_r = _rk4(*_gmm_arrays(gmm), z, jnp.asarray(t), jnp.asarray(r), n_steps)
    if gmm.has_zero_variance and np.any(r != r_target):
        # last stretch below the floor: one Euler step
        gap = jnp.asarray(r_target - r)[..., None]
        z_r = z_r + gap * marginal_velocity(gmm, z_r, jnp.asarray(np.maximum(r, R_FLOOR)))
    return z_r


def _integrate(gmm, z, t, r, h):
    """Signed integration; r may exceed t (used by finite differences)."""
    z = jnp.asarray(z, dtype=jnp.float64)
    batch_shape = z.shape[:-1]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), batch_shape)
    r = np.broadcast_to(np.asarray(r, dtype=np.float64), batch_shape)
    same = (r == t)
    if gmm.is_point_mass:
        x0 = jnp.asarray(gmm.means[0])
        ratio = np.where(same, 1.0, r / np.where(same, 1.0, t))
        z_r = x0 + jnp.asarray(ratio)[..., None] * (z - x0)
    else:
        z_r = _integrate_mixture(gmm, z, t, r, h, same)
    # r == t is the identity, also at t = 0 where the field may be singular
    return jnp.where(jnp.asarray(same)[..., None], z, z_r)


def integrate_trajectory(gmm, z_t, t, r, h=DEFAULT_STEP):
    """Follows the marginal flow from time t down to time r (RK4, step <= h)."""
    if h <= 0:
        raise ValueError(f"Argument h should be > 0, was {h}.")
    t_np, r_np = np.asarray(t, dtype=np.float64), np.asarray(r, dtype=np.float64)
    if not np.all((0.0 <= r_np) & (r_np <= t_np) & (t_np <= 1.0)):
        raise errors.TimeOrderError(float(np.min(r_np)), float(np.min(t_np)))
    return _integrate(gmm, z_t, t, r, h)


def _average_velocity(gmm, z_t, r, t, h):
    z_t = jnp.asarray(z_t, dtype=jnp.float64)
    if gmm.is_point_mass:
        # straight paths: u == v
        return marginal_velocity(gmm, z_t, t)
    span = utils.expand_to(jnp.asarray(np.asarray(t) - np.asarray(r)), z_t)
    return (z_t - _integrate(gmm, z_t, t, r, h)) / span


def average_velocity(gmm, z_t, r, t, h=DEFAULT_STEP):
    """u(z_t, r, t) = (z_t - z_r) / (t - r) along the marginal flow; r < t."""
    r_np, t_np = np.asarray(r, dtype=np.float64), np.asarray(t, dtype=np.float64)
    if np.any(r_np >= t_np):
        raise errors.TimeOrderError(float(np.max(r_np)), float(np.min(t_np)))
    if np.any(r_np < 0.0) or np.any(t_np > 1.0):
        raise errors.TimeOrderError(float(np.min(r_np)), float(np.max(t_np)))
    return _average_velocity(gmm, z_t, r, t, h)


@dataclass(frozen=True)
class OracleAvgVelocity:
    """The exact average-velocity field as a u_fn(z, r, t, labels) callable.

    Returns the marginal velocity where r == t (the limit of u).
    """
    gmm: GmmSpec
    h: float = DEFAULT_STEP

    def __post_init__(self):
        if not 0 < self.h <= 1e-3:
            raise ValueError(f"Integration step h should be in (0, 1e-3], was {self.h}.")

    def __call__(self, z, r, t, labels=None):
        z = jnp.asarray(z, dtype=jnp.float64)
        batch_shape = z.shape[:-1]
        r = np.broadcast_to(np.asarray(r, dtype=np.float64), batch_shape)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), batch_shape)
        v = marginal_velocity(self.gmm, z, jnp.asarray(t))
        same = r == t
        if np.all(same):
            return v
        # the diagonal divides 0 by 0 and is replaced by v
        u = _average_velocity(self.gmm, z, r, t, self.h)
        return jnp.where(jnp.asarray(same)[..., None], v, u)


def derivative_along_flow(u_field, gmm, z, r, t, fd_step=1e-4,
                          tangent=(1.0, 0.0, 1.0)):
    """Central difference of u along (a v, b, c) in (z, r, t) coordinates.

    tangent = (1, 0, 1) gives the total derivative du/dt along the flow.
    """
    a, b, c = tangent
    z = jnp.asarray(z, dtype=jnp.float64)
    v = marginal_velocity(gmm, z, t)
    h = fd_step
    plus = u_field(z + h * a * v, np.asarray(r) + h * b, np.asarray(t) + h * c)
    minus = u_field(z - h * a * v, np.asarray(r) - h * b, np.asarray(t) - h * c)
    return (plus - minus) / (2 * h)


def identity_residual(u_field, gmm, z, r, t, fd_step=1e-4,
                      tangent=(1.0, 0.0, 1.0)):
    """||u - (v - (t - r) du/dt)|| per point, du/dt by finite differences.

    `u_field` is called as u_field(z, r, t) and may be an OracleAvgVelocity,
    a network u_fn, or any other field.
    """
    z = jnp.asarray(z, dtype=jnp.float64)
    v = marginal_velocity(gmm, z, t)
    u = u_field(z, r, t)
    du_dt = derivative_along_flow(u_field, gmm, z, r, t, fd_step, tangent)
    span = utils.expand_to(jnp.asarray(np.asarray(t) - np.asarray(r)), z)
    return jnp.linalg.norm(u - (v - span * du_dt), axis=-1)


def network_identity_residual(u_fn, gmm, z, r, t, labels=None):
    """Identity residual of a differentiable field with du/dt from an exact JVP."""
    z = jnp.asarray(z, dtype=jnp.float64)
    batch_shape = z.shape[:-1]
    r = jnp.broadcast_to(jnp.asarray(r, dtype=jnp.float64), batch_shape)
    t = jnp.broadcast_to(jnp.asarray(t, dtype=jnp.float64), batch_shape)
    v = marginal_velocity(gmm, z, t)
    u, du_dt = autodiff.jvp(lambda z_, r_, t_: u_fn(z_, r_, t_, labels),
                            (z, r, t), (v, jnp.zeros_like(r), jnp.ones_like(t)))
    span = utils.expand_to(t - r, z)
    return jnp.linalg.norm(u - (v - span * du_dt), axis=-1)


def additivity_gap(gmm, z_t, r, s, t, h=DEFAULT_STEP):
    """|(t-r) u(z_t,r,t) - [(s-r) u(z_s,r,s) + (t-s) u(z_t,s,t)]| per point."""
    z_t = jnp.asarray(z_t, dtype=jnp.float64)
    z_s = integrate_trajectory(gmm, z_t, t, s, h)
    whole = (t - r) * average_velocity(gmm, z_t, r, t, h)
    parts = ((s - r) * average_velocity(gmm, z_s, r, s, h)
             + (t - s) * average_velocity(gmm, z_t, s, t, h))
    return jnp.linalg.norm(whole - parts, axis=-1)


def lattice(z_values, dim):
    """Cartesian product of z_values over `dim` axes, shape (n^dim, dim)."""
    axes = np.meshgrid(*([np.asarray(z_values, dtype=np.float64)] * dim),
                       indexing='ij')
    return np.stack([a.reshape(-1) for a in axes], axis=-1)


def field_grid(gmm, z_values, r_fractions, t_values, u_fn=None,
               h=DEFAULT_STEP, fd_step=1e-4, tangent=(1.0, 0.0, 1.0)):
    """Evaluates oracle (and optionally network) fields over a (z, r, t) grid.

    r is given as fractions of t in [0, 1]. Returns a DataFrame with columns
    t, r, z_*, u_*, v_*, residual and, with `u_fn`, net_u_*.
    """
    oracle = OracleAvgVelocity(gmm, h)
    z_points = lattice(z_values, gmm.dim)
    frames = []
    for t in t_values:
        for f in r_fractions:
            r = float(f) * float(t)
            u = oracle(z_points, r, t)
            v = marginal_velocity(gmm, z_points, t)
            residual = identity_residual(oracle, gmm, z_points, r, t,
                                         fd_step, tangent)
            frame = {'t': np.full(len(z_points), float(t)),
                     'r': np.full(len(z_points), r)}
            for i in range(gmm.dim):
                frame[f'z_{i}'] = z_points[:, i]
            for i in range(gmm.dim):
                frame[f'u_{i}'] = np.asarray(u)[:, i]
            for i in range(gmm.dim):
                frame[f'v_{i}'] = np.asarray(v)[:, i]
            frame['residual'] = np.asarray(residual)
            if u_fn is not None:
                net_u = np.asarray(u_fn(jnp.asarray(z_points), r, float(t)))
                for i in range(gmm.dim):
                    frame[f'net_u_{i}'] = net_u[:, i]
            frames.append(pd.DataFrame(frame))
    return pd.concat(frames, ignore_index=True)
