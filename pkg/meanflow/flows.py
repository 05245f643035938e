"""Paths, conditional velocities and samplers.

Time runs from t=1 (prior noise) to t=0 (data). `u_fn` arguments are
average-velocity fields called as u_fn(z, r, t, labels); `v_fn` arguments are
instantaneous fields called as v_fn(z, t, labels).
"""
import jax
from jax import numpy as jnp

from . import errors
from . import utils


class LinearSchedule:
    """a(t) = 1 - t, b(t) = t."""
    name = 'linear'

    def a(self, t):
        return 1 - t

    def b(self, t):
        return t

    def da(self, t):
        return -jnp.ones_like(t)

    def db(self, t):
        return jnp.ones_like(t)


SCHEDULES = {'linear': LinearSchedule}
DEFAULT_SCHEDULE = LinearSchedule()


def make_schedule(name):
    if name not in SCHEDULES:
        raise ValueError((f"Argument schedule should be one of "
                          f"{sorted(SCHEDULES)}, was {name}."))
    return SCHEDULES[name]()


def interpolate(x, eps, t, schedule=DEFAULT_SCHEDULE):
    utils.check_same_shape('eps', x, eps)
    t = utils.expand_to(t, x)
    return schedule.a(t) * x + schedule.b(t) * eps


def conditional_velocity(x, eps, t, schedule=DEFAULT_SCHEDULE):
    utils.check_same_shape('eps', x, eps)
    t = utils.expand_to(t, x)
    return schedule.db(t) * eps + schedule.da(t) * x


def one_step_sample(u_fn, eps, labels=None):
    return multi_step_sample(u_fn, eps, [1.0, 0.0], labels)


def uniform_grid(n_steps):
    if n_steps < 1:
        raise errors.GridError(f"Argument n_steps should be >= 1, was {n_steps}.")
    # exact endpoints, descending
    return [1.0 - i / n_steps for i in range(n_steps)] + [0.0]


def check_grid(time_grid):
    grid = [float(s) for s in time_grid]
    if len(grid) < 2 or grid[0] != 1.0 or grid[-1] != 0.0:
        raise errors.GridError(f"Time grid must run from 1 to 0, got {grid}.")
    if any(b >= a for a, b in zip(grid[:-1], grid[1:])):
        raise errors.GridError(f"Time grid must be strictly descending, got {grid}.")
    return grid


def multi_step_sample(u_fn, eps, time_grid, labels=None):
    """Few-step sampling with the average velocity: z_r = z_t - (t - r) u."""
    grid = check_grid(time_grid)
    z = jnp.asarray(eps, dtype=jnp.float64)
    for t, r in zip(grid[:-1], grid[1:]):
        z = z - (t - r) * u_fn(z, r, t, labels)
    return z


def euler_fm_sample(v_fn, eps, n_steps, labels=None, method='euler'):
    """Integrates dz/dt = v from t=1 down to t=0 with a fixed step.

    method: 'euler' (first order) or 'midpoint' (second order).
    """
    if n_steps < 1:
        raise errors.GridError(f"Argument n_steps should be >= 1, was {n_steps}.")
    if method not in ('euler', 'midpoint'):
        raise ValueError((f"Argument method should be 'euler' or 'midpoint', "
                          f"was {method}."))
    dt = 1.0 / n_steps
    z = jnp.asarray(eps, dtype=jnp.float64)
    for i in range(n_steps):
        t = 1.0 - i * dt
        if method == 'euler':
            z = z - dt * v_fn(z, t, labels)
        else:
            z_mid = z - 0.5 * dt * v_fn(z, t, labels)
            z = z - dt * v_fn(z_mid, t - 0.5 * dt, labels)
    return z


def instantaneous_from_average(u_fn):
    """v(z, t) = u(z, t, t): the boundary of an average-velocity field."""
    def v_fn(z, t, labels=None):
        return u_fn(z, t, t, labels)
    return v_fn


def prior_noise(rng, n, dim):
    return jax.random.normal(rng, (n, dim), dtype=jnp.float64)
