from typing import NamedTuple

import jax
from jax import numpy as jnp


class TimePair(NamedTuple):
    r: float
    t: float


def _draw(rng, config, shape):
    if config.sampler == 'uniform':
        return jax.random.uniform(rng, shape, dtype=jnp.float64)
    normal = jax.random.normal(rng, shape, dtype=jnp.float64)
    return jax.nn.sigmoid(config.sampler_mu + config.sampler_sigma * normal)


def order_pair(a, b):
    """Assigns the larger value to t and the smaller to r."""
    return jnp.minimum(a, b), jnp.maximum(a, b)


def sample_time_pairs(rng, config, n):
    """Draws n (r, t) pairs with 0 <= r <= t <= 1.

    Two independent draws per element are ordered, then each element is
    independently collapsed to r = t with probability 1 - ratio_r_neq_t.
    """
    k_draw, k_mask = jax.random.split(rng)
    samples = _draw(k_draw, config, (2, n))
    r, t = order_pair(samples[0], samples[1])
    keep = jax.random.bernoulli(k_mask, config.ratio_r_neq_t, (n,))
    r = jnp.where(keep, r, t)
    return r, t


def sample_time_pair(rng, config):
    r, t = sample_time_pairs(rng, config, 1)
    return TimePair(float(r[0]), float(t[0]))
