import meanflow  # noqa: F401  (before jax: threading flags and float64)
import jax
import pytest
from jax import numpy as jnp

from meanflow import autodiff
from meanflow import config as config_lib
from meanflow.algorithms import mlp


@pytest.fixture
def rng():
    return autodiff.make_rng(0)


@pytest.fixture
def small_net_config():
    return config_lib.NetworkConfig(input_dim=2, hidden_dim=16, depth=2,
                                    embed_dim=8)


@pytest.fixture
def small_train_config():
    return config_lib.TrainConfig(batch_size=32, iterations=10, log_every=5,
                                  checkpoint_every=5)


def randomize(params, rng, scale=0.5):
    """Replaces every tensor with normal noise so no layer is identically zero."""
    leaves, treedef = jax.tree_util.tree_flatten(params)
    keys = jax.random.split(rng, len(leaves))
    leaves = [scale * jax.random.normal(k, l.shape, dtype=jnp.float64)
              for k, l in zip(keys, leaves)]
    return jax.tree_util.tree_unflatten(treedef, leaves)


@pytest.fixture
def random_params(small_net_config, rng):
    params = mlp.init_params(small_net_config, rng)
    return randomize(params.live, jax.random.fold_in(rng, 1))
