import dataclasses
import os

import jax
import numpy as np
import pandas as pd
import pytest
from jax import numpy as jnp

from meanflow import api
from meanflow import autodiff
from meanflow import checkpoint
from meanflow import config as config_lib
from meanflow import datasets
from meanflow import errors
from meanflow import timesteps
from meanflow.algorithms import common
from meanflow.algorithms import mlp
from conftest import randomize


@pytest.mark.parametrize('sampler', ['uniform', 'lognorm'])
@pytest.mark.parametrize('ratio', [0.0, 0.25, 0.75, 1.0])
def test_time_pairs_ratio_and_order(sampler, ratio):
    train_config = config_lib.TrainConfig(sampler=sampler, ratio_r_neq_t=ratio)
    r, t = timesteps.sample_time_pairs(autodiff.make_rng(0), train_config, 20000)
    r, t = np.asarray(r), np.asarray(t)
    assert np.all(r <= t)
    assert np.all((r >= 0) & (t <= 1))
    assert abs(np.mean(r != t) - ratio) <= 0.02


def test_lognorm_times_strictly_inside_unit_interval():
    train_config = config_lib.TrainConfig(sampler='lognorm', sampler_mu=-0.4,
                                          sampler_sigma=1.0, ratio_r_neq_t=1.0)
    r, t = timesteps.sample_time_pairs(autodiff.make_rng(1), train_config, 5000)
    assert np.all((np.asarray(r) > 0) & (np.asarray(t) < 1))
    # the median of sigmoid(N(mu, s)) is sigmoid(mu); the max of two draws sits above it
    assert np.median(np.asarray(t)) > float(jax.nn.sigmoid(-0.4))


def test_sample_time_pair_is_deterministic():
    train_config = config_lib.TrainConfig()
    a = timesteps.sample_time_pair(autodiff.make_rng(5), train_config)
    b = timesteps.sample_time_pair(autodiff.make_rng(5), train_config)
    assert a == b
    assert 0.0 <= a.r <= a.t <= 1.0


def test_meanflow_target():
    v = jnp.array([[1.0, 2.0], [3.0, -1.0]])
    du_dt = jnp.array([[0.5, -1.0], [4.0, 2.0]])
    r = jnp.array([0.2, 0.7])
    t = jnp.array([0.6, 0.7])
    target = common.meanflow_target(v, du_dt, r, t)
    np.testing.assert_allclose(target[0], [0.8, 2.4], rtol=1e-15)
    # r = t reduces to the instantaneous velocity
    np.testing.assert_array_equal(target[1], v[1])
    with pytest.raises(errors.ShapeMismatchError):
        common.meanflow_target(v, du_dt[:, :1], r, t)


def test_meanflow_target_is_gradient_stopped():
    def f(scale):
        v = scale * jnp.ones((1, 1))
        return jnp.sum(common.meanflow_target(v, v, 0.0, 1.0))
    assert float(jax.grad(f)(2.0)) == 0.0


def test_adaptive_weight():
    delta = jnp.array([[1.0, 0.0], [0.0, jnp.sqrt(3.0)]])
    np.testing.assert_array_equal(common.adaptive_weight(delta, 0.0, 1e-3), 1.0)
    np.testing.assert_allclose(common.adaptive_weight(delta[:1], 1.0, 1e-3),
                               [1.0 / 1.001], rtol=1e-15)
    np.testing.assert_allclose(common.adaptive_weight(delta[1:], 0.5, 1.0),
                               [0.5], rtol=1e-15)


def test_cfg_field_identity_without_guidance():
    key_a, key_b, key_c = jax.random.split(autodiff.make_rng(2), 3)
    v = jax.random.normal(key_a, (5, 2), dtype=jnp.float64)
    u_uncond = jax.random.normal(key_b, (5, 2), dtype=jnp.float64)
    u_cond = jax.random.normal(key_c, (5, 2), dtype=jnp.float64)
    np.testing.assert_array_equal(
        common.cfg_velocity_tilde(v, u_uncond, u_cond, 1.0, 0.0), v)
    np.testing.assert_allclose(
        common.cfg_velocity_tilde(v, u_uncond, u_cond, 2.0, 0.0),
        2.0 * v - u_uncond, rtol=1e-14, atol=1e-14)


def test_cfg_mixing_shares_fixed_point_with_its_effective_scale():
    key_a, key_b = jax.random.split(autodiff.make_rng(3))
    v = jax.random.normal(key_a, (5, 2), dtype=jnp.float64)
    u_uncond = jax.random.normal(key_b, (5, 2), dtype=jnp.float64)
    mixed = config_lib.TrainConfig(omega=0.2, kappa=0.9)
    plain = config_lib.TrainConfig(omega=2.0, kappa=0.0)
    assert mixed.effective_scale == pytest.approx(2.0, rel=1e-12)
    # the converged guided field: omega' v + (1 - omega') u_uncond
    fixed_point = 2.0 * v - u_uncond
    for train_config in (mixed, plain):
        np.testing.assert_allclose(
            common.cfg_velocity_tilde(v, u_uncond, fixed_point,
                                      train_config.omega, train_config.kappa),
            fixed_point, rtol=1e-12, atol=1e-12)


def test_train_config_validation():
    with pytest.raises(errors.ConfigError) as info:
        config_lib.TrainConfig(kappa=1.0)
    assert info.value.key == 'kappa'
    with pytest.raises(errors.ConfigError):
        config_lib.TrainConfig(ratio_r_neq_t=1.5)
    with pytest.raises(errors.ConfigError):
        config_lib.TrainConfig(cfg_t_interval=(0.8, 0.2))
    with pytest.raises(errors.ConfigError):
        config_lib.TrainConfig(jvp_tangent=(1.0, 0.0))
    with pytest.raises(errors.ConfigError):
        config_lib.TrainConfig(c=0.0)


def _apply_fn(net_config):
    model = mlp.VelocityMLP.from_config(net_config)

    def apply_fn(params, z, r, t, labels):
        return model.apply({'params': params}, z, r, t, labels)
    return apply_fn


def _gaussian_batch(n=64, dim=2):
    return jax.random.normal(autodiff.make_rng(9), (n, dim), dtype=jnp.float64) + 1.0


def test_zero_ratio_reduces_to_flow_matching(small_net_config, random_params):
    train_config = config_lib.TrainConfig(ratio_r_neq_t=0.0, p=1.0)
    apply_fn = _apply_fn(small_net_config)
    batch = (_gaussian_batch(), None)
    rng = autodiff.make_rng(4)

    breakdown, grads = common.training_step(apply_fn, random_params, batch, rng,
                                            train_config, 0)
    tb = common.prepare_batch(rng, batch, train_config, 0)
    np.testing.assert_array_equal(tb.r, tb.t)

    def fm_loss(params):
        delta = apply_fn(params, tb.z, tb.t, tb.t, tb.net_labels) - tb.v
        w = common.adaptive_weight(delta, train_config.p, train_config.c)
        return jnp.mean(w * jnp.sum(delta ** 2, axis=-1))

    fm_value, fm_grads = jax.value_and_grad(fm_loss)(random_params)
    np.testing.assert_array_equal(breakdown.weighted_loss, fm_value)
    for got, want in zip(jax.tree_util.tree_leaves(grads),
                         jax.tree_util.tree_leaves(fm_grads)):
        np.testing.assert_array_equal(got, want)
    assert float(breakdown.fraction_r_eq_t) == 1.0


def test_first_loss_of_zero_initialized_network(small_net_config, small_train_config):
    init_fn, _, eval_fn = mlp.make_algorithm(small_net_config, small_train_config)
    state = init_fn(0)
    batch = (_gaussian_batch(), None)
    rng = autodiff.make_rng(6)
    breakdown = eval_fn(state, batch, rng)

    tb = common.prepare_batch(rng, batch, small_train_config, 0)
    sq = jnp.sum(tb.v ** 2, axis=-1)
    expected = jnp.mean(sq / (sq + small_train_config.c) ** small_train_config.p)
    np.testing.assert_allclose(breakdown.weighted_loss, expected, rtol=1e-12)


def test_zero_power_equals_unweighted_mean(small_net_config, random_params):
    train_config = config_lib.TrainConfig(p=0.0)
    breakdown, _ = common.training_step(_apply_fn(small_net_config), random_params,
                                        (_gaussian_batch(), None),
                                        autodiff.make_rng(7), train_config, 0)
    np.testing.assert_array_equal(breakdown.weight, 1.0)
    np.testing.assert_allclose(breakdown.weighted_loss,
                               jnp.mean(breakdown.raw_sq_error), rtol=1e-15)


def test_train_step_is_deterministic(small_net_config, small_train_config):
    init_fn, train_step_fn, _ = mlp.make_algorithm(small_net_config, small_train_config)
    batch = (_gaussian_batch(), None)
    a, loss_a = train_step_fn(init_fn(0), batch, autodiff.make_rng(8))
    b, loss_b = train_step_fn(init_fn(0), batch, autodiff.make_rng(8))
    np.testing.assert_array_equal(loss_a.weighted_loss, loss_b.weighted_loss)
    for x, y in zip(jax.tree_util.tree_leaves(a.params),
                    jax.tree_util.tree_leaves(b.params)):
        np.testing.assert_array_equal(x, y)


def test_zero_learning_rate_leaves_parameters(small_net_config):
    train_config = config_lib.TrainConfig(lr=0.0)
    init_fn, train_step_fn, _ = mlp.make_algorithm(small_net_config, train_config)
    state = init_fn(0)
    new_state, _ = train_step_fn(state, (_gaussian_batch(), None), autodiff.make_rng(1))
    for x, y in zip(jax.tree_util.tree_leaves(state.params.live),
                    jax.tree_util.tree_leaves(new_state.params.live)):
        np.testing.assert_array_equal(x, y)
    for x, y in zip(jax.tree_util.tree_leaves(state.params.ema),
                    jax.tree_util.tree_leaves(new_state.params.ema)):
        np.testing.assert_allclose(x, y, rtol=1e-14, atol=1e-300)


def test_cfg_outside_interval_uses_plain_velocity(rng):
    net_config = config_lib.NetworkConfig(input_dim=2, hidden_dim=16, depth=2,
                                          embed_dim=8, num_classes=3)
    params = randomize(mlp.init_params(net_config, rng).live, rng)
    xs = _gaussian_batch(32)
    labels = jnp.arange(32) % 3
    step_rng = autodiff.make_rng(12)
    # lognorm times are never exactly 0, so the interval [0, 0] never activates
    gated = config_lib.TrainConfig(cfg=True, omega=3.0, cfg_t_interval=(0.0, 0.0))
    plain = config_lib.TrainConfig(cfg=False)
    apply_fn = _apply_fn(net_config)
    a, _ = common.training_step(apply_fn, params, (xs, labels), step_rng, gated, 3)
    b, _ = common.training_step(apply_fn, params, (xs, labels), step_rng, plain, 3)
    np.testing.assert_array_equal(a.weighted_loss, b.weighted_loss)

    guided = config_lib.TrainConfig(cfg=True, omega=3.0)
    c, _ = common.training_step(apply_fn, params, (xs, labels), step_rng, guided, 3)
    assert float(c.weighted_loss) != float(b.weighted_loss)


def test_unit_guidance_matches_no_guidance(rng):
    net_config = config_lib.NetworkConfig(input_dim=2, hidden_dim=16, depth=2,
                                          embed_dim=8, num_classes=2)
    params = randomize(mlp.init_params(net_config, rng).live, rng)
    batch = (_gaussian_batch(16), jnp.arange(16) % 2)
    apply_fn = _apply_fn(net_config)
    unit = config_lib.TrainConfig(cfg=True, omega=1.0, kappa=0.0)
    off = config_lib.TrainConfig(cfg=False)
    a, grads_a = common.training_step(apply_fn, params, batch, autodiff.make_rng(3), unit, 2)
    b, grads_b = common.training_step(apply_fn, params, batch, autodiff.make_rng(3), off, 2)
    np.testing.assert_array_equal(a.weighted_loss, b.weighted_loss)
    for x, y in zip(jax.tree_util.tree_leaves(grads_a),
                    jax.tree_util.tree_leaves(grads_b)):
        np.testing.assert_array_equal(x, y)


def test_class_drop_probability(rng):
    train_config = config_lib.TrainConfig(class_drop_prob=0.1)
    labels = jnp.zeros(20000, dtype=jnp.int32)
    tb = common.prepare_batch(rng, (jnp.zeros((20000, 1)), labels), train_config, 4)
    assert abs(float(jnp.mean(tb.dropped)) - 0.1) <= 0.01
    np.testing.assert_array_equal(tb.net_labels[tb.dropped], 4)
    np.testing.assert_array_equal(tb.labels, 0)


def _run_config(iterations=10, **training):
    return config_lib.RunConfig(
        network=config_lib.NetworkConfig(input_dim=1, hidden_dim=16, depth=2,
                                         embed_dim=8),
        training=config_lib.TrainConfig(iterations=iterations, batch_size=32,
                                        log_every=5, checkpoint_every=5,
                                        **training),
    )


def test_trainer_records_and_writes(tmp_path):
    dataset = datasets.make_gaussian(autodiff.make_rng(0), 1.0, 0.25, 500)
    out_dir = str(tmp_path / 'run')
    trainer = api.Trainer(_run_config(12), dataset, out_dir=out_dir)
    df = trainer.fit()
    assert list(df['iteration']) == [1, 5, 10, 12]
    assert int(trainer.state.step) == 12
    assert os.path.exists(trainer.checkpoint_path)
    assert os.path.exists(trainer.config_path)
    on_disk = pd.read_csv(trainer.metrics_path, float_precision='round_trip')
    assert list(on_disk.columns) == api.METRIC_COLUMNS
    np.testing.assert_array_equal(on_disk['weighted_loss'], df['weighted_loss'])


def test_training_is_reproducible():
    dataset = datasets.make_gaussian(autodiff.make_rng(0), 1.0, 0.25, 500)
    _, a = api.train(_run_config(6), dataset)
    _, b = api.train(_run_config(6), dataset)
    pd.testing.assert_frame_equal(a, b, check_exact=True)


def test_trainer_rejects_mismatched_data():
    dataset = datasets.make_gaussian(autodiff.make_rng(0), 1.0, 0.25, 100, dim=2)
    with pytest.raises(errors.ConfigError) as info:
        api.Trainer(_run_config(), dataset)
    assert info.value.key == 'input_dim'

    ring = datasets.make_gmm_ring(autodiff.make_rng(0), 4, 2.0, 0.05, 100)
    run_config = _run_config()
    run_config = dataclasses.replace(run_config, network=dataclasses.replace(
        run_config.network, input_dim=2, num_classes=2))
    with pytest.raises(errors.ConfigError) as info:
        api.Trainer(run_config, ring)
    assert info.value.key == 'num_classes'


def test_divergence_raises():
    dataset = datasets.make_gaussian(autodiff.make_rng(0), 1.0, 0.25, 100)
    trainer = api.Trainer(_run_config(20, lr=1e200, p=0.0), dataset)
    with pytest.raises(errors.DivergenceError) as info:
        trainer.fit()
    assert info.value.iteration >= 2
    assert not np.isfinite(info.value.loss)


def test_divergence_leaves_last_good_checkpoint(tmp_path):
    dataset = datasets.make_gaussian(autodiff.make_rng(0), 1.0, 0.25, 100)
    run_config = _run_config(20, lr=1e200, p=0.0)
    run_config = dataclasses.replace(run_config, training=dataclasses.replace(
        run_config.training, checkpoint_every=1000))
    trainer = api.Trainer(run_config, dataset, out_dir=str(tmp_path / 'run'))
    with pytest.raises(errors.DivergenceError) as info:
        trainer.fit()
    assert info.value.iteration < 1000
    assert int(trainer.state.step) == info.value.iteration - 1
    saved = checkpoint.load(trainer.checkpoint_path)
    for x, y in zip(jax.tree_util.tree_leaves(saved.params.live),
                    jax.tree_util.tree_leaves(trainer.state.params.live)):
        np.testing.assert_array_equal(x, y)


def test_sweep_returns_one_row_per_value():
    dataset = datasets.make_gaussian(autodiff.make_rng(0), 1.0, 0.25, 300)
    df = api.sweep(_run_config(3), 'ratio_r_neq_t', [0.0, 0.5], dataset, n_eval=100)
    assert list(df['value']) == [0.0, 0.5]
    assert set(df.columns) >= {'axis', 'value', 'final_loss', 'mmd', 'w1'}
    assert np.all(np.isfinite(df[['final_loss', 'mmd', 'w1']].to_numpy()))
    with pytest.raises(errors.ConfigError):
        api.sweep(_run_config(3), 'ration', [0.0], dataset)


def test_gradient_matches_frozen_target_two_pass(small_net_config, random_params):
    """The target and weight enter the loss as constants."""
    train_config = config_lib.TrainConfig(ratio_r_neq_t=0.75, p=1.0)
    apply_fn = _apply_fn(small_net_config)
    batch = (_gaussian_batch(), None)
    rng = autodiff.make_rng(13)
    _, grads = common.training_step(apply_fn, random_params, batch, rng, train_config, 0)

    # pass 1: evaluate the target at the current weights and freeze it
    tb = common.prepare_batch(rng, batch, train_config, 0)
    u, du_dt = jax.jvp(lambda z, r, t: apply_fn(random_params, z, r, t, tb.net_labels),
                       (tb.z, tb.r, tb.t), (tb.v, jnp.zeros_like(tb.r), jnp.ones_like(tb.t)))
    u_tgt = np.asarray(tb.v - (tb.t - tb.r)[:, None] * du_dt)
    sq = np.sum((np.asarray(u) - u_tgt) ** 2, axis=-1)
    weight = 1.0 / (sq + train_config.c) ** train_config.p

    # pass 2: a plain weighted regression onto fixed numbers
    def frozen_loss(params):
        delta = apply_fn(params, tb.z, tb.r, tb.t, tb.net_labels) - u_tgt
        return jnp.mean(weight * jnp.sum(delta ** 2, axis=-1))

    expected = jax.grad(frozen_loss)(random_params)
    for got, want in zip(jax.tree_util.tree_leaves(grads),
                         jax.tree_util.tree_leaves(expected)):
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)
