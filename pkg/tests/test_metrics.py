import jax
import numpy as np
import pytest

from meanflow import autodiff
from meanflow import datasets
from meanflow import errors
from meanflow import metrics
from meanflow import oracle


def _normal(seed, n, dim=1, shift=0.0):
    return np.asarray(jax.random.normal(autodiff.make_rng(seed), (n, dim))) + shift


def test_mmd_of_identical_sets_is_zero():
    a = _normal(0, 200, 2)
    assert abs(metrics.mmd_rbf(a, a)) <= 1e-12


def test_mmd_separates_shifted_distributions():
    a = _normal(0, 1000)
    same = metrics.mmd_rbf(a, _normal(1, 1000))
    shifted = metrics.mmd_rbf(a, _normal(1, 1000, shift=1.0))
    assert abs(same) <= 0.01
    assert shifted >= 0.1
    assert shifted > 10 * abs(same)


def test_mmd_fixed_bandwidth_by_hand():
    a = np.array([[0.0], [1.0]])
    b = np.array([[0.0], [2.0], [4.0]])
    e = np.exp
    k_aa = e(-0.5)
    k_bb = (2 * e(-2.0) + e(-8.0)) / 3
    k_ab = (1 + e(-2.0) + e(-8.0) + 2 * e(-0.5) + e(-4.5)) / 6
    assert metrics.mmd_rbf(a, b, bandwidth=1.0) == pytest.approx(k_aa + k_bb - 2 * k_ab,
                                                                  rel=1e-12)


def test_mmd_argument_checks():
    a = _normal(0, 10, 2)
    with pytest.raises(errors.ShapeMismatchError):
        metrics.mmd_rbf(a, _normal(1, 10, 3))
    with pytest.raises(ValueError):
        metrics.mmd_rbf(a[:1], a)
    with pytest.raises(ValueError):
        metrics.mmd_rbf(a, a, bandwidth='mean')
    with pytest.raises(ValueError):
        metrics.mmd_rbf(a, a, bandwidth=0.0)
    assert metrics.mmd_rbf(a, _normal(1, 10, 2), bandwidth=float('inf')) == 0.0


def test_median_bandwidth_of_constant_samples():
    constant = np.zeros((10, 1))
    with pytest.raises(errors.DegenerateSampleError):
        metrics.mmd_rbf(constant, constant)
    assert metrics.median_bandwidth(np.array([[0.0]]), np.array([[3.0]])) == 3.0


def test_wasserstein_1d():
    a = _normal(2, 500)[:, 0]
    assert metrics.wasserstein_1d(a, a + 0.5) == pytest.approx(0.5, rel=1e-12)
    assert metrics.wasserstein_1d(a, a) == 0.0
    with pytest.raises(ValueError):
        metrics.wasserstein_1d(a, a[:10])


def test_moment_report_against_analytic_density():
    report = metrics.moment_report(np.array([[0.0], [2.0]]), oracle.GmmSpec.gaussian(1.0, 2.0))
    assert report.mean_error == pytest.approx(0.0, abs=1e-15)
    assert report.cov_error == pytest.approx(0.0, abs=1e-15)
    report = metrics.moment_report(np.array([[1.0], [1.0]]), oracle.GmmSpec.gaussian(0.0, 0.25))
    assert report.mean_error == pytest.approx(1.0)
    assert report.cov_error == pytest.approx(0.25)


def test_moment_report_against_dataset():
    dataset = datasets.make_gaussian(autodiff.make_rng(0), 1.0, 0.25, 3000, dim=2)
    report = metrics.moment_report(dataset.points, dataset)
    assert report.mean_error == 0.0
    assert report.cov_error == pytest.approx(0.0, abs=1e-15)


def test_compute_report_rows():
    reference = datasets.make_gaussian(autodiff.make_rng(0), 1.0, 0.25, 400, dim=2)
    samples = {'1-NFE': _normal(5, 400, 2, shift=1.0), '2-NFE': reference.points}
    df = metrics.compute_report(samples, reference, metrics=('mmd', 'w1', 'moments'))
    assert list(df.columns) == ['name', 'metric', 'value']
    assert set(df['metric']) == {'mmd', 'w1_0', 'w1_1', 'mean_error', 'cov_error'}
    assert len(df) == 2 * 5
    exact = df[df['name'] == '2-NFE'].set_index('metric')['value']
    assert abs(exact['mmd']) <= 1e-12
    assert exact['w1_0'] == 0.0
    text = metrics.render_report(df)
    assert '1-NFE' in text and 'cov_error' in text
    with pytest.raises(ValueError):
        metrics.compute_report(samples, reference, metrics=('fid',))


def test_wasserstein_of_shifted_gaussians():
    a = _normal(6, 100000)[:, 0]
    b = _normal(7, 100000, shift=1.0)[:, 0]
    assert metrics.wasserstein_1d(a, b) == pytest.approx(1.0, rel=0.02)


def test_mmd_far_apart_sets():
    a = _normal(0, 1000)
    far = metrics.mmd_rbf(a, _normal(1, 1000, shift=5.0))
    assert far > 0.0
    assert far > 10 * abs(metrics.mmd_rbf(a, a))


@pytest.mark.parametrize('n_b', [300, 200])
def test_mmd_is_symmetric(n_b):
    a = _normal(8, 300, 2)
    b = _normal(9, n_b, 2, shift=0.5)
    assert metrics.mmd_rbf(a, b) == pytest.approx(metrics.mmd_rbf(b, a), rel=1e-10, abs=1e-15)


def test_wasserstein_is_a_metric_on_random_triples():
    for seed in range(10):
        a = _normal(3 * seed, 400)[:, 0]
        b = _normal(3 * seed + 1, 400, shift=0.3)[:, 0] * 2.0
        c = _normal(3 * seed + 2, 400, shift=-1.0)[:, 0]
        assert metrics.wasserstein_1d(a, b) == pytest.approx(metrics.wasserstein_1d(b, a),
                                                             rel=1e-12)
        assert (metrics.wasserstein_1d(a, c)
                <= metrics.wasserstein_1d(a, b) + metrics.wasserstein_1d(b, c) + 1e-12)
