"""Sample-quality metrics and report assembly."""
from typing import NamedTuple

import numpy as np
import pandas as pd
from jax import numpy as jnp
from scipy import stats

from . import errors

MEDIAN = 'median'


class MomentReport(NamedTuple):
    mean_error: float
    cov_error: float


def _as_points(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"Argument {name} should be an (n, d) array, had shape {a.shape}.")
    return a


def _sq_dists(a, b):
    a, b = jnp.asarray(a), jnp.asarray(b)
    d2 = (jnp.sum(a ** 2, axis=1)[:, None] + jnp.sum(b ** 2, axis=1)[None, :]
          - 2.0 * a @ b.T)
    return jnp.maximum(d2, 0.0)


def median_bandwidth(a, b):
    """Median pairwise distance of the pooled set (distinct pairs only)."""
    pooled = np.concatenate([_as_points(a, 'a'), _as_points(b, 'b')])
    d2 = np.asarray(_sq_dists(pooled, pooled))
    upper = np.triu_indices(len(pooled), k=1)
    bandwidth = float(np.median(np.sqrt(d2[upper])))
    if bandwidth <= 0.0:
        raise errors.DegenerateSampleError((
            "Median bandwidth is 0: the pooled samples are (mostly) identical."))
    return bandwidth


def _off_diagonal_mean(k):
    n = k.shape[0]
    return (jnp.sum(k) - jnp.trace(k)) / (n * (n - 1))


def mmd_rbf(a, b, bandwidth=MEDIAN):
    """Unbiased squared MMD with kernel exp(-||x - y||^2 / (2 h^2)).

    For equal sample sizes the cross term also skips the i == j pairs, so
    identical arrays score exactly 0. `bandwidth` is a positive float or
    'median'.
    """
    a, b = _as_points(a, 'a'), _as_points(b, 'b')
    if a.shape[1] != b.shape[1]:
        raise errors.ShapeMismatchError('b', a.shape[1:], b.shape[1:])
    if len(a) < 2 or len(b) < 2:
        raise ValueError(f"mmd_rbf needs at least 2 samples per set, got {len(a)} and {len(b)}.")
    if isinstance(bandwidth, str):
        if bandwidth != MEDIAN:
            raise ValueError(f"Argument bandwidth should be a float or 'median', was {bandwidth}.")
        bandwidth = median_bandwidth(a, b)
    if not bandwidth > 0:
        raise ValueError(f"Argument bandwidth should be > 0, was {bandwidth}.")
    if np.isinf(bandwidth):
        return 0.0

    gamma = 1.0 / (2.0 * bandwidth ** 2)
    k_aa = jnp.exp(-gamma * _sq_dists(a, a))
    k_bb = jnp.exp(-gamma * _sq_dists(b, b))
    k_ab = jnp.exp(-gamma * _sq_dists(a, b))
    if len(a) == len(b):
        cross = _off_diagonal_mean(k_ab) + _off_diagonal_mean(k_ab.T)
    else:
        cross = 2.0 * jnp.mean(k_ab)
    return float(_off_diagonal_mean(k_aa) + _off_diagonal_mean(k_bb) - cross)


def wasserstein_1d(a, b):
    """Empirical W1 of two equal-size 1D samples."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if len(a) != len(b):
        raise ValueError((f"wasserstein_1d needs equal sample counts, "
                          f"got {len(a)} and {len(b)}."))
    if len(a) == 0:
        raise ValueError("wasserstein_1d needs at least one sample.")
    return float(stats.wasserstein_distance(a, b))


def _reference_moments(reference):
    # GmmSpec or Dataset
    if hasattr(reference, 'covariance'):
        return reference.mean(), reference.covariance()
    points = _as_points(reference.points, 'reference')
    return points.mean(axis=0), np.atleast_2d(np.cov(points, rowvar=False))


def moment_report(samples, reference):
    """Euclidean mean error and Frobenius covariance error vs `reference`.

    `reference` is a GmmSpec (analytic moments) or a Dataset (empirical).
    """
    samples = _as_points(samples, 'samples')
    ref_mean, ref_cov = _reference_moments(reference)
    mean = samples.mean(axis=0)
    if len(samples) > 1:
        cov = np.atleast_2d(np.cov(samples, rowvar=False))
    else:
        cov = np.zeros_like(ref_cov)
    return MomentReport(
        mean_error=float(np.linalg.norm(mean - ref_mean)),
        cov_error=float(np.linalg.norm(cov - ref_cov, ord='fro')))


def compute_report(samples_by_name, reference, metrics=('mmd',),
                   bandwidth=MEDIAN):
    """One row per (name, metric) comparing each sample set to `reference`.

    `samples_by_name` maps a label (e.g. '1-NFE') to an (n, d) array.
    `reference` is a Dataset; its `spec` supplies analytic moments if present.
    """
    ref_points = _as_points(reference.points, 'reference')
    rows = []
    for name, samples in samples_by_name.items():
        samples = _as_points(samples, name)
        n = min(len(samples), len(ref_points))
        for metric in metrics:
            if metric == 'mmd':
                rows.append({'name': name, 'metric': 'mmd', 'value': mmd_rbf(
                    samples[:n], ref_points[:n], bandwidth)})
            elif metric == 'w1':
                for i in range(samples.shape[1]):
                    rows.append({'name': name, 'metric': f'w1_{i}',
                                 'value': wasserstein_1d(samples[:n, i],
                                                         ref_points[:n, i])})
            elif metric == 'moments':
                target = reference.spec if reference.spec is not None else reference
                report = moment_report(samples, target)
                rows.append({'name': name, 'metric': 'mean_error',
                             'value': report.mean_error})
                rows.append({'name': name, 'metric': 'cov_error',
                             'value': report.cov_error})
            else:
                raise ValueError((f"Argument metrics should contain mmd, w1 or "
                                  f"moments, had {metric}."))
    return pd.DataFrame(rows, columns=['name', 'metric', 'value'])


def render_report(df):
    """Human-readable table: one column per sample set, one row per metric."""
    if len(df) == 0:
        return "(empty report)"
    table = df.pivot(index='metric', columns='name', values='value')
    return table.to_string(float_format=lambda v: f"{v:.6g}")
