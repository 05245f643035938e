import dataclasses
import os

import jax
import numpy as np
import pandas as pd

from . import autodiff
from . import checkpoint
from . import config as config_lib
from . import errors
from . import flows
from . import metrics
from . import utils
from .algorithms import mlp

FLAG = "[MEANFLOW]"
METRIC_COLUMNS = ['iteration', 'weighted_loss', 'raw_sq_error', 'fraction_r_eq_t']


class Trainer:
    def __init__(self, run_config, dataset, params=None, out_dir=None,
                 verbose=False):
        """Create a Trainer.
        Arguments:
        - run_config: (RunConfig) network and training settings. The `data`
            and `eval` sections are only echoed into checkpoints.
        - dataset: (Dataset) training points, with labels for a
            class-conditional network.
        - params: (NetworkParams) optional: starting weights. Defaults to a
            fresh initialization from `training.seed`.
        - out_dir: (str) optional: directory receiving `checkpoint.mfck`,
            `metrics.csv` (appended) and `config.ini`. Nothing is written
            when None.
        - verbose: (bool) print one line every `log_every` iterations.
        """
        self.run_config = run_config
        self.net_config = run_config.network
        self.train_config = run_config.training
        self.dataset = dataset
        self.out_dir = out_dir
        self.verbose = verbose
        if self.verbose:
            self.print = utils.flagged_print(FLAG)
        else:
            self.print = utils.no_op

        if dataset.dim != self.net_config.input_dim:
            raise errors.ConfigError('input_dim', (
                f"network expects {self.net_config.input_dim} dimensions, "
                f"dataset has {dataset.dim}"))
        if self.net_config.num_classes > 0:
            if dataset.labels is None:
                raise errors.ConfigError('num_classes', (
                    "is > 0 but the dataset has no labels"))
            if dataset.num_classes > self.net_config.num_classes:
                raise errors.ConfigError('num_classes', (
                    f"is {self.net_config.num_classes} but the dataset has "
                    f"{dataset.num_classes} classes"))

        self.init_fn, self.train_step_fn, self.eval_fn = mlp.make_algorithm(
            self.net_config, self.train_config)
        self.state = self.init_fn(self.train_config.seed)
        if params is not None:
            tx = mlp.make_optimizer(self.train_config)
            self.state = mlp.TrainState(step=0, params=params,
                                        opt_state=tx.init(params.live))
        self.rows = []
        self._pending = []

        if self.out_dir is not None:
            os.makedirs(self.out_dir, exist_ok=True)
            with open(self.config_path, 'w', encoding='utf-8') as f:
                f.write(config_lib.format_run_config(self.run_config))

    @property
    def checkpoint_path(self):
        return os.path.join(self.out_dir, 'checkpoint.mfck')

    @property
    def metrics_path(self):
        return os.path.join(self.out_dir, 'metrics.csv')

    @property
    def config_path(self):
        return os.path.join(self.out_dir, 'config.ini')

    def fit(self, iterations=None):
        """Runs `iterations` training steps (default: the configured number).

        Returns the metrics DataFrame. Raises DivergenceError on a non-finite
        loss; the checkpoint on disk then still holds the last good weights.
        """
        if iterations is None:
            iterations = self.train_config.iterations
        rng = autodiff.make_rng(self.train_config.seed)
        # keep the stream reproducible when fit is called repeatedly
        rng = jax.random.fold_in(rng, int(self.state.step))
        log_every = self.train_config.log_every
        checkpoint_every = self.train_config.checkpoint_every

        for _ in range(iterations):
            rng, k_batch, k_step = jax.random.split(rng, 3)
            batch = self._sample_batch(k_batch)
            state, breakdown = self.train_step_fn(self.state, batch, k_step)
            iteration = int(state.step)
            loss = float(breakdown.weighted_loss)
            if not np.isfinite(loss):
                self.print("diverged", iteration=iteration, loss=loss)
                self._flush()
                if self.out_dir is not None:
                    self.save()
                raise errors.DivergenceError(iteration, loss)
            self.state = state

            if iteration % log_every == 0 or iteration == 1:
                self._record(iteration, breakdown)
            if self.out_dir is not None and iteration % checkpoint_every == 0:
                self.save()

        if iterations > 0 and self.rows[-1]['iteration'] != int(self.state.step):
            self._record(int(self.state.step), breakdown)
        if self.out_dir is not None:
            self.save()
        self._flush()
        return self.to_dataframe()

    def save(self, path=None):
        path = path or self.checkpoint_path
        checkpoint.save(path, self.run_config, self.state.params)

    def u_fn(self, use_ema=True):
        params = self.state.params.ema if use_ema else self.state.params.live
        return mlp.make_u_fn(self.net_config, params)

    def to_dataframe(self):
        """Return the metrics recorded so far."""
        return pd.DataFrame(self.rows, columns=METRIC_COLUMNS)

    # Private methods

    def _sample_batch(self, rng):
        xs, labels = utils.sample_batch(rng, self.dataset,
                                        self.train_config.batch_size)
        if self.net_config.num_classes == 0:
            labels = None
        return xs, labels

    def _record(self, iteration, breakdown):
        row = {
            'iteration': iteration,
            'weighted_loss': float(breakdown.weighted_loss),
            'raw_sq_error': float(np.mean(breakdown.raw_sq_error)),
            'fraction_r_eq_t': float(breakdown.fraction_r_eq_t),
        }
        self.print(**row)
        self.rows.append(row)
        self._pending.append(row)

    def _flush(self):
        if self.out_dir is None or len(self._pending) == 0:
            return
        exists = os.path.exists(self.metrics_path)
        pd.DataFrame(self._pending, columns=METRIC_COLUMNS).to_csv(
            self.metrics_path, mode='a', header=not exists, index=False,
            float_format='%.17g', lineterminator='\n')
        self._pending = []


def train(run_config, dataset, params=None, out_dir=None, verbose=False):
    """Trains a MeanFlow network and returns (TrainState, metrics DataFrame)."""
    trainer = Trainer(run_config, dataset, params=params, out_dir=out_dir,
                      verbose=verbose)
    df = trainer.fit()
    return trainer.state, df


def generate(u_fn, rng, n, dim, steps=1, labels=None):
    """Draws n samples from prior noise with `steps` uniform average-velocity steps."""
    eps = flows.prior_noise(rng, n, dim)
    if steps == 1:
        return flows.one_step_sample(u_fn, eps, labels)
    return flows.multi_step_sample(u_fn, eps, flows.uniform_grid(steps), labels)


def generate_baseline(u_fn, rng, n, dim, steps=100, labels=None, method='euler'):
    """Flow Matching baseline: integrates v(z, t) = u(z, t, t) with `steps` steps."""
    eps = flows.prior_noise(rng, n, dim)
    return flows.euler_fm_sample(flows.instantaneous_from_average(u_fn), eps,
                                 steps, labels, method)


def _replace_field(run_config, axis, value):
    section, _, key = axis.rpartition('.')
    section = section or 'training'
    if section not in config_lib.SECTIONS:
        raise errors.ConfigError(axis, f"section should be one of {sorted(config_lib.SECTIONS)}")
    sub = getattr(run_config, section)
    if key not in {f.name for f in dataclasses.fields(sub)}:
        raise errors.ConfigError(key, f"is not a known key of [{section}]")
    return dataclasses.replace(run_config, **{
        section: dataclasses.replace(sub, **{key: value})})


def sweep(base_config, axis, values, dataset, n_eval=2000, verbose=False):
    """Trains one model per value of `axis` and scores its 1-NFE samples.

    Arguments:
    - base_config: (RunConfig) shared settings.
    - axis: (str) the field to vary, e.g. 'ratio_r_neq_t' or
        'network.time_cond_mode'. Bare names refer to [training].
    - values: (list) settings of `axis`.
    - dataset: (Dataset) training data, also the evaluation reference.
    - n_eval: (int) samples drawn per model for MMD and W1.
    Returns: a DataFrame with one row per value: final_loss, mmd and w1 (mean
        over dimensions).
    """
    printer = utils.flagged_print(FLAG) if verbose else utils.no_op
    rows = []
    for value in values:
        run_config = _replace_field(base_config, axis, value)
        state, df = train(run_config, dataset)
        u_fn = mlp.make_u_fn(run_config.network, state.params.ema)
        rng = autodiff.make_rng(run_config.eval.seed)
        n = min(n_eval, len(dataset))
        samples = np.asarray(generate(u_fn, rng, n, dataset.dim))
        reference = dataset.points[:n]
        row = {
            'axis': axis,
            'value': value,
            'final_loss': float(df['weighted_loss'].iloc[-1]),
            'mmd': metrics.mmd_rbf(samples, reference),
            'w1': float(np.mean([metrics.wasserstein_1d(samples[:, i], reference[:, i])
                                 for i in range(dataset.dim)])),
        }
        printer(**row)
        rows.append(row)
    return pd.DataFrame(rows)


def render_field(df, value='u_0', save_path=None):
    """Render, and optionally save, a heatmap of an exported field grid.

    Arguments:
    - df: (pd.DataFrame) a grid as returned by `oracle.field_grid`.
    - value: (str) the column to color by, e.g. 'u_0', 'net_u_0' or
        'residual'.
    - save_path: (str) optional: a path ending in .html or .json.
    Returns: an Altair chart faceted by t. 1D grids plot z against r; 2D
        grids plot z_0 against z_1 with one row per r.
    """
    import altair as alt
    from . import altair_theme  # noqa: F401
    alt.data_transformers.disable_max_rows()

    if value not in df:
        raise ValueError(f"Argument value should be a column of df, was {value}.")
    color = alt.Color(f'{value}:Q', title=value,
                      scale=alt.Scale(scheme='redblue', domainMid=0))
    base = alt.Chart(df).mark_rect()
    if 'z_1' in df:
        chart = base.encode(
            x=alt.X('z_0:O', title='z_0', axis=alt.Axis(format='.2f')),
            y=alt.Y('z_1:O', title='z_1', sort='descending',
                    axis=alt.Axis(format='.2f')),
            color=color,
        ).facet(column=alt.Column('t:O', title='t'),
                row=alt.Row('r:O', title='r'))
    else:
        chart = base.encode(
            x=alt.X('z_0:O', title='z', axis=alt.Axis(format='.2f')),
            y=alt.Y('r:O', title='r', sort='descending',
                    axis=alt.Axis(format='.2f')),
            color=color,
            tooltip=['z_0', 'r', 't', value],
        ).facet(column=alt.Column('t:O', title='t'))
    if save_path is not None:
        chart.save(save_path)
    return chart
