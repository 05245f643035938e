"""Synthetic datasets and CSV ingestion.

Every generator takes an explicit `jax.random` key and is deterministic in it.
"""
import csv
import os
from dataclasses import dataclass
from typing import Optional

import jax
import numpy as np
import pandas as pd
from jax import numpy as jnp
from sklearn import datasets as sk_datasets

from . import errors
from . import oracle


@dataclass
class Dataset:
    points: np.ndarray  # (n, d) float64
    labels: Optional[np.ndarray] = None  # (n,) int, in [0, num_classes)
    spec: Optional[oracle.GmmSpec] = None  # set when the density is known
    num_classes: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.points):
                raise ValueError((f"Dataset has {len(self.points)} points but "
                                  f"{len(self.labels)} labels."))
            if self.num_classes == 0 and len(self.labels) > 0:
                self.num_classes = int(self.labels.max()) + 1
            if np.any(self.labels < 0) or np.any(self.labels >= self.num_classes):
                raise ValueError((f"Dataset labels must lie in "
                                  f"[0, {self.num_classes})."))

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]


def make_gmm(rng, gmm, n, labeled=True):
    points, labels = oracle.sample_gmm(rng, gmm, n)
    labels = np.asarray(labels) if labeled else None
    return Dataset(np.asarray(points), labels, spec=gmm,
                   num_classes=gmm.num_components if labeled else 0)


def make_gaussian(rng, mean, var, n, dim=1):
    return make_gmm(rng, oracle.GmmSpec.gaussian(mean, var, dim), n,
                    labeled=False)


def make_point_mass(x0, n, dim=1):
    gmm = oracle.GmmSpec.point_mass(x0, dim)
    return Dataset(np.tile(gmm.means, (n, 1)), spec=gmm)


def make_gmm_ring(rng, k, radius, var, n):
    """k equal-weight Gaussians evenly spaced on a circle; label = component."""
    if k < 1:
        raise ValueError(f"Argument k should be >= 1, was {k}.")
    return make_gmm(rng, oracle.GmmSpec.ring(k, radius, var), n)


def make_moons(rng, n, noise):
    """Two interleaved half circles; label = moon index."""
    seed = int(jax.random.randint(rng, (), 0, 2 ** 31 - 1))
    points, labels = sk_datasets.make_moons(n_samples=n, noise=noise,
                                            random_state=seed)
    return Dataset(points, labels, num_classes=2)


def make_checkerboard(rng, n, noise=0.0):
    """Uniform points on the dark cells of a 4x4 board over [-2, 2]^2.

    Cell (i, j) is valid when i + j is even; label = valid-cell index.
    """
    k_cell, k_pos, k_noise = jax.random.split(rng, 3)
    cells = np.array([(i, j) for i in range(4) for j in range(4)
                      if (i + j) % 2 == 0], dtype=np.float64)
    labels = jax.random.randint(k_cell, (n,), 0, len(cells))
    offset = jax.random.uniform(k_pos, (n, 2), dtype=jnp.float64)
    points = jnp.asarray(cells)[labels] + offset - 2.0
    if noise > 0:
        points = points + noise * jax.random.normal(k_noise, (n, 2),
                                                    dtype=jnp.float64)
    return Dataset(np.asarray(points), np.asarray(labels),
                   num_classes=len(cells))


def checkerboard_cell_valid(points):
    cell = np.floor(np.asarray(points) + 2.0).astype(int)
    inside = np.all((cell >= 0) & (cell < 4), axis=-1)
    return inside & ((cell[:, 0] + cell[:, 1]) % 2 == 0)


def _is_int_literal(text):
    text = text.strip()
    if text.startswith(('-', '+')):
        text = text[1:]
    return text.isdigit()


def load_csv(path):
    """Reads rows of d floats with an optional trailing integer label column.

    A header line is accepted as the first line. The label column is
    recognised when every row's last cell is an integer literal and rows
    have at least two cells.
    """
    rows, line_numbers = [], []
    with open(path, 'r', encoding='utf-8', newline='') as f:
        for line_number, row in enumerate(csv.reader(f), start=1):
            cells = [c.strip() for c in row]
            if len(cells) == 0 or all(c == '' for c in cells):
                continue
            if len(rows) == 0 and line_number == 1 and not _all_numeric(cells):
                continue  # header
            rows.append(cells)
            line_numbers.append(line_number)
    if len(rows) == 0:
        raise errors.DatasetFormatError(1, f"no data rows in {path}")

    width = len(rows[0])
    for cells, line_number in zip(rows, line_numbers):
        if len(cells) != width:
            raise errors.DatasetFormatError(line_number, (
                f"expected {width} fields, saw {len(cells)}"))
        for cell in cells:
            try:
                float(cell)
            except ValueError:
                raise errors.DatasetFormatError(line_number, (
                    f"non-numeric cell '{cell}'"))

    has_labels = width >= 2 and all(_is_int_literal(c[-1]) for c in rows)
    if has_labels:
        points = np.array([[float(c) for c in cells[:-1]] for cells in rows])
        labels = np.array([int(cells[-1]) for cells in rows])
        for label, line_number in zip(labels, line_numbers):
            if label < 0:
                raise errors.DatasetFormatError(line_number, (
                    f"negative label {label}"))
        return Dataset(points, labels)
    return Dataset(np.array([[float(c) for c in cells] for cells in rows]))


def _all_numeric(cells):
    try:
        [float(c) for c in cells]
        return True
    except ValueError:
        return False


def save_csv(dataset, path):
    """Writes a dataset without a header.

    Floats are written as their shortest exact repr, always with a decimal
    point, so coordinates are never mistaken for labels on reload.
    """
    frame = pd.DataFrame(dataset.points)
    if dataset.labels is not None:
        frame['label'] = dataset.labels
    frame.to_csv(path, header=False, index=False,
                 float_format=lambda v: repr(float(v)), lineterminator='\n')


def dataset_from_spec(text, rng, n):
    """Builds a dataset from a short description.

    Accepted forms: 'gaussian:mean=1,var=0.25[,dim=1]', 'point:x0=0.5[,dim=1]',
    'ring:k=8,radius=2,var=0.01', 'moons[:noise=0.05]',
    'checkerboard[:noise=0]', or a path to a CSV file.
    """
    kind, args = parse_spec(text)
    if kind == 'csv':
        return load_csv(args['path'])
    if kind == 'moons':
        return make_moons(rng, n, args.get('noise', 0.05))
    if kind == 'checkerboard':
        return make_checkerboard(rng, n, args.get('noise', 0.0))
    gmm = gmm_from_spec(text)
    if kind == 'point':
        return make_point_mass(float(gmm.means[0, 0]), n, gmm.dim)
    return make_gmm(rng, gmm, n, labeled=(kind == 'ring'))


def parse_spec(text):
    text = text.strip()
    if ':' not in text and os.path.exists(text):
        return 'csv', {'path': text}
    kind, _, rest = text.partition(':')
    kind = kind.strip().lower()
    if kind not in ('gaussian', 'point', 'ring', 'moons', 'checkerboard'):
        if os.path.exists(text):
            return 'csv', {'path': text}
        raise ValueError((f"Data spec should start with gaussian, point, ring, "
                          f"moons or checkerboard (or be a CSV path), was '{text}'."))
    args = {}
    for item in rest.split(','):
        if not item.strip():
            continue
        key, eq, value = item.partition('=')
        if not eq:
            raise ValueError(f"Data spec entry '{item}' should look like key=value.")
        args[key.strip()] = float(value)
    return kind, args


def gmm_from_spec(text):
    """The analytic GmmSpec behind a gaussian/point/ring description."""
    kind, args = parse_spec(text)
    dim = int(args.get('dim', 1))
    if kind == 'gaussian':
        return oracle.GmmSpec.gaussian(args.get('mean', 0.0), args.get('var', 1.0), dim)
    if kind == 'point':
        return oracle.GmmSpec.point_mass(args.get('x0', 0.0), dim)
    if kind == 'ring':
        return oracle.GmmSpec.ring(int(args.get('k', 8)), args.get('radius', 2.0),
                                   args.get('var', 0.01))
    raise ValueError(f"Data spec '{text}' has no closed-form density.")


def dataset_from_config(data_config):
    """Builds the training dataset described by a DataConfig."""
    from .autodiff import make_rng
    rng = make_rng(data_config.seed)
    kind = data_config.kind
    if kind == 'gaussian':
        return make_gaussian(rng, data_config.mean, data_config.var,
                             data_config.n, data_config.dim)
    if kind == 'point_mass':
        return make_point_mass(data_config.x0, data_config.n, data_config.dim)
    if kind == 'gmm_ring':
        return make_gmm_ring(rng, data_config.k, data_config.radius,
                             data_config.var, data_config.n)
    if kind == 'moons':
        return make_moons(rng, data_config.n, data_config.noise)
    if kind == 'checkerboard':
        return make_checkerboard(rng, data_config.n, data_config.noise)
    return load_csv(data_config.path)


def gmm_from_data_config(data_config):
    """The analytic density of a DataConfig, or None for sample-only data."""
    if data_config.kind == 'gaussian':
        return oracle.GmmSpec.gaussian(data_config.mean, data_config.var,
                                       data_config.dim)
    if data_config.kind == 'point_mass':
        return oracle.GmmSpec.point_mass(data_config.x0, data_config.dim)
    if data_config.kind == 'gmm_ring':
        return oracle.GmmSpec.ring(data_config.k, data_config.radius,
                                   data_config.var)
    return None
