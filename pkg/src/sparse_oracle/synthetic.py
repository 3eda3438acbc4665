"""Seeded generators for test matrices and labelled feature corpora."""

from __future__ import annotations

import numpy as np

from .features import FeatureVector
from .formats import CooMatrix, FormatId
from .trainer import Dataset


def _values(rng, n):
    # magnitudes in [0.5, 2) with random sign: never zero, well scaled
    return rng.uniform(0.5, 2.0, n) * rng.choice([-1.0, 1.0], n)


def random_coo(rng: np.random.Generator, nrows: int, ncols: int, density: float) -> CooMatrix:
    """Uniformly random sparsity pattern with nonzero values."""
    total = nrows * ncols
    nnz = int(rng.binomial(total, min(max(density, 0.0), 1.0))) if total else 0
    flat = np.sort(rng.choice(total, size=nnz, replace=False)) if nnz else np.zeros(0, dtype=np.int64)
    rows, cols = np.divmod(flat, ncols) if ncols else (flat, flat)
    return CooMatrix(nrows, ncols, rows, cols, _values(rng, nnz))


def random_matrices(seed: int, count: int, max_dim: int = 64, density=(0.01, 0.3)):
    """``count`` random matrices with dimensions in ``1..max_dim``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        m, n = rng.integers(1, max_dim + 1, size=2)
        out.append(random_coo(rng, int(m), int(n), float(rng.uniform(*density))))
    return out


def banded_coo(n: int, half_bandwidth: int, rng: np.random.Generator | None = None) -> CooMatrix:
    rng = rng or np.random.default_rng(0)
    rows, cols = [], []
    for off in range(-half_bandwidth, half_bandwidth + 1):
        i = np.arange(max(0, -off), min(n, n - off))
        rows.append(i)
        cols.append(i + off)
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    return CooMatrix.from_triplets(n, n, rows, cols, _values(rng, len(rows)))


def identity_coo(n: int) -> CooMatrix:
    i = np.arange(n)
    return CooMatrix(n, n, i, i, np.ones(n))


def powerlaw_coo(rng: np.random.Generator, n: int, avg_row: float = 4.0) -> CooMatrix:
    """Rows with heavy-tailed populations, many of them empty."""
    weights = rng.pareto(1.2, n) + 1e-3
    counts = np.minimum(n, rng.poisson(avg_row * weights / weights.mean()))
    rows = np.repeat(np.arange(n), counts)
    cols = np.concatenate([rng.choice(n, size=c, replace=False) for c in counts]) if counts.sum() else rows
    return CooMatrix.from_triplets(n, n, rows, cols, _values(rng, len(rows)))


def desk_corpus(seed: int = 0, count: int = 20, size_range=(200, 1500)) -> dict[str, CooMatrix]:
    """A small mixed corpus: banded, uniform random and heavy-tailed matrices."""
    rng = np.random.default_rng(seed)
    out = {}
    for k in range(count):
        n = int(rng.integers(*size_range))
        kind = k % 4
        if kind == 0:
            out[f"band{k:02d}"] = banded_coo(n, int(rng.integers(1, 6)), rng)
        elif kind == 1:
            out[f"rand{k:02d}"] = random_coo(rng, n, n, float(rng.uniform(2, 12)) / n)
        elif kind == 2:
            out[f"pow{k:02d}"] = powerlaw_coo(rng, n)
        else:
            out[f"ident{k:02d}"] = identity_coo(n)
    return out


def _feature(m, n, nnz, row_max, row_min, spread, ndiags, ntrue):
    return FeatureVector(m, n, nnz, nnz / m, nnz / (m * n), row_max, row_min, spread, ndiags, ntrue)


def separable_dataset(seed: int = 0, n_samples: int = 600) -> Dataset:
    """Three cleanly separated classes of plausible feature vectors.

    * DIA: square banded patterns, few diagonals, all of them true.
    * ELL: near-uniform rows (``min >= 3``, tiny spread), many short diagonals.
    * COO: very sparse, ``min == 0``, wide spread, no true diagonals.
    """
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    for i in range(n_samples):
        kind = i % 3
        m = int(rng.integers(500, 20000))
        if kind == 0:
            nd = int(rng.integers(3, 12))
            nnz = int(m * nd * rng.uniform(0.95, 1.0))
            f = _feature(m, m, nnz, nd, max(1, nd - 2), float(rng.uniform(0.0, 0.3)), nd, nd)
            label = FormatId.DIA
        elif kind == 1:
            k = int(rng.integers(4, 30))
            nnz = int(m * (k + rng.uniform(-0.2, 0.2)))
            f = _feature(m, m, nnz, k + 1, k - 1, float(rng.uniform(0.0, 0.5)),
                         int(rng.integers(200, 2 * m - 1)), int(rng.integers(0, 2)))
            label = FormatId.ELL
        else:
            avg = float(rng.uniform(0.05, 1.5))
            nnz = max(1, int(m * avg))
            f = _feature(m, m, nnz, int(rng.integers(20, 400)), 0, float(rng.uniform(5.0, 500.0)),
                         int(rng.integers(200, 2 * m - 1)), 0)
            label = FormatId.COO
        rows.append(f)
        labels.append(int(label))
    ids = [f"syn{i:04d}" for i in range(n_samples)]
    return Dataset.from_features(rows, labels, ids)
