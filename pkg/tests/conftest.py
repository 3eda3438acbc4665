from __future__ import annotations

import math

import numpy as np
import pytest

from sparse_oracle.formats import CooMatrix

A_DENSE = np.array([[1.0, 0.0, 2.0], [0.0, 3.0, 0.0], [4.0, 0.0, 5.0]])


def coo_of(dense) -> CooMatrix:
    """Canonical COO straight from ``np.nonzero`` (row-major order)."""
    dense = np.asarray(dense, dtype=np.float64)
    r, c = np.nonzero(dense)
    return CooMatrix(dense.shape[0], dense.shape[1], r, c, dense[r, c])


def random_dense(seed: int, count: int, max_dim: int = 64, density=(0.01, 0.3)):
    """Seeded dense matrices, dims 1..max_dim, nonzero values well away from 0."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        m, n = (int(v) for v in rng.integers(1, max_dim + 1, size=2))
        p = rng.uniform(*density)
        mask = rng.random((m, n)) < p
        vals = rng.uniform(0.5, 2.0, (m, n)) * rng.choice([-1.0, 1.0], (m, n))
        out.append(np.where(mask, vals, 0.0))
    return out


def dense_features(D, ratio):
    """Dense-scan feature oracle: visits every cell, no sparse structure."""
    D = np.asarray(D)
    m, n = D.shape
    rows = [0] * m
    diags = {}
    for i in range(m):
        for j in range(n):
            if D[i, j] != 0:
                rows[i] += 1
                diags[j - i] = diags.get(j - i, 0) + 1
    nnz = sum(rows)
    avg = nnz / m
    spread = sum((r - avg) ** 2 for r in rows) / m
    thresh = max(1, math.ceil(round(ratio * min(m, n), 9)))
    ntrue = sum(1 for v in diags.values() if v >= thresh)
    return [m, n, nnz, avg, nnz / (m * n), max(rows), min(rows), spread, len(diags), ntrue]


@pytest.fixture
def A():
    return coo_of(A_DENSE)


@pytest.fixture(scope="session")
def matrices200():
    return random_dense(2024, 200)


def pytest_terminal_summary(terminalreporter):
    from tests import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
