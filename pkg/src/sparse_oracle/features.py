"""
Structural features of a sparse matrix, read straight from its active format.

Row statistics and diagonal statistics each take one pass over the stored
entries, whatever the format. :class:`TraversalCounter` records how many
entries a call touched so that bound can be checked.
"""

from __future__ import annotations

import contextvars
from dataclasses import astuple, dataclass, fields

import numpy as np

from .errors import EmptyMatrix
from .formats import (ELL_SENTINEL, CooMatrix, CsrMatrix, DiaMatrix, DynamicMatrix, EllMatrix,
                      HdcMatrix, HybMatrix, true_diag_threshold)

FEATURE_NAMES = ("M", "N", "NNZ", "avg_nnz", "density", "max_nnz", "min_nnz",
                 "nnz_spread", "ndiags", "ntrue_diags")
N_FEATURES = len(FEATURE_NAMES)
DEFAULT_TRUE_DIAG_RATIO = 0.2


@dataclass(frozen=True)
class FeatureVector:
    """The ten features, in model-file order.

    ``nnz_row_spread`` is the population variance of the per-row counts
    (``sum((nnz_i - avg)**2) / M``), not its square root.
    """

    m: int
    n: int
    nnz: int
    avg_nnz_per_row: float
    density: float
    max_nnz_per_row: int
    min_nnz_per_row: int
    nnz_row_spread: float
    ndiags: int
    ntrue_diags: int

    def to_row(self) -> np.ndarray:
        return features_to_row(self)


_INT_FIELDS = {f.name for f in fields(FeatureVector) if f.type == "int"}


def features_to_row(f: FeatureVector) -> np.ndarray:
    return np.array(astuple(f), dtype=np.float64)


def row_to_features(row) -> FeatureVector:
    row = list(row)
    if len(row) != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} values, got {len(row)}")
    values = [int(v) if f.name in _INT_FIELDS else float(v) for f, v in zip(fields(FeatureVector), row)]
    return FeatureVector(*values)


class TraversalCounter:
    """Context manager tallying entry visits made by :func:`extract_features`.

    ``entry_visits`` counts stored nonzeros read; ``structure_reads`` counts
    pointer, offset and padding slots read alongside them.
    """

    def __init__(self):
        self.entry_visits = 0
        self.structure_reads = 0
        self._token = None

    def __enter__(self):
        self._token = _active_counter.set(self)
        return self

    def __exit__(self, *exc):
        _active_counter.reset(self._token)


_active_counter: contextvars.ContextVar[TraversalCounter | None] = contextvars.ContextVar(
    "sparse_oracle_traversal_counter", default=None)


def _visit(entries=0, structure=0):
    counter = _active_counter.get()
    if counter is not None:
        counter.entry_visits += int(entries)
        counter.structure_reads += int(structure)


# Each helper returns (row counts, entries-per-diagonal keyed by col - row).

def _diag_hist(keys, nrows, ncols):
    return np.bincount(keys + (nrows - 1), minlength=nrows + ncols - 1)


def _coo_stats(p: CooMatrix):
    _visit(entries=p.nnz)
    rows = np.bincount(p.row_idx, minlength=p.nrows)
    _visit(entries=p.nnz)
    diags = _diag_hist(p.col_idx - p.row_idx, p.nrows, p.ncols)
    return rows, diags


def _csr_stats(p: CsrMatrix):
    _visit(structure=p.nrows + 1)
    rows = np.diff(p.row_ptr)
    _visit(entries=p.nnz)
    diags = _diag_hist(p.col_idx - p.row_of_entry(), p.nrows, p.ncols)
    return rows, diags


def _dia_stats(p: DiaMatrix):
    stored = p.stored_mask()
    n_stored = int(np.count_nonzero(stored))
    _visit(entries=n_stored, structure=stored.size - n_stored + p.ndiags)
    rows = np.count_nonzero(stored, axis=0)
    diags = np.zeros(p.nrows + p.ncols - 1, dtype=np.int64)
    diags[p.offsets + (p.nrows - 1)] = np.count_nonzero(stored, axis=1)
    return rows, diags


def _ell_stats(p: EllMatrix):
    real = p.col_idx != ELL_SENTINEL
    n_real = int(np.count_nonzero(real))
    _visit(entries=n_real, structure=real.size - n_real)
    rows = np.count_nonzero(real, axis=1)
    r, k = np.nonzero(real)
    _visit(entries=n_real)
    diags = _diag_hist(p.col_idx[r, k] - r, p.nrows, p.ncols)
    return rows, diags


def _hyb_stats(p: HybMatrix):
    r1, d1 = _ell_stats(p.ell_part)
    r2, d2 = _coo_stats(p.coo_part)
    return r1 + r2, d1 + d2


def _hdc_stats(p: HdcMatrix):
    r1, d1 = _dia_stats(p.dia_part)
    r2, d2 = _csr_stats(p.csr_part)
    return r1 + r2, d1 + d2


_STATS = {CooMatrix: _coo_stats, CsrMatrix: _csr_stats, DiaMatrix: _dia_stats,
          EllMatrix: _ell_stats, HybMatrix: _hyb_stats, HdcMatrix: _hdc_stats}


def extract_features(m, true_diag_ratio: float = DEFAULT_TRUE_DIAG_RATIO) -> FeatureVector:
    """Compute the feature vector of ``m`` from its active format.

    A diagonal counts toward ``ndiags`` when it holds at least one entry and
    toward ``ntrue_diags`` when it holds at least
    ``ceil(true_diag_ratio * min(M, N))`` entries.
    """
    p = m.payload if isinstance(m, DynamicMatrix) else m
    nrows, ncols = p.shape
    if nrows < 1 or ncols < 1:
        raise EmptyMatrix(f"cannot extract features of a {nrows}x{ncols} matrix")
    threshold = true_diag_threshold(true_diag_ratio, nrows, ncols)
    row_counts, diag_counts = _STATS[type(p)](p)

    nnz = int(row_counts.sum())
    avg = nnz / nrows
    dev = row_counts - avg
    spread = float(np.dot(dev, dev)) / nrows
    return FeatureVector(
        m=nrows,
        n=ncols,
        nnz=nnz,
        avg_nnz_per_row=avg,
        density=nnz / (nrows * ncols),
        max_nnz_per_row=int(row_counts.max()),
        min_nnz_per_row=int(row_counts.min()),
        nnz_row_spread=spread,
        ndiags=int(np.count_nonzero(diag_counts)),
        ntrue_diags=int(np.count_nonzero(diag_counts >= threshold)),
    )
