"""
Sparse matrix-vector multiply for every format, serial and threaded.

The kernels are numba functions compiled with ``nogil`` so the threaded
variant gets real parallelism from a plain thread pool. Every kernel works
on a half-open range (rows, or entries for COO) and *adds* into ``y``; the
drivers below decide how ranges map to threads.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .errors import DimensionMismatch, InvalidInput
from .formats import (CooMatrix, CsrMatrix, DiaMatrix, DynamicMatrix, EllMatrix, FormatId,
                      HdcMatrix, HybMatrix)

_jit = numba.njit(nogil=True, cache=True)


@_jit
def _coo_kernel(rows, cols, vals, x, y, lo, hi):
    for k in range(lo, hi):
        y[rows[k]] += vals[k] * x[cols[k]]


@_jit
def _csr_kernel(row_ptr, cols, vals, x, y, lo, hi):
    for i in range(lo, hi):
        s = 0.0
        for k in range(row_ptr[i], row_ptr[i + 1]):
            s += vals[k] * x[cols[k]]
        y[i] += s


@_jit
def _dia_kernel(offsets, data, ncols, x, y, lo, hi):
    # diagonals outer, rows inner; cells outside the column range are
    # clipped per diagonal, stored zero padding is multiplied through
    for d in range(offsets.shape[0]):
        off = offsets[d]
        start = max(lo, -off)
        stop = min(hi, ncols - off)
        for i in range(start, stop):
            y[i] += data[d, i] * x[i + off]


@_jit
def _ell_kernel(cols, vals, x, y, lo, hi):
    width = cols.shape[1]
    for i in range(lo, hi):
        s = 0.0
        for k in range(width):
            c = cols[i, k]
            if c < 0:
                break
            s += vals[i, k] * x[c]
        y[i] += s


def _check_vector(m, x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != m.ncols:
        raise DimensionMismatch(f"vector of length {x.shape} does not match {m.ncols} columns")
    return x


def _payload(m):
    return m.payload if isinstance(m, DynamicMatrix) else m


def _apply_rows(p, x, y, lo, hi):
    """Row-ranged part of the multiply (everything except COO payloads)."""
    if isinstance(p, CsrMatrix):
        _csr_kernel(p.row_ptr, p.col_idx, p.values, x, y, lo, hi)
    elif isinstance(p, DiaMatrix):
        _dia_kernel(p.offsets, p.values, p.ncols, x, y, lo, hi)
    elif isinstance(p, EllMatrix):
        _ell_kernel(p.col_idx, p.values, x, y, lo, hi)
    elif isinstance(p, HybMatrix):
        _apply_rows(p.ell_part, x, y, lo, hi)
    elif isinstance(p, HdcMatrix):
        _apply_rows(p.dia_part, x, y, lo, hi)
        _apply_rows(p.csr_part, x, y, lo, hi)


def _coo_of(p):
    if isinstance(p, CooMatrix):
        return p
    if isinstance(p, HybMatrix):
        return p.coo_part
    return None


def spmv(m, x) -> np.ndarray:
    """Return ``A @ x`` using the kernel of the active format."""
    p = _payload(m)
    x = _check_vector(p, x)
    y = np.zeros(p.nrows)
    _apply_rows(p, x, y, 0, p.nrows)
    coo = _coo_of(p)
    if coo is not None:
        _coo_kernel(coo.row_idx, coo.col_idx, coo.values, x, y, 0, coo.nnz)
    return y


_pools: dict[int, ThreadPoolExecutor] = {}
_pools_lock = threading.Lock()


def _pool(nthreads):
    with _pools_lock:
        pool = _pools.get(nthreads)
        if pool is None:
            pool = ThreadPoolExecutor(max_workers=nthreads, thread_name_prefix="spmv")
            _pools[nthreads] = pool
        return pool


def _blocks(n, nthreads):
    edges = [(t * n) // nthreads for t in range(nthreads + 1)]
    return list(zip(edges[:-1], edges[1:]))


def spmv_parallel(m, x, nthreads: int) -> np.ndarray:
    """Threaded ``A @ x``.

    Rows are split into ``nthreads`` contiguous blocks, each written by one
    thread. COO entries (the COO format and the COO part of HYB) are split
    into blocks accumulated into per-thread buffers and summed at the end.
    ``nthreads == 1`` runs the serial path and is bit-identical to it.
    """
    if int(nthreads) < 1:
        raise InvalidInput("nthreads must be >= 1")
    nthreads = int(nthreads)
    if nthreads == 1:
        return spmv(m, x)
    p = _payload(m)
    x = _check_vector(p, x)
    y = np.zeros(p.nrows)
    pool = _pool(nthreads)
    if not isinstance(p, CooMatrix):
        jobs = [pool.submit(_apply_rows, p, x, y, lo, hi) for lo, hi in _blocks(p.nrows, nthreads)]
        for job in jobs:
            job.result()
    coo = _coo_of(p)
    if coo is not None and coo.nnz:
        buffers = np.zeros((nthreads, p.nrows))
        jobs = [pool.submit(_coo_kernel, coo.row_idx, coo.col_idx, coo.values, x, buffers[t], lo, hi)
                for t, (lo, hi) in enumerate(_blocks(coo.nnz, nthreads))]
        for job in jobs:
            job.result()
        for t in range(nthreads):
            y += buffers[t]
    return y


@dataclass(frozen=True)
class TimingSample:
    format: FormatId
    repetitions: int
    total_seconds: float
    per_rep_seconds: np.ndarray | None = None

    @property
    def mean_seconds(self) -> float:
        return self.total_seconds / self.repetitions

    @property
    def median_seconds(self) -> float:
        if self.per_rep_seconds is None:
            return self.mean_seconds
        return float(np.median(self.per_rep_seconds))


def time_spmv(m, x, repetitions: int, nthreads: int = 1, record_distribution: bool = True) -> TimingSample:
    """Time ``repetitions`` multiplies after one untimed warm-up.

    Uses :func:`time.perf_counter`; ``total_seconds`` covers the timed loop
    only.
    """
    repetitions = int(repetitions)
    if repetitions < 1:
        raise InvalidInput("repetitions must be >= 1")
    p = _payload(m)
    run = spmv if nthreads == 1 else (lambda mat, vec: spmv_parallel(mat, vec, nthreads))
    run(p, x)
    x = _check_vector(p, x)
    clock = time.perf_counter
    if record_distribution:
        per_rep = np.empty(repetitions)
        for r in range(repetitions):
            t0 = clock()
            run(p, x)
            per_rep[r] = clock() - t0
        total = float(per_rep.sum())
    else:
        per_rep = None
        t0 = clock()
        for _ in range(repetitions):
            run(p, x)
        total = clock() - t0
    return TimingSample(p.format, repetitions, total, per_rep)
