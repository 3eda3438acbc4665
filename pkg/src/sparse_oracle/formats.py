"""
Sparse storage formats and conversions.

Every format converts from and back to the canonical :class:`CooMatrix`
(row-major, no duplicate coordinates). The concrete matrices are immutable;
:class:`DynamicMatrix` is the switchable wrapper the tuners operate on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from fractions import Fraction
from typing import Union

import numpy as np

from .errors import InvalidInput, PaddingOverflow

INDEX = np.int64
VALUE = np.float64
ELL_SENTINEL = -1


class FormatId(IntEnum):
    COO = 0
    CSR = 1
    DIA = 2
    ELL = 3
    HYB = 4
    HDC = 5


N_FORMATS = len(FormatId)


def parse_format(token) -> FormatId:
    """Accept a FormatId, its integer value or its (case-insensitive) name."""
    if isinstance(token, FormatId):
        return token
    if isinstance(token, str) and not token.strip().lstrip("-").isdigit():
        try:
            return FormatId[token.strip().upper()]
        except KeyError:
            raise InvalidInput(f"unknown format {token!r}") from None
    try:
        return FormatId(int(token))
    except ValueError:
        raise InvalidInput(f"unknown format id {token!r}") from None


def true_diag_threshold(ratio: float, nrows: int, ncols: int) -> int:
    """Entry count a diagonal needs to count as a "true" diagonal.

    ``ceil(ratio * min(nrows, ncols))``, computed on the decimal value of
    ``ratio`` so that e.g. ``0.2 * 5`` gives exactly 1 and not 2. Never
    below 1.
    """
    if not 0 < ratio <= 1:
        raise InvalidInput(f"true_diag_ratio must lie in (0, 1], got {ratio}")
    exact = Fraction(str(ratio)) * min(nrows, ncols)
    return max(1, math.ceil(exact))


@dataclass(frozen=True)
class ConversionConfig:
    """Knobs for the formats whose layout depends on a parameter.

    Attributes:
        hyb_width: ELL width of HYB. ``None`` means ``ceil(nnz / nrows)``.
        true_diag_ratio: fraction of ``min(nrows, ncols)`` a diagonal must
            fill to be stored in the DIA part of HDC.
        max_padding_factor: padded allocations may hold at most this many
            slots per stored entry.
        max_padded_entries: absolute cap; overrides the factor when set.
    """

    hyb_width: int | None = None
    true_diag_ratio: float = 0.2
    max_padding_factor: float = 10.0
    max_padded_entries: int | None = None

    def padding_cap(self, nnz: int) -> int:
        if self.max_padded_entries is not None:
            return int(self.max_padded_entries)
        return int(math.floor(self.max_padding_factor * nnz))

    def hyb_width_for(self, nnz: int, nrows: int) -> int:
        if self.hyb_width is not None:
            return int(self.hyb_width)
        if nrows == 0:
            return 0
        return -(-nnz // nrows)


DEFAULT_CONFIG = ConversionConfig()


def padded_size(target: FormatId, *, nrows: int, nnz: int, max_row_nnz: int,
                ndiags: int, ntrue_diags: int, config: ConversionConfig = DEFAULT_CONFIG) -> int:
    """Dense slots ``target`` allocates for a matrix with these statistics.

    Zero for COO and CSR, which never pad. ``ntrue_diags`` must have been
    counted with ``config.true_diag_ratio``.
    """
    target = FormatId(target)
    if target == FormatId.DIA:
        return ndiags * nrows
    if target == FormatId.ELL:
        return max_row_nnz * nrows
    if target == FormatId.HYB:
        return config.hyb_width_for(nnz, nrows) * nrows
    if target == FormatId.HDC:
        return ntrue_diags * nrows
    return 0


def _check_cap(fmt, required, nnz, config):
    cap = config.padding_cap(nnz)
    if required > cap:
        raise PaddingOverflow(fmt, required, cap)


def _index_array(a):
    return np.ascontiguousarray(a, dtype=INDEX)


def _value_array(a):
    return np.ascontiguousarray(a, dtype=VALUE)


def _sort_triplets(rows, cols, vals):
    order = np.lexsort((cols, rows))
    return rows[order], cols[order], vals[order]


class _Shaped:
    nrows: int
    ncols: int

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)


@dataclass(frozen=True, eq=False)
class CooMatrix(_Shaped):
    """Coordinate triplets. Use :meth:`from_triplets` to canonicalize raw input."""

    nrows: int
    ncols: int
    row_idx: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    format = FormatId.COO

    def __post_init__(self):
        object.__setattr__(self, "row_idx", _index_array(self.row_idx))
        object.__setattr__(self, "col_idx", _index_array(self.col_idx))
        object.__setattr__(self, "values", _value_array(self.values))
        if not (len(self.row_idx) == len(self.col_idx) == len(self.values)):
            raise InvalidInput("row_idx, col_idx and values must have equal length")
        if self.nrows < 0 or self.ncols < 0:
            raise InvalidInput("dimensions must be non-negative")

    @classmethod
    def from_triplets(cls, nrows, ncols, rows, cols, values) -> CooMatrix:
        """Build a canonical matrix: sorted by (row, col), duplicates summed."""
        rows = _index_array(rows)
        cols = _index_array(cols)
        vals = _value_array(values)
        if not (len(rows) == len(cols) == len(vals)):
            raise InvalidInput("rows, cols and values must have equal length")
        if len(rows) and (rows.min() < 0 or rows.max() >= nrows or cols.min() < 0 or cols.max() >= ncols):
            raise InvalidInput("triplet index out of range")
        rows, cols, vals = _sort_triplets(rows, cols, vals)
        if len(rows) > 1:
            new = np.ones(len(rows), dtype=bool)
            new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            if not new.all():
                starts = np.flatnonzero(new)
                vals = np.add.reduceat(vals, starts)
                rows, cols = rows[starts], cols[starts]
        return cls(int(nrows), int(ncols), rows, cols, vals)

    @classmethod
    def from_dense(cls, dense) -> CooMatrix:
        dense = np.asarray(dense, dtype=VALUE)
        if dense.ndim != 2:
            raise InvalidInput("expected a 2-D array")
        rows, cols = np.nonzero(dense)
        return cls(dense.shape[0], dense.shape[1], rows, cols, dense[rows, cols])

    @classmethod
    def empty(cls, nrows, ncols) -> CooMatrix:
        z = np.zeros(0, dtype=INDEX)
        return cls(nrows, ncols, z, z.copy(), np.zeros(0))

    @property
    def nnz(self) -> int:
        return len(self.values)

    def is_canonical(self) -> bool:
        r, c = self.row_idx, self.col_idx
        if self.nnz == 0:
            return True
        if r.min() < 0 or r.max() >= self.nrows or c.min() < 0 or c.max() >= self.ncols:
            return False
        dr = np.diff(r)
        return bool(np.all((dr > 0) | ((dr == 0) & (np.diff(c) > 0))))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, (self.row_idx, self.col_idx), self.values)
        return out

    def row_counts(self) -> np.ndarray:
        return np.bincount(self.row_idx, minlength=self.nrows)

    def __eq__(self, other):
        if not isinstance(other, CooMatrix):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.row_idx, other.row_idx)
                and np.array_equal(self.col_idx, other.col_idx)
                and np.array_equal(self.values, other.values))

    __hash__ = None

    def __repr__(self):
        return f"CooMatrix({self.nrows}x{self.ncols}, nnz={self.nnz})"


@dataclass(frozen=True, eq=False)
class CsrMatrix(_Shaped):
    nrows: int
    ncols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    format = FormatId.CSR

    def __post_init__(self):
        object.__setattr__(self, "row_ptr", _index_array(self.row_ptr))
        object.__setattr__(self, "col_idx", _index_array(self.col_idx))
        object.__setattr__(self, "values", _value_array(self.values))

    @property
    def nnz(self) -> int:
        return len(self.values)

    def row_counts(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def row_of_entry(self) -> np.ndarray:
        return np.repeat(np.arange(self.nrows, dtype=INDEX), self.row_counts())

    def __repr__(self):
        return f"CsrMatrix({self.nrows}x{self.ncols}, nnz={self.nnz})"


@dataclass(frozen=True, eq=False)
class DiaMatrix(_Shaped):
    """Diagonals stored densely; ``values[d, i]`` is ``A[i, i + offsets[d]]``."""

    nrows: int
    ncols: int
    offsets: np.ndarray
    values: np.ndarray

    format = FormatId.DIA

    def __post_init__(self):
        object.__setattr__(self, "offsets", _index_array(self.offsets))
        vals = _value_array(self.values).reshape(len(self.offsets), self.nrows)
        object.__setattr__(self, "values", vals)

    @property
    def ndiags(self) -> int:
        return len(self.offsets)

    def valid_mask(self) -> np.ndarray:
        """True where ``i + offsets[d]`` is a real column."""
        cols = np.arange(self.nrows, dtype=INDEX)[None, :] + self.offsets[:, None]
        return (cols >= 0) & (cols < self.ncols)

    def stored_mask(self) -> np.ndarray:
        return self.valid_mask() & (self.values != 0)

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.stored_mask()))

    def __repr__(self):
        return f"DiaMatrix({self.nrows}x{self.ncols}, ndiags={self.ndiags})"


@dataclass(frozen=True, eq=False)
class EllMatrix(_Shaped):
    """Fixed-width rows; padding slots hold column ``-1`` and value ``0``."""

    nrows: int
    ncols: int
    entries_per_row: int
    col_idx: np.ndarray
    values: np.ndarray

    format = FormatId.ELL

    def __post_init__(self):
        shape = (self.nrows, self.entries_per_row)
        object.__setattr__(self, "col_idx", _index_array(self.col_idx).reshape(shape))
        object.__setattr__(self, "values", _value_array(self.values).reshape(shape))

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.col_idx != ELL_SENTINEL))

    def row_counts(self) -> np.ndarray:
        return np.count_nonzero(self.col_idx != ELL_SENTINEL, axis=1)

    def __repr__(self):
        return f"EllMatrix({self.nrows}x{self.ncols}, K={self.entries_per_row})"


@dataclass(frozen=True, eq=False)
class HybMatrix(_Shaped):
    ell_part: EllMatrix
    coo_part: CooMatrix

    format = FormatId.HYB

    @property
    def nrows(self) -> int:
        return self.ell_part.nrows

    @property
    def ncols(self) -> int:
        return self.ell_part.ncols

    @property
    def width(self) -> int:
        return self.ell_part.entries_per_row

    @property
    def nnz(self) -> int:
        return self.ell_part.nnz + self.coo_part.nnz

    def __repr__(self):
        return f"HybMatrix({self.nrows}x{self.ncols}, K_H={self.width}, coo nnz={self.coo_part.nnz})"


@dataclass(frozen=True, eq=False)
class HdcMatrix(_Shaped):
    dia_part: DiaMatrix
    csr_part: CsrMatrix
    true_diag_threshold: int

    format = FormatId.HDC

    @property
    def nrows(self) -> int:
        return self.dia_part.nrows

    @property
    def ncols(self) -> int:
        return self.dia_part.ncols

    @property
    def nnz(self) -> int:
        return self.dia_part.nnz + self.csr_part.nnz

    def __repr__(self):
        return (f"HdcMatrix({self.nrows}x{self.ncols}, true diags={self.dia_part.ndiags}, "
                f"csr nnz={self.csr_part.nnz})")


ConcreteMatrix = Union[CooMatrix, CsrMatrix, DiaMatrix, EllMatrix, HybMatrix, HdcMatrix]


# COO -> concrete ----------------------------------------------------------

def _coo_to_csr(src: CooMatrix) -> CsrMatrix:
    counts = np.bincount(src.row_idx, minlength=src.nrows)
    row_ptr = np.zeros(src.nrows + 1, dtype=INDEX)
    np.cumsum(counts, out=row_ptr[1:])
    return CsrMatrix(src.nrows, src.ncols, row_ptr, src.col_idx.copy(), src.values.copy())


def _dia_from_entries(nrows, ncols, rows, cols, vals, offsets):
    data = np.zeros((len(offsets), nrows))
    if len(rows):
        d = np.searchsorted(offsets, cols - rows)
        data[d, rows] = vals
    return DiaMatrix(nrows, ncols, offsets, data)


def _coo_to_dia(src: CooMatrix, config: ConversionConfig) -> DiaMatrix:
    offsets = np.unique(src.col_idx - src.row_idx)
    _check_cap(FormatId.DIA, len(offsets) * src.nrows, src.nnz, config)
    return _dia_from_entries(src.nrows, src.ncols, src.row_idx, src.col_idx, src.values, offsets)


def _position_in_row(rows, nrows):
    counts = np.bincount(rows, minlength=nrows)
    starts = np.zeros(nrows + 1, dtype=INDEX)
    np.cumsum(counts, out=starts[1:])
    return np.arange(len(rows), dtype=INDEX) - starts[rows], counts


def _ell_from_entries(nrows, ncols, width, rows, cols, vals, pos):
    col_idx = np.full((nrows, width), ELL_SENTINEL, dtype=INDEX)
    data = np.zeros((nrows, width))
    col_idx[rows, pos] = cols
    data[rows, pos] = vals
    return EllMatrix(nrows, ncols, width, col_idx, data)


def _coo_to_ell(src: CooMatrix, config: ConversionConfig) -> EllMatrix:
    pos, counts = _position_in_row(src.row_idx, src.nrows)
    width = int(counts.max()) if src.nrows else 0
    _check_cap(FormatId.ELL, width * src.nrows, src.nnz, config)
    return _ell_from_entries(src.nrows, src.ncols, width, src.row_idx, src.col_idx, src.values, pos)


def _coo_to_hyb(src: CooMatrix, config: ConversionConfig) -> HybMatrix:
    width = config.hyb_width_for(src.nnz, src.nrows)
    if width < 0:
        raise InvalidInput("hyb_width must be non-negative")
    _check_cap(FormatId.HYB, width * src.nrows, src.nnz, config)
    pos, _ = _position_in_row(src.row_idx, src.nrows)
    head = pos < width
    ell = _ell_from_entries(src.nrows, src.ncols, width, src.row_idx[head],
                            src.col_idx[head], src.values[head], pos[head])
    tail = ~head
    coo = CooMatrix(src.nrows, src.ncols, src.row_idx[tail], src.col_idx[tail], src.values[tail])
    return HybMatrix(ell, coo)


def _coo_to_hdc(src: CooMatrix, config: ConversionConfig) -> HdcMatrix:
    threshold = true_diag_threshold(config.true_diag_ratio, src.nrows, src.ncols)
    keys = src.col_idx - src.row_idx
    offsets, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    is_true = counts >= threshold
    true_offsets = offsets[is_true]
    _check_cap(FormatId.HDC, len(true_offsets) * src.nrows, src.nnz, config)
    on_true = is_true[inverse] if len(keys) else np.zeros(0, dtype=bool)
    dia = _dia_from_entries(src.nrows, src.ncols, src.row_idx[on_true], src.col_idx[on_true],
                            src.values[on_true], true_offsets)
    rest = ~on_true
    csr = _coo_to_csr(CooMatrix(src.nrows, src.ncols, src.row_idx[rest], src.col_idx[rest],
                                src.values[rest]))
    return HdcMatrix(dia, csr, threshold)


def convert_coo(src: CooMatrix, target: FormatId, config: ConversionConfig | None = None) -> ConcreteMatrix:
    """Convert canonical COO into the concrete matrix for ``target``."""
    config = config or DEFAULT_CONFIG
    if not isinstance(src, CooMatrix):
        raise InvalidInput(f"expected CooMatrix, got {type(src).__name__}")
    if not src.is_canonical():
        raise InvalidInput("source COO is not canonical; build it with CooMatrix.from_triplets")
    target = parse_format(target)
    if target == FormatId.COO:
        return src
    if target == FormatId.CSR:
        return _coo_to_csr(src)
    if target == FormatId.DIA:
        return _coo_to_dia(src, config)
    if target == FormatId.ELL:
        return _coo_to_ell(src, config)
    if target == FormatId.HYB:
        return _coo_to_hyb(src, config)
    return _coo_to_hdc(src, config)


# concrete -> COO ----------------------------------------------------------

def _dia_triplets(m: DiaMatrix):
    mask = m.stored_mask()
    d, rows = np.nonzero(mask)
    cols = rows + m.offsets[d]
    return rows, cols, m.values[d, rows]


def _ell_triplets(m: EllMatrix):
    rows, slots = np.nonzero(m.col_idx != ELL_SENTINEL)
    return rows.astype(INDEX), m.col_idx[rows, slots], m.values[rows, slots]


def _merged(nrows, ncols, parts):
    rows = np.concatenate([p[0] for p in parts]).astype(INDEX)
    cols = np.concatenate([p[1] for p in parts]).astype(INDEX)
    vals = np.concatenate([p[2] for p in parts]).astype(VALUE)
    rows, cols, vals = _sort_triplets(rows, cols, vals)
    return CooMatrix(nrows, ncols, rows, cols, vals)


def concrete_to_coo(m: ConcreteMatrix) -> CooMatrix:
    if isinstance(m, CooMatrix):
        return m
    if isinstance(m, CsrMatrix):
        return CooMatrix(m.nrows, m.ncols, m.row_of_entry(), m.col_idx.copy(), m.values.copy())
    if isinstance(m, DiaMatrix):
        return _merged(m.nrows, m.ncols, [_dia_triplets(m)])
    if isinstance(m, EllMatrix):
        rows, cols, vals = _ell_triplets(m)
        return CooMatrix(m.nrows, m.ncols, rows, cols, vals)
    if isinstance(m, HybMatrix):
        c = m.coo_part
        return _merged(m.nrows, m.ncols, [_ell_triplets(m.ell_part), (c.row_idx, c.col_idx, c.values)])
    if isinstance(m, HdcMatrix):
        c = m.csr_part
        return _merged(m.nrows, m.ncols, [_dia_triplets(m.dia_part), (c.row_of_entry(), c.col_idx, c.values)])
    raise InvalidInput(f"not a sparse matrix: {type(m).__name__}")


class DynamicMatrix:
    """A matrix whose storage format can be switched at runtime.

    The payload is always one immutable concrete matrix. :meth:`switch`
    replaces the payload (the logical content never changes); the module
    level :func:`switch_format` returns a new wrapper instead.
    """

    __slots__ = ("_payload",)

    def __init__(self, payload: ConcreteMatrix):
        if not hasattr(payload, "format"):
            raise InvalidInput(f"not a sparse matrix: {type(payload).__name__}")
        self._payload = payload

    @classmethod
    def from_dense(cls, dense, target=FormatId.COO, config=None) -> DynamicMatrix:
        return from_coo(CooMatrix.from_dense(dense), target, config)

    @property
    def active(self) -> FormatId:
        return self._payload.format

    @property
    def payload(self) -> ConcreteMatrix:
        return self._payload

    @property
    def nrows(self) -> int:
        return self._payload.nrows

    @property
    def ncols(self) -> int:
        return self._payload.ncols

    @property
    def shape(self) -> tuple[int, int]:
        return self._payload.shape

    @property
    def nnz(self) -> int:
        return self._payload.nnz

    def to_coo(self) -> CooMatrix:
        return concrete_to_coo(self._payload)

    def to_dense(self) -> np.ndarray:
        return self.to_coo().to_dense()

    def switch(self, target, config: ConversionConfig | None = None) -> DynamicMatrix:
        """Change the active format in place and return ``self``.

        Raises :class:`PaddingOverflow` and leaves the current format
        untouched when ``target`` is infeasible.
        """
        target = parse_format(target)
        if target != self.active:
            self._payload = convert_coo(self.to_coo(), target, config)
        return self

    def copy(self) -> DynamicMatrix:
        return DynamicMatrix(self._payload)

    def __repr__(self):
        return f"DynamicMatrix(active={self.active.name}, {self._payload!r})"


def from_coo(src: CooMatrix, target=FormatId.COO, config: ConversionConfig | None = None) -> DynamicMatrix:
    return DynamicMatrix(convert_coo(src, target, config))


def to_coo(m: DynamicMatrix | ConcreteMatrix) -> CooMatrix:
    if isinstance(m, DynamicMatrix):
        return m.to_coo()
    return concrete_to_coo(m)


def switch_format(m: DynamicMatrix, target, config: ConversionConfig | None = None) -> DynamicMatrix:
    """Return a new wrapper in ``target`` format; no-op conversion when already active."""
    return m.copy().switch(target, config)
