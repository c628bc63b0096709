"""Sequential sparse kernels and the dense SPD solver reused by the setup."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from . import _kernels

PIVOT_FLOOR = {np.dtype(np.float64): 1e-30, np.dtype(np.float32): 1e-20}
DENSE_DIAG_LIMIT = 2000


class BreakdownError(ArithmeticError):
    """A Cholesky pivot fell below the floor: the system is not numerically SPD."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class NonPositivePivotError(BreakdownError):
    """The scaling denominator of a factor row is not positive."""


def pivot_floor(dtype):
    return PIVOT_FLOOR[np.dtype(dtype)]


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Compressed sparse row matrix with sorted, unique column indices.

    ``row_start`` has ``n_rows + 1`` entries; row ``i`` occupies the half-open
    range ``row_start[i]:row_start[i+1]`` of ``col_idx`` and ``values``.
    """

    n_rows: int
    n_cols: int
    row_start: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rs, ci, va = self.row_start, self.col_idx, self.values
        if rs.shape != (self.n_rows + 1,):
            raise ValueError("row_start must have n_rows + 1 entries")
        if rs[0] != 0 or rs[-1] != ci.shape[0] or ci.shape != va.shape:
            raise ValueError("row_start does not match col_idx/values lengths")
        if np.any(np.diff(rs) < 0):
            raise ValueError("row_start must be non-decreasing")
        if ci.size:
            if ci.min() < 0 or ci.max() >= self.n_cols:
                raise ValueError("column index out of range")
            step = np.diff(ci)
            row_heads = np.zeros(ci.size, dtype=bool)
            row_heads[rs[:-1][np.diff(rs) > 0]] = True
            if np.any((step <= 0) & ~row_heads[1:]):
                raise ValueError("column indices must be strictly increasing within a row")

    @classmethod
    def from_scipy(cls, mat, dtype=np.float64):
        m = sps.csr_matrix(mat, dtype=dtype, copy=True)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1],
                   m.indptr.astype(np.int64), m.indices.astype(np.int64),
                   m.data.astype(dtype))

    @classmethod
    def from_dense(cls, arr, dtype=np.float64):
        arr = np.asarray(arr, dtype=dtype)
        return cls.from_scipy(sps.csr_matrix(arr), dtype=dtype)

    @classmethod
    def empty(cls, n_rows, n_cols, dtype=np.float64):
        return cls(n_rows, n_cols, np.zeros(n_rows + 1, dtype=np.int64),
                   np.zeros(0, dtype=np.int64), np.zeros(0, dtype=dtype))

    @classmethod
    def identity(cls, n, dtype=np.float64):
        return cls(n, n, np.arange(n + 1, dtype=np.int64),
                   np.arange(n, dtype=np.int64), np.ones(n, dtype=dtype))

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return int(self.row_start[-1])

    @property
    def dtype(self):
        return self.values.dtype

    def to_scipy(self):
        return sps.csr_matrix((self.values, self.col_idx, self.row_start),
                              shape=self.shape)

    def toarray(self):
        return self.to_scipy().toarray()

    def astype(self, dtype):
        return CsrMatrix(self.n_rows, self.n_cols, self.row_start,
                         self.col_idx, self.values.astype(dtype))

    def transpose(self):
        return CsrMatrix.from_scipy(self.to_scipy().T, dtype=self.dtype)

    def submatrix(self, rows, cols):
        """Rows ``rows[0]:rows[1]`` and columns ``cols[0]:cols[1]`` renumbered from 0."""
        sub = self.to_scipy()[rows[0]:rows[1], cols[0]:cols[1]]
        return CsrMatrix.from_scipy(sub, dtype=self.dtype)

    def diagonal(self):
        return self.to_scipy().diagonal()

    def row(self, i):
        lo, hi = self.row_start[i], self.row_start[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]

    def is_symmetric(self):
        if self.n_rows != self.n_cols:
            return False
        t = self.transpose()
        return (np.array_equal(self.row_start, t.row_start)
                and np.array_equal(self.col_idx, t.col_idx)
                and np.array_equal(self.values, t.values))

    def equals(self, other):
        """Exact structural and numerical equality."""
        return (self.shape == other.shape
                and np.array_equal(self.row_start, other.row_start)
                and np.array_equal(self.col_idx, other.col_idx)
                and np.array_equal(self.values, other.values))


@dataclass
class DenseSpdSystem:
    """Dense SPD system; only the upper triangle of ``matrix`` is referenced."""

    matrix: np.ndarray
    rhs: np.ndarray

    @property
    def dim(self):
        return self.rhs.shape[0]


def spmv_seq(a, x):
    """y = A x, each row summed in ascending column order."""
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != a.n_cols:
        raise ValueError(f"dimension mismatch: matrix has {a.n_cols} columns, "
                         f"vector has length {x.shape[0]}")
    out = np.zeros(a.n_rows, dtype=np.result_type(a.dtype, x.dtype))
    _kernels.csr_accumulate(a.row_start, a.col_idx, a.values, x, out,
                            np.arange(a.n_rows, dtype=np.int64))
    return out


def cholesky_solve_spd(system, floor=None):
    """Solve a dense SPD system by Cholesky; raises BreakdownError on a bad pivot."""
    mat = np.array(system.matrix, dtype=np.result_type(system.matrix, np.float32))
    rhs = np.asarray(system.rhs, dtype=mat.dtype)
    m = rhs.shape[0]
    if mat.shape != (m, m):
        raise ValueError("matrix and rhs dimensions disagree")
    if floor is None:
        floor = pivot_floor(mat.dtype)
    out = np.empty(m, dtype=mat.dtype)
    bad = _kernels.cholesky_solve_upper(mat, rhs, m, floor, out)
    if bad >= 0:
        raise BreakdownError(f"non-positive Cholesky pivot at position {bad}", pivot=bad)
    return out


def kaporin_number_dense(a, limit=DENSE_DIAG_LIMIT):
    """(tr(A)/n) / det(A)^(1/n) through a dense Cholesky log-determinant."""
    n = a.shape[0]
    if n > limit:
        raise ValueError(f"dense Kaporin diagnostic limited to {limit} rows, got {n}")
    dense = a.toarray() if isinstance(a, CsrMatrix) else np.asarray(a, dtype=np.float64)
    try:
        chol = np.linalg.cholesky(dense)
    except np.linalg.LinAlgError as exc:
        raise BreakdownError("matrix is not SPD") from exc
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(np.trace(dense) / n / np.exp(logdet / n))
