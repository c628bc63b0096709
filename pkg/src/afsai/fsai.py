"""Adaptive factored sparse approximate inverse (aFSAI) setup and application.

The factor ``G`` is lower triangular with ``M^{-1} = G^T G``. Each row grows
its pattern from the identity by repeatedly adding the ``s`` positions where
the gradient of the row quadratic form ``psi_i = g_i^T A g_i`` is largest in
magnitude, then re-solving the small dense SPD system on the new pattern.
A final diagonal scaling makes ``diag(G A G^T)`` the identity.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .sparse import (BreakdownError, CsrMatrix, DenseSpdSystem, NonPositivePivotError,
                     pivot_floor, spmv_seq)


class StopReason(enum.IntEnum):
    TOLERANCE_MET = _kernels.STOP_TOLERANCE
    KMAX_REACHED = _kernels.STOP_KMAX
    NO_CANDIDATES = _kernels.STOP_NO_CANDIDATES


class FsaiSetupError(BreakdownError):
    """One or more rows failed; ``failures`` lists ``(row, exception class)``."""

    def __init__(self, failures):
        self.failures = failures
        rows = ", ".join(str(r) for r, _ in failures[:10])
        more = "" if len(failures) <= 10 else f" (+{len(failures) - 10} more)"
        super().__init__(f"aFSAI setup failed on rows {rows}{more}")


@dataclass(frozen=True)
class FsaiParams:
    kmax: int = 10
    s: int = 10
    eps: float = 1e-3
    use_single_precision_setup: bool = False

    def __post_init__(self):
        if self.kmax < 0:
            raise ValueError("kmax must be >= 0")
        if self.s < 1:
            raise ValueError("s must be >= 1")
        if not 0.0 <= self.eps < 1.0:
            raise ValueError("eps must lie in [0, 1)")

    @property
    def dtype(self):
        return np.float32 if self.use_single_precision_setup else np.float64


@dataclass(frozen=True)
class RowPattern:
    """Off-diagonal columns of one factor row (all strictly below ``row``)."""

    row: int
    cols: np.ndarray

    def __post_init__(self):
        cols = np.asarray(self.cols, dtype=np.int64)
        object.__setattr__(self, "cols", cols)
        if cols.size and (np.any(np.diff(cols) <= 0) or cols[0] < 0 or cols[-1] >= self.row):
            raise ValueError(f"pattern of row {self.row} must be sorted, unique and < row")

    def __len__(self):
        return self.cols.size


@dataclass(frozen=True)
class RowPsiTrace:
    row: int
    psi: np.ndarray
    steps_taken: int
    stop_reason: StopReason


@dataclass(eq=False)
class FsaiFactor:
    """Approximate inverse factor for a contiguous range of rows.

    ``g_tilde`` holds the off-diagonal unit-diagonal values, ``g`` the scaled
    factor with explicit diagonal ``d_scale``. For a full setup all matrices
    are square; for a stripe ``rows = (lo, hi)`` they have ``hi - lo`` rows
    (``g_transpose`` correspondingly ``hi - lo`` columns).
    """

    g_tilde: CsrMatrix
    d_scale: np.ndarray
    g: CsrMatrix
    g_transpose: CsrMatrix
    rows: tuple
    psi_history: np.ndarray = field(repr=False)
    steps: np.ndarray = field(repr=False)
    stop_reasons: np.ndarray = field(repr=False)

    @property
    def nnz(self):
        return self.g.nnz

    def trace(self, q):
        """psi trace of local factor row ``q`` (global row ``rows[0] + q``)."""
        k = int(self.steps[q])
        return RowPsiTrace(self.rows[0] + q, self.psi_history[q, :k + 1].copy(), k,
                           StopReason(int(self.stop_reasons[q])))

    def psi_reduction(self):
        """Final over initial psi for every row."""
        last = self.psi_history[np.arange(self.steps.size), self.steps]
        return last / self.psi_history[:, 0]


def _workspace(n):
    return (np.zeros(n, dtype=np.bool_), np.zeros(n, dtype=np.int64))


def _check_row(a, row):
    if not 0 <= row < a.n_rows:
        raise IndexError(f"row {row} outside matrix with {a.n_rows} rows")


def kaporin_gradient_row(a, row, cols, vals):
    """Gradient of psi over candidate columns ``j < row`` outside the pattern.

    ``cols``/``vals`` is the current off-diagonal part of the unit-diagonal
    row. Returns ``(candidate_cols, gradient_values)`` sorted by column.
    Only columns structurally reached through A appear.
    """
    _check_row(a, row)
    pat = RowPattern(row, cols)
    vals = np.asarray(vals, dtype=a.dtype)
    inpat, _ = _workspace(a.n_rows)
    inpat[pat.cols] = True
    gmark = np.full(a.n_rows, -1, dtype=np.int64)
    grad = np.zeros(a.n_rows, dtype=a.dtype)
    touched = np.empty(a.n_rows, dtype=np.int64)
    t = _kernels.kaporin_gradient(a.row_start, a.col_idx, a.values, row, pat.cols,
                                  vals, len(pat), inpat, gmark, 0, grad, touched)
    cand = np.sort(touched[:t])
    return cand, grad[cand]


def select_candidates(cols, vals, s):
    """Up to ``s`` columns of largest ``|vals|``, ties toward the smaller column."""
    if s < 1:
        raise ValueError("s must be >= 1")
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals)
    out = np.empty(s, dtype=np.int64)
    c = _kernels.select_largest(cols, vals, cols.size, s, out)
    return out[:c].copy()


def gather_dense_system(a, row, pattern):
    """Dense ``A[P, P]`` (upper triangle) and ``-A[P, row]`` for the pattern P."""
    _check_row(a, row)
    m = len(pattern)
    inpat, pos = _workspace(a.n_rows)
    inpat[pattern.cols] = True
    pos[pattern.cols] = np.arange(m)
    mat = np.zeros((m, m), dtype=a.dtype)
    rhs = np.zeros(m, dtype=a.dtype)
    _kernels.gather_system(a.row_start, a.col_idx, a.values, row, pattern.cols, m,
                           inpat, pos, mat, rhs)
    return DenseSpdSystem(mat, rhs)


def compute_psi(a, row, pattern, vals):
    """Quadratic form ``g^T A g`` of the unit-diagonal row, valid for any values."""
    _check_row(a, row)
    inpat, pos = _workspace(a.n_rows)
    inpat[pattern.cols] = True
    pos[pattern.cols] = np.arange(len(pattern))
    vals = np.asarray(vals, dtype=a.dtype)
    return float(_kernels.quadratic_form(a.row_start, a.col_idx, a.values, row,
                                         pattern.cols, vals, len(pattern), inpat, pos))


def _run_rows(a, rows, params):
    a_w = a if a.dtype == params.dtype else a.astype(params.dtype)
    n_sel = rows.size
    cap = int(min(params.kmax * params.s, a.n_rows))
    out_cols = np.zeros((n_sel, max(cap, 1)), dtype=np.int64)
    out_vals = np.zeros((n_sel, max(cap, 1)), dtype=a_w.dtype)
    out_len = np.zeros(n_sel, dtype=np.int64)
    hist = np.full((n_sel, params.kmax + 1), np.nan)
    steps = np.zeros(n_sel, dtype=np.int64)
    reason = np.zeros(n_sel, dtype=np.int64)
    status = np.zeros(n_sel, dtype=np.int64)
    d_scale = np.zeros(n_sel, dtype=a_w.dtype)
    _kernels.setup_rows(a_w.row_start, a_w.col_idx, a_w.values, rows, params.kmax,
                        params.s, params.eps, pivot_floor(a_w.dtype), max(cap, 1),
                        out_cols, out_vals, out_len, hist, steps, reason, status,
                        d_scale)
    failures = []
    for q in np.flatnonzero(status):
        kind = BreakdownError if status[q] == _kernels.BREAKDOWN else NonPositivePivotError
        failures.append((int(rows[q]), kind))
    return out_cols, out_vals, out_len, hist, steps, reason, d_scale, failures


def setup_afsai_row(a, row, params):
    """Grow and solve one row. Returns ``(RowPattern, values, RowPsiTrace)``."""
    _check_row(a, row)
    out_cols, out_vals, out_len, hist, steps, reason, _, failures = _run_rows(
        a, np.array([row], dtype=np.int64), params)
    if failures:
        _, kind = failures[0]
        raise kind(f"row {row}: dense system lost positive definiteness")
    m = int(out_len[0])
    k = int(steps[0])
    trace = RowPsiTrace(row, hist[0, :k + 1].copy(), k, StopReason(int(reason[0])))
    return RowPattern(row, out_cols[0, :m].copy()), out_vals[0, :m].copy(), trace


def _assemble(rows, n_cols, out_cols, out_vals, out_len, scale, dtype):
    n_sel = rows.size
    width = out_cols.shape[1] + 1
    cols = np.zeros((n_sel, width), dtype=np.int64)
    vals = np.zeros((n_sel, width), dtype=out_vals.dtype)
    cols[:, :-1] = out_cols
    vals[:, :-1] = out_vals
    idx = np.arange(n_sel)
    cols[idx, out_len] = rows
    vals[idx, out_len] = 1.0
    keep_tilde = np.arange(width)[None, :] < out_len[:, None]
    keep = np.arange(width)[None, :] <= out_len[:, None]
    start = np.zeros(n_sel + 1, dtype=np.int64)
    np.cumsum(out_len, out=start[1:])
    g_tilde = CsrMatrix(n_sel, n_cols, start, cols[keep_tilde],
                        vals[keep_tilde].astype(dtype))
    scaled = (vals * scale[:, None].astype(vals.dtype))
    start = np.zeros(n_sel + 1, dtype=np.int64)
    np.cumsum(out_len + 1, out=start[1:])
    g = CsrMatrix(n_sel, n_cols, start, cols[keep], scaled[keep].astype(dtype))
    return g_tilde, g


def diagonal_scale(a, patterns, values):
    """Scale unit-diagonal rows so that ``diag(G A G^T) = I``.

    ``patterns``/``values`` cover every row of ``a`` in order. The stored
    ``d_scale[i]`` is ``1 / sqrt(g_i^T A g_i)``.
    """
    n = a.n_rows
    if len(patterns) != n or len(values) != n:
        raise ValueError("one pattern and value vector per row is required")
    d = np.empty(n, dtype=a.dtype)
    for p, v in zip(patterns, values):
        qf = compute_psi(a, p.row, p, v)
        if not qf > 0.0:
            raise NonPositivePivotError(f"row {p.row}: quadratic form {qf} is not positive")
        d[p.row] = 1.0 / np.sqrt(qf)
    width = max([len(p) for p in patterns] + [1])
    out_cols = np.zeros((n, width), dtype=np.int64)
    out_vals = np.zeros((n, width), dtype=a.dtype)
    out_len = np.array([len(p) for p in patterns], dtype=np.int64)
    for p, v in zip(patterns, values):
        out_cols[p.row, :len(p)] = p.cols
        out_vals[p.row, :len(p)] = v
    rows = np.arange(n, dtype=np.int64)
    g_tilde, g = _assemble(rows, n, out_cols, out_vals, out_len, d, np.float64)
    return FsaiFactor(g_tilde, d.astype(np.float64), g, g.transpose(), (0, n),
                      np.full((n, 1), np.nan), np.zeros(n, dtype=np.int64),
                      np.zeros(n, dtype=np.int64))


def setup_afsai(a, params=None, rows=None, debug=False):
    """Compute the aFSAI factor for rows ``rows = (lo, hi)`` (default: all).

    Rows are processed independently. With ``use_single_precision_setup`` the
    whole computation runs on a 32-bit copy of ``a`` and the resulting
    factor is cast back to 64-bit. Factor columns use the numbering of ``a``.
    """
    params = params or FsaiParams()
    if a.n_rows != a.n_cols:
        raise ValueError("aFSAI needs a square matrix")
    lo, hi = rows if rows is not None else (0, a.n_rows)
    sel = np.arange(lo, hi, dtype=np.int64)
    out_cols, out_vals, out_len, hist, steps, reason, d_scale, failures = _run_rows(
        a, sel, params)
    if failures:
        raise FsaiSetupError(failures)
    g_tilde, g = _assemble(sel, a.n_cols, out_cols, out_vals, out_len, d_scale,
                           np.float64)
    factor = FsaiFactor(g_tilde, d_scale.astype(np.float64), g, g.transpose(), (lo, hi),
                        hist, steps, reason)
    if debug:
        _cross_check_psi(a, factor)
    return factor


def _cross_check_psi(a, factor, rtol=1e-12):
    a64 = a.astype(np.float64)
    for q in range(factor.g_tilde.n_rows):
        cols, vals = factor.g_tilde.row(q)
        row = factor.rows[0] + q
        full = compute_psi(a64, row, RowPattern(row, cols), vals)
        cheap = factor.psi_history[q, factor.steps[q]]
        if abs(full - cheap) > rtol * abs(full) * (1e5 if a.dtype == np.float32 else 1):
            raise AssertionError(f"row {row}: psi identity {cheap} != quadratic form {full}")


def apply_preconditioner(factor, r):
    """``G^T (G r)`` by two sparse products."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (factor.g.n_cols,):
        raise ValueError(f"dimension mismatch: factor has {factor.g.n_cols} columns, "
                         f"vector has shape {r.shape}")
    return spmv_seq(factor.g_transpose, spmv_seq(factor.g, r))
