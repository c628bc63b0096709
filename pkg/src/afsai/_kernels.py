"""Compiled inner loops shared by the sequential and distributed code paths.

Every kernel takes raw CSR arrays so that one compiled specialization serves
both the 64-bit and the 32-bit setup. Status codes are returned instead of
raising, the Python wrappers translate them into exceptions.
"""

import numpy as np
from numba import njit

OK = 0
BREAKDOWN = 1
NONPOSITIVE_DIAGONAL = 2

STOP_TOLERANCE = 0
STOP_KMAX = 1
STOP_NO_CANDIDATES = 2


@njit(cache=True, nogil=True)
def csr_accumulate(indptr, indices, data, x, out, rows):
    # out[r] += a[r, j] * x[j] one entry at a time, ascending j; callers rely
    # on this to chain block products into the same per-row running sum
    for k in range(rows.shape[0]):
        r = rows[k]
        acc = out[r]
        for p in range(indptr[r], indptr[r + 1]):
            acc += data[p] * x[indices[p]]
        out[r] = acc


@njit(cache=True, nogil=True)
def cholesky_solve_upper(mat, rhs, m, floor, out):
    """Factor the upper triangle of ``mat[:m, :m]`` in place and solve.

    Returns the index of the failing pivot or -1 on success.
    """
    for k in range(m):
        piv = mat[k, k]
        if not piv > floor:
            return k
        u = np.sqrt(piv)
        mat[k, k] = u
        for j in range(k + 1, m):
            mat[k, j] /= u
        for i in range(k + 1, m):
            f = mat[k, i]
            if f != 0.0:
                for j in range(i, m):
                    mat[i, j] -= f * mat[k, j]
    for k in range(m):
        out[k] = rhs[k]
    # U^T y = rhs
    for k in range(m):
        yk = out[k] / mat[k, k]
        out[k] = yk
        for j in range(k + 1, m):
            out[j] -= mat[k, j] * yk
    # U x = y
    for i in range(m - 1, -1, -1):
        acc = out[i]
        for j in range(i + 1, m):
            acc -= mat[i, j] * out[j]
        out[i] = acc / mat[i, i]
    return -1


@njit(cache=True, nogil=True)
def diagonal_entry(indptr, indices, data, i):
    lo = indptr[i]
    hi = indptr[i + 1]
    p = lo + np.searchsorted(indices[lo:hi], i)
    if p < hi and indices[p] == i:
        return data[p]
    return data.dtype.type(0.0)


@njit(cache=True, nogil=True)
def kaporin_gradient(indptr, indices, data, i, pcols, pvals, m,
                     inpat, gmark, stamp, grad, touched):
    """Accumulate 0.5 * grad psi_i over columns j < i, j outside the pattern.

    Rows of A are visited for r in pattern (ascending) and then r = i with
    weight one. Returns the number of touched columns written to ``touched``.
    """
    t = 0
    for q in range(m + 1):
        if q < m:
            r = pcols[q]
            w = pvals[q]
        else:
            r = i
            w = data.dtype.type(1.0)
        for p in range(indptr[r], indptr[r + 1]):
            j = indices[p]
            if j >= i:
                break
            if inpat[j]:
                continue
            if gmark[j] != stamp:
                gmark[j] = stamp
                grad[j] = data[p] * w
                touched[t] = j
                t += 1
            else:
                grad[j] += data[p] * w
    for q in range(t):
        j = touched[q]
        grad[j] = 2.0 * grad[j]
    return t


@njit(cache=True, nogil=True)
def select_largest(cols, vals, t, s, out):
    """Pick up to ``s`` entries of largest magnitude, ties to the smaller column.

    Zero-valued entries are never selected. Returns the count, ``out[:count]``
    sorted ascending.
    """
    mags = np.empty(t, dtype=np.float64)
    for q in range(t):
        mags[q] = abs(vals[q])
    count = 0
    for _ in range(s):
        best = -1
        for q in range(t):
            if mags[q] > 0.0:
                if best < 0 or mags[q] > mags[best] or (
                        mags[q] == mags[best] and cols[q] < cols[best]):
                    best = q
        if best < 0:
            break
        out[count] = cols[best]
        mags[best] = -1.0
        count += 1
    out[:count].sort()
    return count


@njit(cache=True, nogil=True)
def gather_system(indptr, indices, data, i, pcols, m, inpat, pos, mat, rhs):
    for a in range(m):
        rhs[a] = 0.0
        for b in range(a, m):
            mat[a, b] = 0.0
    for a in range(m):
        r = pcols[a]
        for p in range(indptr[r], indptr[r + 1]):
            c = indices[p]
            if c == i:
                rhs[a] = -data[p]
            elif c < i and inpat[c]:
                b = pos[c]
                if b >= a:
                    mat[a, b] = data[p]


@njit(cache=True, nogil=True)
def quadratic_form(indptr, indices, data, i, pcols, pvals, m, inpat, pos):
    """g^T A g for the unit-diagonal row g with off-diagonal part on the pattern."""
    cross = data.dtype.type(0.0)
    inner = data.dtype.type(0.0)
    for a in range(m):
        r = pcols[a]
        ga = pvals[a]
        for p in range(indptr[r], indptr[r + 1]):
            c = indices[p]
            if c == i:
                cross += ga * data[p]
            elif c < i and inpat[c]:
                inner += ga * data[p] * pvals[pos[c]]
    return diagonal_entry(indptr, indices, data, i) + 2.0 * cross + inner


@njit(cache=True, nogil=True)
def _mark(pcols, m, inpat, pos):
    for a in range(m):
        inpat[pcols[a]] = True
        pos[pcols[a]] = a


@njit(cache=True, nogil=True)
def _unmark(pcols, m, inpat):
    for a in range(m):
        inpat[pcols[a]] = False


@njit(cache=True, nogil=True)
def setup_rows(indptr, indices, data, rows, kmax, s, eps, floor, cap,
               out_cols, out_vals, out_len, hist, steps, reason, status,
               d_scale):
    """Adaptive pattern growth for each row in ``rows``, then diagonal scaling.

    Row ``q`` of the output arrays belongs to ``rows[q]``. ``hist`` holds psi
    per step (NaN past the last step).
    """
    n = indptr.shape[0] - 1
    dt = data.dtype.type
    inpat = np.zeros(n, dtype=np.bool_)
    pos = np.zeros(n, dtype=np.int64)
    gmark = np.full(n, -1, dtype=np.int64)
    grad = np.zeros(n, dtype=data.dtype)
    touched = np.empty(n, dtype=np.int64)
    tvals = np.empty(n, dtype=data.dtype)
    picked = np.empty(max(s, 1), dtype=np.int64)
    mat = np.empty((cap, cap), dtype=data.dtype)
    rhs = np.empty(cap, dtype=data.dtype)
    stamp = 0
    for q in range(rows.shape[0]):
        i = rows[q]
        pcols = out_cols[q]
        pvals = out_vals[q]
        aii = diagonal_entry(indptr, indices, data, i)
        hist[q, 0] = aii
        if not aii > 0.0:
            status[q] = NONPOSITIVE_DIAGONAL
            continue
        m = 0
        k = 0
        why = STOP_KMAX
        bad = False
        while k < kmax:
            t = kaporin_gradient(indptr, indices, data, i, pcols, pvals, m,
                                 inpat, gmark, stamp, grad, touched)
            stamp += 1
            for z in range(t):
                tvals[z] = grad[touched[z]]
            room = min(s, cap - m)
            c = select_largest(touched, tvals, t, room, picked)
            if c == 0:
                why = STOP_NO_CANDIDATES
                break
            for z in range(c):
                pcols[m + z] = picked[z]
            m += c
            pcols[:m].sort()
            _mark(pcols, m, inpat, pos)
            gather_system(indptr, indices, data, i, pcols, m, inpat, pos,
                          mat, rhs)
            if cholesky_solve_upper(mat, rhs, m, floor, pvals) >= 0:
                bad = True
                break
            psi = aii
            for a in range(m):
                psi -= rhs[a] * pvals[a]
            k += 1
            hist[q, k] = psi
            if psi / aii <= eps:
                why = STOP_TOLERANCE
                break
        if bad:
            _unmark(pcols, m, inpat)
            status[q] = BREAKDOWN
            out_len[q] = m
            steps[q] = k
            continue
        qf = quadratic_form(indptr, indices, data, i, pcols, pvals, m,
                            inpat, pos)
        _unmark(pcols, m, inpat)
        out_len[q] = m
        steps[q] = k
        reason[q] = why
        if not qf > 0.0:
            status[q] = NONPOSITIVE_DIAGONAL
            continue
        d_scale[q] = dt(1.0) / np.sqrt(qf)
        status[q] = OK
