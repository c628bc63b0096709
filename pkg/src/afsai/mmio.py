"""Matrix Market coordinate I/O (real, general or symmetric)."""

import numpy as np
import scipy.sparse as sps

from .sparse import CsrMatrix


class MatrixMarketError(ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def read_matrix_market(path, require_square=False, require_symmetric=False):
    """Read a coordinate file into canonical CSR.

    Symmetric files are expanded to full storage and duplicates are summed.
    With ``require_symmetric`` a general file must be exactly symmetric.
    """
    with open(path) as fh:
        lines = fh.readlines()
    if not lines:
        raise MatrixMarketError("empty file", line=1)
    header = lines[0].split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket":
        raise MatrixMarketError("missing %%MatrixMarket banner", line=1)
    obj, fmt, field, sym = (h.lower() for h in header[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketError(f"unsupported layout '{obj} {fmt}'", line=1)
    if field not in ("real", "integer", "double"):
        raise MatrixMarketError(f"unsupported field '{field}'", line=1)
    if sym not in ("general", "symmetric"):
        raise MatrixMarketError(f"unsupported symmetry '{sym}'", line=1)

    lineno = 1
    size = None
    for lineno in range(2, len(lines) + 1):
        text = lines[lineno - 1].strip()
        if text and not text.startswith("%"):
            size = text.split()
            break
    if size is None:
        raise MatrixMarketError("missing size line", line=lineno)
    try:
        n_rows, n_cols, nnz = (int(v) for v in size)
    except ValueError:
        raise MatrixMarketError("size line must hold three integers", line=lineno) from None
    if sym == "symmetric" and n_rows != n_cols:
        raise MatrixMarketError("symmetric matrix must be square", line=lineno)

    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    k = 0
    for ln in range(lineno + 1, len(lines) + 1):
        text = lines[ln - 1].strip()
        if not text or text.startswith("%"):
            continue
        parts = text.split()
        if k >= nnz:
            raise MatrixMarketError(f"more than the declared {nnz} entries", line=ln)
        if len(parts) != 3:
            raise MatrixMarketError("entry must be 'row col value'", line=ln)
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise MatrixMarketError(f"cannot parse entry '{text}'", line=ln) from None
        if not (1 <= i <= n_rows and 1 <= j <= n_cols):
            raise MatrixMarketError(f"index ({i}, {j}) outside {n_rows}x{n_cols}", line=ln)
        if sym == "symmetric" and j > i:
            raise MatrixMarketError("symmetric file lists an upper-triangle entry", line=ln)
        rows[k], cols[k], vals[k] = i - 1, j - 1, v
        k += 1
    if k != nnz:
        raise MatrixMarketError(f"declared {nnz} entries, found {k}", line=len(lines))

    if sym == "symmetric":
        off = rows != cols
        rows, cols, vals = (np.concatenate([rows, cols[off]]),
                            np.concatenate([cols, rows[off]]),
                            np.concatenate([vals, vals[off]]))
    coo = sps.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))
    mat = CsrMatrix.from_scipy(coo.tocsr())
    if require_square and n_rows != n_cols:
        raise MatrixMarketError(f"solver input must be square, got {n_rows}x{n_cols}")
    if require_symmetric and not mat.is_symmetric():
        raise MatrixMarketError("solver input must be symmetric")
    return mat


def write_matrix_market(path, a, symmetric=False, comment=None):
    """Write ``a`` in coordinate format; ``symmetric`` stores the lower triangle only."""
    rows = np.repeat(np.arange(a.n_rows), np.diff(a.row_start))
    cols = a.col_idx
    vals = a.values.astype(np.float64)
    if symmetric:
        if not a.is_symmetric():
            raise ValueError("matrix is not symmetric")
        keep = cols <= rows
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
    with open(path, "w") as fh:
        fh.write(f"%%MatrixMarket matrix coordinate real "
                 f"{'symmetric' if symmetric else 'general'}\n")
        if comment:
            for line in comment.splitlines():
                fh.write(f"% {line}\n")
        fh.write(f"{a.n_rows} {a.n_cols} {rows.size}\n")
        for i, j, v in zip(rows, cols, vals):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")
