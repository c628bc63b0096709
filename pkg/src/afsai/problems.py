"""Test-problem generators: 7-point Poisson and shifted random SPD matrices."""

import numpy as np
import scipy.sparse as sps

from .sparse import CsrMatrix

MAX_ROWS = 2**31 - 1


def generate_poisson7(nx, ny, nz):
    """7-point finite-difference Laplacian on an ``nx*ny*nz`` grid.

    Lexicographic ordering (x fastest). Dirichlet truncation: every row keeps
    diagonal 6 and only the neighbours that exist get a -1.
    """
    if min(nx, ny, nz) < 1:
        raise ValueError("grid dimensions must be >= 1")
    if nx * ny * nz > MAX_ROWS:
        raise OverflowError(f"grid of {nx}x{ny}x{nz} exceeds {MAX_ROWS} rows")

    def lap1(m):
        return sps.diags([-np.ones(m - 1), 2.0 * np.ones(m), -np.ones(m - 1)],
                         [-1, 0, 1], format="csr")

    ix, iy, iz = sps.identity(nx), sps.identity(ny), sps.identity(nz)
    a = (sps.kron(iz, sps.kron(iy, lap1(nx)))
         + sps.kron(iz, sps.kron(lap1(ny), ix))
         + sps.kron(lap1(nz), sps.kron(iy, ix)))
    a = sps.csr_matrix(a)
    a.eliminate_zeros()
    return CsrMatrix.from_scipy(a)


def random_spd(n, density=0.05, seed=0, margin=1.0):
    """Random sparse symmetric matrix shifted to strict diagonal dominance.

    Off-diagonal entries are standard normal; the diagonal is the absolute
    row sum plus ``margin`` times a random factor in [1, 2).
    """
    rng = np.random.default_rng(seed)
    b = sps.random(n, n, density=density, random_state=rng,
                   data_rvs=rng.standard_normal, format="csr")
    b = sps.tril(b, k=-1)
    b = b + b.T
    rowsum = np.asarray(abs(b).sum(axis=1)).ravel()
    diag = rowsum + margin * (1.0 + rng.random(n))
    a = sps.csr_matrix(b + sps.diags(diag))
    return CsrMatrix.from_scipy(a)


def random_spd_dense(n, seed=0, shift=None):
    """Dense random SPD matrix ``B B^T / n + shift I`` as CSR."""
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((n, n))
    a = b @ b.T / n
    a = 0.5 * (a + a.T)
    a += (0.5 if shift is None else shift) * np.eye(n)
    return CsrMatrix.from_dense(a)
