import itertools

import numpy as np
import pytest

from afsai.problems import generate_poisson7, random_spd, random_spd_dense


def brute_force_stencil(nx, ny, nz):
    n = nx * ny * nz
    a = np.zeros((n, n))
    idx = lambda x, y, z: x + nx * (y + ny * z)
    for x, y, z in itertools.product(range(nx), range(ny), range(nz)):
        i = idx(x, y, z)
        a[i, i] = 6.0
        for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            u, v, w = x + dx, y + dy, z + dz
            if 0 <= u < nx and 0 <= v < ny and 0 <= w < nz:
                a[i, idx(u, v, w)] = -1.0
    return a


def test_single_point():
    assert generate_poisson7(1, 1, 1).toarray().tolist() == [[6.0]]


def test_two_cube_rows():
    a = generate_poisson7(2, 2, 2).toarray()
    assert a.shape == (8, 8)
    for row in a:
        assert row.max() == 6.0 and np.sum(row == -1.0) == 3 and np.sum(row != 0) == 4


@pytest.mark.parametrize("dims", [(4, 4, 4), (3, 5, 2), (1, 7, 3)])
def test_matches_brute_force(dims):
    a = generate_poisson7(*dims)
    ref = brute_force_stencil(*dims)
    assert np.array_equal(a.toarray(), ref)
    sums = a.toarray().sum(axis=1)
    assert set(np.unique(sums)) <= set(range(7))


@pytest.mark.parametrize("dims", [(4, 4, 4), (12, 12, 12)])
def test_symmetric_and_spd(dims):
    a = generate_poisson7(*dims)
    assert a.is_symmetric()
    np.linalg.cholesky(a.toarray())


def test_invalid_dims():
    with pytest.raises(ValueError):
        generate_poisson7(0, 2, 2)
    with pytest.raises(OverflowError):
        generate_poisson7(2**11, 2**11, 2**11)


@pytest.mark.parametrize("seed", range(3))
def test_random_generators_are_spd(seed):
    for a in (random_spd(60, 0.1, seed), random_spd_dense(30, seed)):
        assert a.is_symmetric()
        assert np.linalg.eigvalsh(a.toarray())[0] > 0
    assert random_spd(40, 0.1, seed).equals(random_spd(40, 0.1, seed))
