import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings, strategies as st

from afsai.sparse import (BreakdownError, CsrMatrix, DenseSpdSystem, cholesky_solve_spd,
                          kaporin_number_dense, pivot_floor, spmv_seq)

from conftest import shifted_symmetric


def test_spmv_identity():
    out = spmv_seq(CsrMatrix.identity(3), np.array([1.0, 2.0, 3.0]))
    assert out.tolist() == [1.0, 2.0, 3.0]


def test_spmv_hand_expansion():
    a = CsrMatrix.from_dense(np.array([[2.0, 0.0], [1.0, 3.0]]))
    assert spmv_seq(a, np.ones(2)).tolist() == [2.0, 4.0]


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError):
        spmv_seq(CsrMatrix.identity(3), np.ones(4))


@pytest.mark.parametrize("n,density", [(20, 0.2), (200, 0.03), (57, 0.5)])
def test_spmv_against_dense_multiply(n, density, rng):
    s = sps.random(n, n, density=density, random_state=rng, format="csr")
    a = CsrMatrix.from_scipy(s)
    x = rng.standard_normal(n)
    ref = s.toarray() @ x
    got = spmv_seq(a, x)
    scale = np.abs(s.toarray()) @ np.abs(x)
    assert np.all(np.abs(got - ref) <= 1e-14 * np.maximum(scale, 1e-300))


def test_spmv_order_is_ascending_columns():
    # ascending-order row sum is reproducible with a plain Python loop
    rng = np.random.default_rng(5)
    s = sps.random(30, 30, density=0.4, random_state=rng, format="csr")
    s.sort_indices()
    x = rng.standard_normal(30)
    got = spmv_seq(CsrMatrix.from_scipy(s), x)
    for i in range(30):
        acc = 0.0
        for k in range(s.indptr[i], s.indptr[i + 1]):
            acc += s.data[k] * x[s.indices[k]]
        assert got[i] == acc


def test_csr_validation():
    with pytest.raises(ValueError):
        CsrMatrix(2, 2, np.array([0, 1]), np.array([0]), np.array([1.0]))
    with pytest.raises(ValueError):
        CsrMatrix(1, 2, np.array([0, 1]), np.array([5]), np.array([1.0]))


def test_csr_helpers_roundtrip(rng):
    d = rng.standard_normal((6, 5)) * (rng.random((6, 5)) < 0.5)
    a = CsrMatrix.from_dense(d)
    assert np.array_equal(a.toarray(), d)
    assert np.array_equal(a.transpose().toarray(), d.T)
    assert np.array_equal(a.submatrix((1, 4), (2, 5)).toarray(), d[1:4, 2:5])
    assert a.astype(np.float32).dtype == np.float32
    assert a.equals(CsrMatrix.from_dense(d))


def test_cholesky_scalar():
    g = cholesky_solve_spd(DenseSpdSystem(np.array([[4.0]]), np.array([2.0])))
    assert g.tolist() == [0.5]


def test_cholesky_two_by_two():
    g = cholesky_solve_spd(DenseSpdSystem(np.array([[4.0, 2.0], [2.0, 3.0]]),
                                          np.array([2.0, 1.0])))
    ref = np.linalg.solve([[4.0, 2.0], [2.0, 3.0]], [2.0, 1.0])
    assert np.allclose(g, ref, atol=1e-15)
    assert np.allclose(g, [0.5, 0.0], atol=1e-15)


def test_cholesky_indefinite_breaks_down():
    with pytest.raises(BreakdownError):
        cholesky_solve_spd(DenseSpdSystem(np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones(2)))


def test_cholesky_reads_upper_triangle_only():
    m = np.array([[4.0, 2.0], [-99.0, 3.0]])
    g = cholesky_solve_spd(DenseSpdSystem(m, np.array([2.0, 1.0])))
    assert np.allclose(g, [0.5, 0.0])


def test_pivot_floor_by_precision():
    assert pivot_floor(np.float64) == 1e-30
    assert pivot_floor(np.float32) == pytest.approx(1e-20)


@settings(max_examples=60, deadline=None)
@given(dim=st.integers(1, 64), seed=st.integers(0, 10**6))
def test_cholesky_residual_property(dim, seed):
    m = shifted_symmetric(dim, seed, shift=float(dim))
    rhs = np.random.default_rng(seed + 1).standard_normal(dim)
    g = cholesky_solve_spd(DenseSpdSystem(m.copy(), rhs))
    assert np.max(np.abs(m @ g - rhs)) <= 1e-12 * max(np.max(np.abs(rhs)), 1e-300)


def test_kaporin_identity_exactly_one():
    assert kaporin_number_dense(CsrMatrix.identity(7)) == 1.0


def test_kaporin_diag():
    a = CsrMatrix.from_dense(np.diag([1.0, 4.0]))
    assert kaporin_number_dense(a) == pytest.approx((5.0 / 2.0) / np.sqrt(4.0), rel=1e-14)


def test_kaporin_rejects_non_spd_and_large():
    with pytest.raises(BreakdownError):
        kaporin_number_dense(CsrMatrix.from_dense(np.array([[1.0, 2.0], [2.0, 1.0]])))
    with pytest.raises(ValueError):
        kaporin_number_dense(CsrMatrix.identity(5), limit=4)


@settings(max_examples=40, deadline=None)
@given(dim=st.integers(1, 40), seed=st.integers(0, 10**6))
def test_kaporin_at_least_one(dim, seed):
    # AM-GM on the eigenvalues
    m = shifted_symmetric(dim, seed, shift=0.1)
    assert kaporin_number_dense(m) >= 1.0 - 1e-12
