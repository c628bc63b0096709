import numpy as np
import pytest
import scipy.sparse as sps

from afsai.sparse import CsrMatrix


def tridiag(n, lo=-1.0, di=2.0, up=-1.0):
    a = sps.diags([lo * np.ones(n - 1), di * np.ones(n), up * np.ones(n - 1)], [-1, 0, 1],
                  format="csr")
    return CsrMatrix.from_scipy(a)


def shifted_symmetric(n, seed, shift=None):
    """Random symmetric matrix shifted until it is safely positive definite."""
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((n, n))
    s = 0.5 * (b + b.T)
    lam_min = np.linalg.eigvalsh(s)[0]
    s += (abs(lam_min) + (1.0 if shift is None else shift)) * np.eye(n)
    return s


def inverse_cholesky_factor(dense):
    """Oracle: L^{-1} with A = L L^T, so L^{-1} A L^{-T} = I."""
    chol = np.linalg.cholesky(dense)
    return np.linalg.solve(chol, np.eye(dense.shape[0]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE = []


def report(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(line)
    ACCEPTANCE.append(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
