import numpy as np
import pytest

from homlab import _transforms as ft


def dense_1d(m, offset, bc_low, bc_high):
    """Dense [-1,2,-1] stencil with the module's ghost closures."""
    A = np.zeros((m, m))
    for i in range(m):
        A[i, i] = 2.0
        if i > 0:
            A[i, i - 1] = -1.0
        if i < m - 1:
            A[i, i + 1] = -1.0
    if offset == 0.5:
        A[0, 0] += {"dirichlet": 1.0, "neumann": -1.0}[bc_low]
        A[-1, -1] += {"dirichlet": 1.0, "neumann": -1.0}[bc_high]
    else:
        if bc_low == "neumann":
            A[0, 1] = -2.0
        if bc_high == "neumann":
            A[-1, -2] = -2.0
    return A


CASES = [
    (0.5, "dirichlet", "dirichlet"),
    (0.5, "neumann", "neumann"),
    (0.5, "neumann", "dirichlet"),
    (0.5, "dirichlet", "neumann"),
    (0.0, "dirichlet", "dirichlet"),
]


@pytest.mark.parametrize("offset,lo,hi", CASES)
def test_axis_modes_diagonalize_stencil(offset, lo, hi):
    m = 12
    A = dense_1d(m, offset, lo, hi)
    fwd, bwd, lam = ft.axis_modes(m, offset, lo, hi)
    for k in range(m):
        e = np.zeros(m)
        e[k] = 1.0
        v = bwd(e, 0)
        assert np.allclose(A @ v, lam[k] * v, atol=1e-12)


def test_axis_modes_periodic():
    m = 16
    A = np.zeros((m, m))
    for i in range(m):
        A[i, i] = 2.0
        A[i, (i - 1) % m] -= 1.0
        A[i, (i + 1) % m] -= 1.0
    fwd, bwd, lam = ft.axis_modes(m, 0.5, "periodic", "periodic")
    x = np.random.default_rng(0).standard_normal(m)
    y = np.real(bwd(fwd(x, 0) * lam, 0))
    assert np.allclose(y, A @ x, atol=1e-12)


@pytest.mark.parametrize("offset,lo,hi", CASES)
def test_vertical_stencil_matches_dense(offset, lo, hi):
    m = 9
    sub, dia, sup = ft.vertical_stencil(m, offset, lo, hi)
    A = np.diag(dia) + np.diag(sub[1:], -1) + np.diag(sup[:-1], 1)
    assert np.allclose(A, dense_1d(m, offset, lo, hi))


def test_thomas_many_vs_dense():
    rng = np.random.default_rng(1)
    m = 14
    sub, dia, sup = ft.vertical_stencil(m, 0.5, "neumann", "dirichlet")
    shifts = rng.uniform(0.5, 3.0, size=(5, 1))
    rhs = rng.standard_normal((5, m))
    x = ft.thomas_many(sub, dia + shifts, sup, rhs)
    for i in range(5):
        A = dense_1d(m, 0.5, "neumann", "dirichlet") + shifts[i] * np.eye(m)
        assert np.allclose(x[i], np.linalg.solve(A, rhs[i]), atol=1e-11)


def test_thomas_complex_rhs():
    m = 8
    sub, dia, sup = ft.vertical_stencil(m, 0.5, "dirichlet", "dirichlet")
    rhs = np.arange(m) + 1j * np.ones(m)
    x = ft.thomas_many(sub, dia + 0.7, sup, rhs)
    A = dense_1d(m, 0.5, "dirichlet", "dirichlet") + 0.7 * np.eye(m)
    assert np.allclose(A @ x, rhs, atol=1e-12)
