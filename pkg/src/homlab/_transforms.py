"""Fast tensor-product solvers for constant-coefficient operators.

The structured grids admit fast direct solution of ``(-lap + shift) u = b``
for every boundary-condition combination used in the lab: fast transforms
(FFT / DST) along the tangential axes diagonalize the operator there, and
the remaining one-dimensional problems along the vertical axis are
tridiagonal and solved with a vectorized Thomas sweep.  On the torus the
solve is all-FFT.

The same machinery provides the preconditioner for conjugate-gradient
iterations on heterogeneous systems: inverting the constant-coefficient
operator bounds the preconditioned condition number by the coefficient
contrast, so iteration counts stay flat in the grid size.
"""

from __future__ import annotations

import numpy as np
from scipy import fft as sfft

PERIODIC = "periodic"
DIRICHLET = "dirichlet"
NEUMANN = "neumann"


def axis_modes(m, offset, bc_low, bc_high):
    """Forward/backward 1-D transform and stencil eigenvalues.

    The stencil is the [-1, 2, -1] second difference (unscaled by h) with
    the closure implied by the home offset and boundary conditions:

    * cell-like axis (offset 0.5, m points): Dirichlet ghost = odd mirror,
      Neumann ghost = even mirror;
    * node-like axis (offset 0.0): Dirichlet unknowns exclude the pinned
      boundary row, so callers pass the interior count m.

    Returns (forward, backward, eigenvalues); transforms are orthonormal
    (or unitary FFT), so backward is the exact inverse.
    """
    if bc_low == PERIODIC:
        k = np.arange(m)
        lam = 2.0 - 2.0 * np.cos(2.0 * np.pi * k / m)
        return (
            lambda x, axis: sfft.fft(x, axis=axis),
            lambda x, axis: sfft.ifft(x, axis=axis),
            lam,
        )
    if offset == 0.5:
        if bc_low == DIRICHLET and bc_high == DIRICHLET:
            k = np.arange(1, m + 1)
            lam = 2.0 - 2.0 * np.cos(np.pi * k / m)
            fwd = lambda x, axis: sfft.dst(x, type=2, axis=axis, norm="ortho")
            bwd = lambda x, axis: sfft.idst(x, type=2, axis=axis, norm="ortho")
            return fwd, bwd, lam
        if bc_low == NEUMANN and bc_high == NEUMANN:
            k = np.arange(m)
            lam = 2.0 - 2.0 * np.cos(np.pi * k / m)
            fwd = lambda x, axis: sfft.dct(x, type=2, axis=axis, norm="ortho")
            bwd = lambda x, axis: sfft.idct(x, type=2, axis=axis, norm="ortho")
            return fwd, bwd, lam
        if bc_low == NEUMANN and bc_high == DIRICHLET:
            k = np.arange(m)
            lam = 2.0 - 2.0 * np.cos(np.pi * (k + 0.5) / m)
            fwd = lambda x, axis: sfft.dct(x, type=4, axis=axis, norm="ortho")
            bwd = lambda x, axis: sfft.idct(x, type=4, axis=axis, norm="ortho")
            return fwd, bwd, lam
        if bc_low == DIRICHLET and bc_high == NEUMANN:
            k = np.arange(m)
            lam = 2.0 - 2.0 * np.cos(np.pi * (k + 0.5) / m)
            fwd = lambda x, axis: sfft.dst(x, type=4, axis=axis, norm="ortho")
            bwd = lambda x, axis: sfft.idst(x, type=4, axis=axis, norm="ortho")
            return fwd, bwd, lam
    else:
        if bc_low == DIRICHLET and bc_high == DIRICHLET:
            # interior nodes of a pinned lattice
            k = np.arange(1, m + 1)
            lam = 2.0 - 2.0 * np.cos(np.pi * k / (m + 1))
            fwd = lambda x, axis: sfft.dst(x, type=1, axis=axis, norm="ortho")
            bwd = lambda x, axis: sfft.idst(x, type=1, axis=axis, norm="ortho")
            return fwd, bwd, lam
    raise NotImplementedError(
        f"no fast transform for offset={offset} bc=({bc_low},{bc_high})"
    )


def vertical_stencil(m, offset, bc_low, bc_high):
    """Unscaled 1-D second-difference stencil as (sub, diag, super) arrays.

    node-like + Neumann keeps the boundary row as an unknown with an even
    ghost (row ``2 u0 - 2 u1``); node-like + Dirichlet drops the pinned
    row, leaving plain [−1, 2, −1] truncation.
    """
    sub = -np.ones(m)
    dia = 2.0 * np.ones(m)
    sup = -np.ones(m)
    sub[0] = 0.0
    sup[-1] = 0.0
    if offset == 0.5:
        if bc_low == DIRICHLET:
            dia[0] = 3.0
        elif bc_low == NEUMANN:
            dia[0] = 1.0
        else:
            raise ValueError(bc_low)
        if bc_high == DIRICHLET:
            dia[-1] = 3.0
        elif bc_high == NEUMANN:
            dia[-1] = 1.0
        else:
            raise ValueError(bc_high)
    else:
        if bc_low == NEUMANN:
            sup[0] = -2.0
        elif bc_low != DIRICHLET:
            raise ValueError(bc_low)
        if bc_high == NEUMANN:
            sub[-1] = -2.0
        elif bc_high != DIRICHLET:
            raise ValueError(bc_high)
    return sub, dia, sup


def thomas_many(sub, dia, sup, rhs):
    """Solve many tridiagonal systems that share sub/super diagonals but
    have per-system diagonal shifts.

    sub, sup: (m,), dia: (..., m) broadcast against rhs (..., m).
    """
    dia = np.broadcast_to(dia, rhs.shape).astype(rhs.dtype).copy()
    x = rhs.astype(np.result_type(rhs.dtype, dia.dtype)).copy()
    m = rhs.shape[-1]
    # forward elimination
    for i in range(1, m):
        w = sub[i] / dia[..., i - 1]
        dia[..., i] = dia[..., i] - w * sup[i - 1]
        x[..., i] = x[..., i] - w * x[..., i - 1]
    x[..., -1] = x[..., -1] / dia[..., -1]
    for i in range(m - 2, -1, -1):
        x[..., i] = (x[..., i] - sup[i] * x[..., i + 1]) / dia[..., i]
    return x


class FastConstSolver:
    """Direct solver for ``(-lap_h + shift) u = b`` on a structured home.

    Parameters
    ----------
    grid : Grid
    offsets : staggered home of the unknowns
    bcs : per-axis (bc_low, bc_high) pairs; ``("periodic", "periodic")``
        on identified axes
    shape : unknown-array shape (node-like Dirichlet axes exclude pinned
        rows, so this may differ from ``grid.home_shape``)
    project_mean : subtract the mean mode (singular pure-periodic /
        pure-Neumann operators); the caller must supply compatible data
    """

    def __init__(self, grid, offsets, bcs, shape, project_mean=False):
        self.grid = grid
        self.shape = tuple(shape)
        self.h2 = grid.h * grid.h
        self.project_mean = project_mean
        d = grid.dim
        self._fwd = []
        self._bwd = []
        eigs = []
        for a in range(d - 1):
            f, b, lam = axis_modes(self.shape[a], offsets[a], *bcs[a])
            self._fwd.append(f)
            self._bwd.append(b)
            eigs.append(lam)
        za = d - 1
        if bcs[za][0] == PERIODIC:
            f, b, lam = axis_modes(self.shape[za], offsets[za], *bcs[za])
            self._fwd.append(f)
            self._bwd.append(b)
            eigs.append(lam)
            sym = sum(
                lam.reshape([-1 if i == a else 1 for i in range(d)])
                for a, lam in enumerate(eigs)
            )
            self._symbol = np.asarray(sym, dtype=float) / self.h2
            self._vertical = None
        else:
            tang = sum(
                lam.reshape([-1 if i == a else 1 for i in range(d - 1)] + [1])
                for a, lam in enumerate(eigs)
            )
            self._tang = np.asarray(tang, dtype=float) / self.h2
            self._vertical = vertical_stencil(self.shape[za], offsets[za], *bcs[za])
            self._symbol = None

    def solve(self, b, shift=0.0):
        d = self.grid.dim
        x = np.asarray(b, dtype=float)
        if self.project_mean:
            x = x - x.mean()
        if self._symbol is not None:
            for a in range(d):
                x = self._fwd[a](x, axis=a)
            sym = self._symbol + shift
            if self.project_mean:
                flat = sym.reshape(-1)
                flat[0] = 1.0  # zero mode projected away below
            x = x / sym
            if self.project_mean:
                x.reshape(-1)[0] = 0.0
            for a in range(d):
                x = self._bwd[a](x, axis=a)
            x = np.real(x)
            if self.project_mean:
                x = x - x.mean()
            return x
        for a in range(d - 1):
            x = self._fwd[a](x, axis=a)
        sub, dia, sup = self._vertical
        full_dia = dia / self.h2 + self._tang + shift
        x = thomas_many(sub / self.h2, full_dia, sup / self.h2, x)
        for a in range(d - 1):
            x = self._bwd[a](x, axis=a)
        return np.real(x)
