"""Divergence-form elliptic solver on structured grids.

Discretization: cell-centered finite volumes with face-sampled tensor
coefficients.  The flux through a k-face is ``sum_m a_km (d_m u)`` with
the normal derivative taken as the two-point difference across the face
and tangential derivatives as averages of the centered differences in
the two adjacent cells.  For symmetric coefficient tensors the assembled
operator is symmetrized exactly (the cross-term sampling is averaged
over the two face families), so ``<Au, v> = <u, Av>`` holds to round-off.

Boundary conditions on half-boxes:

* ``Dirichlet(g)``: second-order ghost values at face centers,
  eliminated into the right-hand side (keeps symmetry);
* ``NoFlux(g)``: the total outward current ``e . (a grad u + F)`` is
  prescribed to ``g`` on the face; the term enters the right-hand side
  only, mirroring the weak formulation in which the boundary flux term
  is simply absent.

Pure-periodic (and pure-Neumann) systems are singular with constant null
space; the solver pins the mean-zero representative by projecting out
the constant mode every iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _transforms as ft
from .grid import Grid, HALF_BOX, TORUS, cell_offsets, face_offsets

log = logging.getLogger(__name__)

Datum = Union[float, np.ndarray, Callable]


# ---------------------------------------------------------------------------
# field containers
# ---------------------------------------------------------------------------


@dataclass
class ScalarField:
    """Scalar values on a staggered home (cells by default)."""

    grid: Grid
    values: np.ndarray
    offsets: tuple = None

    def __post_init__(self):
        if self.offsets is None:
            self.offsets = cell_offsets(self.grid.dim)
        self.values = np.asarray(self.values, dtype=float)
        expect = self.grid.home_shape(self.offsets)
        if self.values.shape != expect:
            raise ValueError(f"values shape {self.values.shape} != home shape {expect}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite entries")

    def mean(self):
        return float(self.values.mean())

    def copy(self):
        return ScalarField(self.grid, self.values.copy(), self.offsets)


@dataclass
class VectorField:
    """One normal component per face, stored per axis.

    On non-periodic axes the component array includes the two boundary
    face layers (size m+1 along its own axis).
    """

    grid: Grid
    comps: list

    def __post_init__(self):
        d = self.grid.dim
        if len(self.comps) != d:
            raise ValueError("need one component per axis")
        self.comps = [np.asarray(c, dtype=float) for c in self.comps]
        for k, c in enumerate(self.comps):
            expect = self.grid.face_shape(k)
            if c.shape != expect:
                raise ValueError(f"component {k} shape {c.shape} != {expect}")

    @staticmethod
    def zeros(grid):
        return VectorField(grid, [np.zeros(grid.face_shape(k)) for k in range(grid.dim)])

    def copy(self):
        return VectorField(self.grid, [c.copy() for c in self.comps])


# ---------------------------------------------------------------------------
# boundary conditions and sources
# ---------------------------------------------------------------------------


@dataclass
class Dirichlet:
    value: Datum = 0.0


@dataclass
class NoFlux:
    """Prescribed outward total current e . (a grad u + F) = value."""

    value: Datum = 0.0


@dataclass
class PeriodicBC:
    pass


@dataclass
class BoundarySpec:
    """Per-side boundary conditions; torus grids admit only periodic."""

    sides: dict = dc_field(default_factory=dict)  # (axis, side) -> bc

    @staticmethod
    def periodic():
        return BoundarySpec({})

    @staticmethod
    def half_box(grid, flat=None, top=None, lateral=None):
        """Default closure of the truncated half-space: homogeneous
        no-flux on the flat side, zero Dirichlet on top, lateral sides
        periodic (slab grids) or zero Dirichlet (plain half-box)."""
        d = grid.dim
        sides = {}
        for a in range(d - 1):
            if grid.periodic_axis(a):
                if lateral is not None:
                    raise ValueError("lateral data given on a periodic slab axis")
                sides[(a, 0)] = PeriodicBC()
                sides[(a, 1)] = PeriodicBC()
            else:
                lat = lateral if lateral is not None else Dirichlet(0.0)
                sides[(a, 0)] = lat
                sides[(a, 1)] = lat
        sides[(d - 1, 0)] = flat if flat is not None else NoFlux(0.0)
        sides[(d - 1, 1)] = top if top is not None else Dirichlet(0.0)
        return BoundarySpec(sides)

    def bc(self, axis, side):
        return self.sides.get((axis, side), PeriodicBC())


@dataclass
class SourceTerm:
    """Right-hand side f + div F (F enters weakly through face fluxes)."""

    volume: Optional[np.ndarray] = None
    divergence_form: Optional[VectorField] = None


@dataclass
class SolveStats:
    iterations: int
    relative_residual: float
    energy: float


class SolverError(RuntimeError):
    def __init__(self, message, best_x=None, history=None):
        super().__init__(message)
        self.best_x = best_x
        self.history = history or []


@dataclass
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    grid: Grid
    bc: BoundarySpec
    symmetric: bool
    singular: bool
    mean_coeff: float
    axis_bcs: tuple  # per-axis (low, high) in transform vocabulary
    rhs_mean_shift: float = 0.0  # mean removed from an incompatible rhs

    @property
    def n_unknowns(self):
        return self.matrix.shape[0]


def _boundary_datum(value, grid, axis, side):
    """Evaluate a boundary datum on the face layer (axis, side)."""
    offs = face_offsets(grid.dim, axis)
    shape = grid.face_shape(axis)
    idx = [slice(None)] * grid.dim
    idx[axis] = 0 if side == 0 else shape[axis] - 1
    if callable(value):
        coords = [c[tuple(idx)] for c in grid.coords(offs)]
        out = np.asarray(value(*coords), dtype=float)
    else:
        out = np.asarray(value, dtype=float)
    want = tuple(s for a, s in enumerate(shape) if a != axis)
    if out.ndim == 0:
        out = np.full(want, float(out))
    if out.shape != want:
        raise ValueError(f"boundary datum shape {out.shape} != {want}")
    return out


def _transform_bcs(grid, bc):
    out = []
    for a in range(grid.dim):
        if grid.periodic_axis(a):
            out.append((ft.PERIODIC, ft.PERIODIC))
        else:
            pair = []
            for s in (0, 1):
                b = bc.bc(a, s)
                if isinstance(b, Dirichlet):
                    pair.append(ft.DIRICHLET)
                elif isinstance(b, NoFlux):
                    pair.append(ft.NEUMANN)
                else:
                    raise ValueError("periodic side on a non-periodic axis")
            out.append(tuple(pair))
    return tuple(out)


def assemble(field, bc, src=None):
    """Assemble -div(a grad u) = f + div F into a sparse linear system.

    ``field`` is a CoefficientField (faces attribute per axis),
    ``bc`` a BoundarySpec, ``src`` a SourceTerm.
    """
    grid = field.grid
    d = grid.dim
    shape = grid.shape
    n_cells = int(np.prod(shape))
    h = grid.h
    inv_h2 = 1.0 / (h * h)
    if grid.topology == TORUS:
        for key, b in bc.sides.items():
            if not isinstance(b, PeriodicBC):
                raise ValueError("torus grids admit only periodic conditions")
    else:
        _transform_bcs(grid, bc)  # validates side kinds

    L = np.arange(n_cells, dtype=np.int64).reshape(shape)
    rows, cols, vals = [], [], []
    rhs = np.zeros(n_cells)

    if src is not None and src.volume is not None:
        vol = np.asarray(src.volume, dtype=float)
        if vol.shape != shape:
            raise ValueError("volume source shape mismatch")
        rhs += vol.ravel()

    F = src.divergence_form if src is not None else None

    def add(r, c, v):
        rows.append(np.ravel(r))
        cols.append(np.ravel(c))
        vals.append(np.ravel(v))

    has_cross = field.has_offdiagonal()

    for k in range(d):
        faces = field.faces[k]
        a_kk = faces[..., k, k]
        periodic = grid.periodic_axis(k)

        if periodic:
            lower = np.roll(L, 1, axis=k)
            upper = L
            t = a_kk * inv_h2
            add(upper, upper, t)
            add(lower, lower, t)
            add(upper, lower, -t)
            add(lower, upper, -t)
            if F is not None:
                Fk = F.comps[k]
                rhs += ((np.roll(Fk, -1, axis=k) - Fk) / h).ravel()
            if has_cross:
                _cross_terms_periodic(grid, field, k, L, add)
        else:
            sl_lo = [slice(None)] * d
            sl_hi = [slice(None)] * d
            sl_int = [slice(None)] * d
            sl_lo[k] = 0
            sl_hi[k] = shape[k] - 1 + 1  # boundary face index in face array
            sl_int[k] = slice(1, shape[k])
            lower = np.take(L, np.arange(shape[k] - 1), axis=k)
            upper = np.take(L, np.arange(1, shape[k]), axis=k)
            t_int = a_kk[tuple(sl_int)] * inv_h2
            add(upper, upper, t_int)
            add(lower, lower, t_int)
            add(upper, lower, -t_int)
            add(lower, upper, -t_int)
            if F is not None:
                Fk = F.comps[k].copy()
            else:
                Fk = None
            for side in (0, 1):
                b_side = bc.bc(k, side)
                cell_sl = [slice(None)] * d
                cell_sl[k] = 0 if side == 0 else shape[k] - 1
                cells = L[tuple(cell_sl)]
                face_sl = [slice(None)] * d
                face_sl[k] = 0 if side == 0 else shape[k]
                t_b = a_kk[tuple(face_sl)] * inv_h2
                if isinstance(b_side, Dirichlet):
                    g = _boundary_datum(b_side.value, grid, k, side)
                    add(cells, cells, 2.0 * t_b)
                    rhs[cells.ravel()] += (2.0 * t_b * g).ravel()
                elif isinstance(b_side, NoFlux):
                    g = _boundary_datum(b_side.value, grid, k, side)
                    rhs[cells.ravel()] += (g / h).ravel()
                    if Fk is not None:
                        Fk[tuple(face_sl)] = 0.0  # absorbed into the datum
                else:
                    raise ValueError("unexpected periodic side")
            if Fk is not None:
                dFk = np.diff(Fk, axis=k) / h
                rhs += dFk.ravel()
            if has_cross:
                _cross_terms_bounded(grid, field, k, L, add)

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_cells, n_cells),
    ).tocsr()

    symmetric = field.is_symmetric()
    if has_cross and symmetric:
        A = (A + A.T) * 0.5
        A = A.tocsr()

    singular = not any(isinstance(b, Dirichlet) for b in bc.sides.values())
    if grid.topology == TORUS:
        singular = True
    shift = 0.0
    if singular:
        shift = float(rhs.mean())
        rhs -= shift
        if abs(shift) > 1e-12 * (1.0 + np.abs(rhs).max()):
            log.info("subtracted rhs mean %.3e for singular system", shift)

    mean_coeff = float(np.mean([f[..., k, k].mean() for k, f in enumerate(field.faces)]))
    axis_bcs = (
        ((ft.PERIODIC, ft.PERIODIC),) * d if grid.topology == TORUS else _transform_bcs(grid, bc)
    )
    return LinearSystem(A, rhs, grid, bc, symmetric, singular, mean_coeff, axis_bcs, shift)


def _tangential_pairs(grid, axis_m, idx):
    """Neighbor index pairs along axis m for centered differences."""
    if grid.periodic_axis(axis_m):
        return np.roll(idx, 1, axis=axis_m), np.roll(idx, -1, axis=axis_m)
    lo = np.concatenate(
        [np.take(idx, [0], axis=axis_m), np.take(idx, np.arange(idx.shape[axis_m] - 1), axis=axis_m)],
        axis=axis_m,
    )
    hi = np.concatenate(
        [np.take(idx, np.arange(1, idx.shape[axis_m]), axis=axis_m), np.take(idx, [-1], axis=axis_m)],
        axis=axis_m,
    )
    return lo, hi


def _cross_flux_entries(grid, k, m, a_km, cl, cu, add):
    """COO entries of the cross flux a_km * avg centered d_m u at k-faces.

    The centered difference at each adjacent cell degenerates to a
    one-sided difference at non-periodic m-boundaries (first-order
    closure there).
    """
    h = grid.h
    for cells in (cl, cu):
        lo, hi = _tangential_pairs(grid, m, cells)
        # weight: average over the two adjacent cells (1/2) and the
        # centered difference span 2h
        w = a_km / (2.0 * 2.0 * h * h)
        # flux term tau*(u[hi]-u[lo]) enters rows cl (-) and cu (+):
        add(cl, hi, w)
        add(cl, lo, -w)
        add(cu, hi, -w)
        add(cu, lo, w)


def _cross_terms_periodic(grid, field, k, L, add):
    faces = field.faces[k]
    cl = np.roll(L, 1, axis=k)
    cu = L
    for m in range(grid.dim):
        if m == k:
            continue
        a_km = faces[..., k, m]
        if not np.any(a_km):
            continue
        _cross_flux_entries(grid, k, m, a_km, cl, cu, add)


def _cross_terms_bounded(grid, field, k, L, add):
    faces = field.faces[k]
    shape = grid.shape
    sl_int = [slice(None)] * grid.dim
    sl_int[k] = slice(1, shape[k])
    cl = np.take(L, np.arange(shape[k] - 1), axis=k)
    cu = np.take(L, np.arange(1, shape[k]), axis=k)
    for m in range(grid.dim):
        if m == k:
            continue
        a_km = faces[tuple(sl_int)][..., k, m]
        if not np.any(a_km):
            continue
        _cross_flux_entries(grid, k, m, a_km, cl, cu, add)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


def _fft_preconditioner(system):
    solver = ft.FastConstSolver(
        system.grid,
        cell_offsets(system.grid.dim),
        system.axis_bcs,
        system.grid.shape,
        project_mean=system.singular,
    )
    scale = max(system.mean_coeff, 1e-30)
    shape = system.grid.shape

    def apply(r):
        return solver.solve(r.reshape(shape)).ravel() / scale

    return apply


def _jacobi_preconditioner(system):
    dia = system.matrix.diagonal().copy()
    dia[dia == 0.0] = 1.0
    inv = 1.0 / dia

    def apply(r):
        return inv * r

    return apply


def solve(system, tol=1e-10, max_iter=20000, preconditioner="auto", x0=None):
    """Solve the assembled system by preconditioned conjugate gradients.

    Returns (ScalarField, SolveStats).  Semi-definite systems return the
    mean-zero representative.  Non-convergence raises SolverError with
    the best iterate and full residual history attached.
    """
    if not 0.0 < tol < 1.0:
        raise ValueError("tol must lie in (0, 1)")
    grid = system.grid
    b = system.rhs
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        zero = ScalarField(grid, np.zeros(grid.shape))
        return zero, SolveStats(0, 0.0, 0.0)

    if not system.symmetric:
        x, info = spla.bicgstab(system.matrix, b, rtol=tol, maxiter=max_iter)
        if info != 0:
            raise SolverError(f"bicgstab failed with code {info}", best_x=x)
        res = float(np.linalg.norm(b - system.matrix @ x) / nb)
        energy = 0.5 * float(x @ (system.matrix @ x)) - float(x @ b)
        return ScalarField(grid, x.reshape(grid.shape)), SolveStats(-1, res, energy)

    if preconditioner == "auto":
        preconditioner = "fft"
    if preconditioner == "fft":
        try:
            M = _fft_preconditioner(system)
        except NotImplementedError:
            M = _jacobi_preconditioner(system)
    elif preconditioner == "jacobi":
        M = _jacobi_preconditioner(system)
    elif preconditioner is None:
        M = lambda r: r
    else:
        raise ValueError(f"unknown preconditioner {preconditioner!r}")

    A = system.matrix
    project = system.singular
    x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=float).ravel().copy()
    r = b - A @ x if x0 is not None else b.copy()
    if project:
        r -= r.mean()
    z = M(r)
    if project:
        z -= z.mean()
    p = z.copy()
    rz = float(r @ z)
    history = [float(np.linalg.norm(r)) / nb]
    best = (history[0], x.copy())
    it = 0
    while history[-1] > tol and it < max_iter:
        Ap = A @ p
        if project:
            Ap -= Ap.mean()
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise SolverError("operator lost positivity in CG", best_x=best[1], history=history)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if project:
            r -= r.mean()
        rel = float(np.linalg.norm(r)) / nb
        history.append(rel)
        if rel < best[0]:
            best = (rel, x.copy())
        if rel <= tol:
            break
        z = M(r)
        if project:
            z -= z.mean()
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    if history[-1] > tol:
        raise SolverError(
            f"CG did not reach tol={tol} in {max_iter} iterations "
            f"(best residual {best[0]:.3e})",
            best_x=best[1],
            history=history,
        )
    if project:
        x -= x.mean()
    energy = 0.5 * float(x @ (A @ x)) - float(x @ b)
    stats = SolveStats(len(history) - 1, history[-1], energy)
    return ScalarField(grid, x.reshape(grid.shape)), stats


def dense_solve(system):
    """Direct dense solve, the oracle for small systems (<= a few 1e3)."""
    A = system.matrix.toarray()
    b = system.rhs
    if system.singular:
        # pin the mean-zero representative via least squares
        x, *_ = np.linalg.lstsq(A, b, rcond=None)
        x -= x.mean()
        return x.reshape(system.grid.shape)
    return np.linalg.solve(A, b).reshape(system.grid.shape)


def residual_norm(system, x):
    r = system.rhs - system.matrix @ np.ravel(x)
    nb = np.linalg.norm(system.rhs)
    return float(np.linalg.norm(r) / (nb if nb > 0 else 1.0))


# ---------------------------------------------------------------------------
# field calculus
# ---------------------------------------------------------------------------


def gradient(u):
    """Face-homed gradient of a cell field.

    Boundary faces of non-periodic axes are set to zero; diagnostics
    exclude boundary planes, and flux conditions there are handled by
    the assembler, not by this helper.
    """
    grid = u.grid
    h = grid.h
    comps = []
    for k in range(grid.dim):
        if grid.periodic_axis(k):
            comps.append((u.values - np.roll(u.values, 1, axis=k)) / h)
        else:
            g = np.zeros(grid.face_shape(k))
            sl = [slice(None)] * grid.dim
            sl[k] = slice(1, grid.shape[k])
            g[tuple(sl)] = np.diff(u.values, axis=k) / h
            comps.append(g)
    return VectorField(grid, comps)


def divergence(vf):
    """Cell-homed divergence of a face field (uses boundary faces)."""
    grid = vf.grid
    h = grid.h
    out = np.zeros(grid.shape)
    for k in range(grid.dim):
        Fk = vf.comps[k]
        if grid.periodic_axis(k):
            out += (np.roll(Fk, -1, axis=k) - Fk) / h
        else:
            out += np.diff(Fk, axis=k) / h
    return out


def _tangential_average_at_faces(grid, comp_m, m, k):
    """Average an m-face field onto k-faces (the four nearest faces)."""
    def mid(arr, axis, periodic):
        if periodic:
            return 0.5 * (arr + np.roll(arr, 1, axis=axis))
        lo = np.take(arr, [0], axis=axis)
        hi = np.take(arr, [-1], axis=axis)
        inner = 0.5 * (np.take(arr, np.arange(arr.shape[axis] - 1), axis=axis)
                       + np.take(arr, np.arange(1, arr.shape[axis]), axis=axis))
        return np.concatenate([lo, inner, hi], axis=axis)

    # comp_m is staggered in m; move to cells along m, then to faces along k.
    x = comp_m
    if grid.periodic_axis(m):
        x = 0.5 * (x + np.roll(x, -1, axis=m))
    else:
        x = 0.5 * (np.take(x, np.arange(x.shape[m] - 1), axis=m)
                   + np.take(x, np.arange(1, x.shape[m]), axis=m))
    # now cell-homed along every axis; average onto k-faces
    if grid.periodic_axis(k):
        return 0.5 * (x + np.roll(x, 1, axis=k))
    return mid(x, k, False)


def flux(field, u):
    """Current a grad u as a face field (boundary faces zero)."""
    grid = field.grid
    g = gradient(u)
    comps = []
    cross = field.has_offdiagonal()
    for k in range(grid.dim):
        a_kk = field.faces[k][..., k, k]
        q = a_kk * g.comps[k]
        if cross:
            for m in range(grid.dim):
                if m == k:
                    continue
                a_km = field.faces[k][..., k, m]
                if np.any(a_km):
                    q = q + a_km * _tangential_average_at_faces(grid, g.comps[m], m, k)
        if not grid.periodic_axis(k):
            sl0 = [slice(None)] * grid.dim
            sl1 = [slice(None)] * grid.dim
            sl0[k] = 0
            sl1[k] = -1
            q[tuple(sl0)] = 0.0
            q[tuple(sl1)] = 0.0
        comps.append(q)
    return VectorField(grid, comps)


# ---------------------------------------------------------------------------
# averages and diagnostics
# ---------------------------------------------------------------------------


def _interior_mask(grid, offsets):
    """Mask removing boundary-plane layers on non-periodic integer axes."""
    shape = grid.home_shape(offsets)
    mask = np.ones(shape, dtype=bool)
    for a in range(grid.dim):
        if offsets[a] == 0.0 and not grid.periodic_axis(a):
            sl = [slice(None)] * grid.dim
            sl[a] = 0
            mask[tuple(sl)] = False
            sl[a] = shape[a] - 1
            mask[tuple(sl)] = False
    return mask


def half_ball_average(values, grid, r, center=None, offsets=None, half=None):
    """Arithmetic mean over home points inside the (half-)ball.

    Returns (mean, count).  ``values`` may be a ScalarField or an array
    with ``offsets`` given.  Radii beyond the domain raise ValueError.
    """
    if isinstance(values, ScalarField):
        grid = values.grid
        offsets = values.offsets
        arr = values.values
    else:
        arr = np.asarray(values, dtype=float)
        if offsets is None:
            offsets = cell_offsets(grid.dim)
    limit = grid.side / 2.0 if grid.topology == TORUS else grid.height
    if r > limit + 1e-12:
        raise ValueError(f"radius {r} exceeds domain (limit {limit})")
    mask = grid.ball_mask(offsets, r, center=center, half=half)
    mask &= _interior_mask(grid, offsets)
    count = int(mask.sum())
    if count == 0:
        return 0.0, 0
    return float(arr[mask].mean()), count


def ball_mean_square(vf_or_field, grid, r, center=None, half=None):
    """Mean of |field|^2 over the (half-)ball; vector fields average each
    face component on its own home and sum the component means."""
    if isinstance(vf_or_field, VectorField):
        total = 0.0
        for k in range(grid.dim):
            offs = face_offsets(grid.dim, k)
            mask = grid.ball_mask(offs, r, center=center, half=half)
            mask &= _interior_mask(grid, offs)
            c = vf_or_field.comps[k][mask]
            if c.size:
                total += float((c * c).mean())
        return total
    if isinstance(vf_or_field, ScalarField):
        arr = vf_or_field.values
        offs = vf_or_field.offsets
    else:
        arr = np.asarray(vf_or_field)
        offs = cell_offsets(grid.dim)
    mask = grid.ball_mask(offs, r, center=center, half=half)
    mask &= _interior_mask(grid, offs)
    v = arr[mask]
    return float((v * v).mean()) if v.size else 0.0


@dataclass
class CaccioppoliResult:
    ratio: float
    warning: bool
    equation_residual: float


def caccioppoli_ratio(u, field, r, center=None, residual_tol=1e-6):
    """Energy ratio int_{B_r^+} |grad u|^2 / (r^-2 int_{B_2r^+} |u|^2).

    ``u`` should be discrete a-harmonic with no-flux flat data on
    B_{2r}^+; if the interior equation residual there exceeds the
    tolerance the result is flagged.
    """
    grid = u.grid
    vol = grid.cell_volume()
    g = gradient(u)
    num = 0.0
    for k in range(grid.dim):
        offs = face_offsets(grid.dim, k)
        mask = grid.ball_mask(offs, r, center=center)
        mask &= _interior_mask(grid, offs)
        c = g.comps[k][mask]
        num += float((c * c).sum()) * vol
    mask2 = grid.ball_mask(cell_offsets(grid.dim), 2 * r, center=center)
    den = float((u.values[mask2] ** 2).sum()) * vol / (r * r)
    # a-harmonicity check away from the outer rim
    q = flux(field, u)
    div_q = divergence(q)
    inner = grid.ball_mask(cell_offsets(grid.dim), 2 * r - 2 * grid.h, center=center)
    # exclude the flat-adjacent layer: its balance involves the boundary flux
    xd = grid.coords(cell_offsets(grid.dim))[grid.dim - 1]
    inner &= xd > grid.h
    scale = max(np.abs(div_q).max(), 1e-30)
    res = float(np.abs(div_q[inner]).max() / scale) if inner.any() else 0.0
    warning = res > residual_tol
    ratio = num / den if den > 0 else 0.0
    return CaccioppoliResult(ratio, warning, res)
