"""Whole-space correctors, flux potentials and sublinearity diagnostics
on periodized boxes.

The corrector in direction xi solves the periodic cell problem

    -div(a grad phi_xi) = div(a xi),       mean(phi_xi) = 0,

and the corrected current is q_xi = a(grad phi_xi + xi) - a_hom xi with
a_hom read off column-wise as the exact spatial average of the corrected
current over each face family.  Flux potentials are skew fields
sigma_{xi jk} with row divergences reproducing q: they are constructed
on the staggered lattice (nodes in 2d, edges in 3d) by inverting the
periodic Laplacian of the discrete curl of q,

    -lap sigma_jk = d_j q_k - d_k q_j,

which makes the identity sum_k d_k sigma_jk = q_j exact up to the
corrector solver residual (discrete Hodge decomposition on the torus).
Note the curl orientation: with the opposite sign the row divergence
returns -q, which the residual check rejects.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import CoefficientField, sample_field
from .grid import Grid, TORUS, cell_offsets, pair_offsets
from .pde import (
    BoundarySpec,
    Dirichlet,
    ScalarField,
    SourceTerm,
    VectorField,
    assemble,
    ball_mean_square,
    divergence,
    flux,
    gradient,
    solve,
)

DEFAULT_TOL = 1e-12  # corrector solves feed the flux-potential identity


def _basis(dim):
    return [np.eye(dim)[i] for i in range(dim)]


def coefficient_times_vector(field, xi):
    """(a xi) sampled per face: component k on the k-face family."""
    grid = field.grid
    comps = []
    for k in range(grid.dim):
        comps.append(np.einsum("...m,m->...", field.faces[k][..., k, :], xi))
    return VectorField(grid, comps)


def solve_corrector(field, xi, tol=DEFAULT_TOL, max_iter=20000):
    """Zero-mean corrector for one unit direction on a torus field."""
    xi = np.asarray(xi, dtype=float)
    if abs(np.linalg.norm(xi) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    if field.grid.topology != TORUS:
        raise ValueError("whole-space correctors live on the torus")
    src = SourceTerm(divergence_form=coefficient_times_vector(field, xi))
    sys = assemble(field, BoundarySpec.periodic(), src)
    phi, stats = solve(sys, tol=tol, max_iter=max_iter)
    phi.values -= phi.values.mean()
    return phi, stats


@dataclass
class CorrectorSet:
    """Correctors for the coordinate directions; other directions by
    superposition (the map xi -> phi_xi is linear by construction)."""

    field: CoefficientField
    phi: dict  # i -> ScalarField (cell home, zero mean)
    stats: dict = dc_field(default_factory=dict)

    @property
    def grid(self):
        return self.field.grid

    def phi_for(self, b):
        b = np.asarray(b, dtype=float)
        vals = sum(b[i] * self.phi[i].values for i in range(self.grid.dim))
        return ScalarField(self.grid, vals)

    def current(self, i):
        """Corrected current a(grad phi_i + e_i) as a face field."""
        e = np.zeros(self.grid.dim)
        e[i] = 1.0
        q = flux(self.field, self.phi[i])
        axi = coefficient_times_vector(self.field, e)
        return VectorField(self.grid, [q.comps[k] + axi.comps[k] for k in range(self.grid.dim)])


def solve_correctors(field, tol=DEFAULT_TOL):
    phi = {}
    stats = {}
    for i in range(field.grid.dim):
        e = np.zeros(field.grid.dim)
        e[i] = 1.0
        phi[i], stats[i] = solve_corrector(field, e, tol=tol)
    return CorrectorSet(field, phi, stats)


# ---------------------------------------------------------------------------
# homogenized matrix
# ---------------------------------------------------------------------------


@dataclass
class HomogenizedMatrix:
    matrix: np.ndarray
    samples: list  # per-realization matrices
    stderr: np.ndarray

    @property
    def sample_count(self):
        return len(self.samples)


def homogenized_matrix(cset):
    """Columns are the exact face-family averages of the corrected
    currents of the coordinate correctors."""
    d = cset.grid.dim
    a_hom = np.zeros((d, d))
    for i in range(d):
        cur = cset.current(i)
        for k in range(d):
            a_hom[k, i] = float(cur.comps[k].mean())
    return a_hom


def monte_carlo_homogenized(spec, grid, seeds, tol=DEFAULT_TOL):
    """Independent realizations; mean and standard error per entry."""
    samples = []
    for s in seeds:
        sp = dataclass_replace_seed(spec, s)
        f = sample_field(sp, grid)
        cset = solve_correctors(f, tol=tol)
        samples.append(homogenized_matrix(cset))
    arr = np.stack(samples)
    mean = arr.mean(axis=0)
    stderr = arr.std(axis=0, ddof=1) / np.sqrt(len(samples)) if len(samples) > 1 else 0.0 * mean
    return HomogenizedMatrix(mean, samples, stderr)


def dataclass_replace_seed(spec, seed):
    from dataclasses import replace

    return replace(spec, seed=int(seed))


def flux_correction(cset, a_hom, i):
    """q_i = a(grad phi_i + e_i) - a_hom e_i as a face field."""
    cur = cset.current(i)
    d = cset.grid.dim
    comps = [cur.comps[k] - a_hom[k, i] for k in range(d)]
    return VectorField(cset.grid, comps)


# ---------------------------------------------------------------------------
# flux potentials (staggered Hodge construction)
# ---------------------------------------------------------------------------


def _diff_down(arr, axis, h):
    """Difference toward the integer-offset home: (f - roll(f,1))/h."""
    return (arr - np.roll(arr, 1, axis=axis)) / h


def _diff_up(arr, axis, h):
    """Difference toward the half-offset home: (roll(f,-1) - f)/h."""
    return (np.roll(arr, -1, axis=axis) - arr) / h


def torus_inverse_laplacian(grid, arr):
    """Zero-mean solution of -lap u = arr on the torus (any home)."""
    d = grid.dim
    sym = np.zeros(grid.shape)
    for a in range(d):
        k = np.arange(grid.shape[a])
        lam = (2.0 - 2.0 * np.cos(2.0 * np.pi * k / grid.shape[a])) / (grid.h * grid.h)
        sym = sym + lam.reshape([-1 if i == a else 1 for i in range(d)])
    hat = np.fft.fftn(arr)
    flat = sym.reshape(-1)
    flat[0] = 1.0
    hat = hat / sym
    hat.reshape(-1)[0] = 0.0
    out = np.real(np.fft.ifftn(hat))
    return out - out.mean()


@dataclass
class FluxPotentialSet:
    """Skew flux potentials sigma_jk (stored once per j < k) on the
    staggered pair homes; sigma_kj = -sigma_jk exactly by access."""

    grid: Grid
    sigma: dict  # (j, k) with j < k -> ScalarField at pair home

    def component(self, j, k):
        if j == k:
            return np.zeros(self.grid.home_shape(pair_offsets(self.grid.dim, j, k)))
        if j < k:
            return self.sigma[(j, k)].values
        return -self.sigma[(k, j)].values

    def row_divergence(self, j):
        """sum_k d_k sigma_jk at the j-face family."""
        h = self.grid.h
        out = None
        for k in range(self.grid.dim):
            if k == j:
                continue
            term = _diff_up(self.component(j, k), k, h)
            out = term if out is None else out + term
        return out

    def norm_sq_sum(self, r, center=None, half=None):
        """sum over all ordered pairs (j,k) of the ball mean of sigma_jk^2."""
        total = 0.0
        for (j, k), f in self.sigma.items():
            total += 2.0 * ball_mean_square(f, self.grid, r, center=center, half=half)
        return total


def solve_flux_potential(grid, q, div_tol=1e-6):
    """Flux potential of a divergence-free, mean-free face field q.

    Solves the gauge Poisson problem -lap sigma_jk = d_j q_k - d_k q_j on
    the staggered pair homes by FFT; the row-divergence identity then
    holds up to the divergence residual of q.
    """
    h = grid.h
    div = divergence(q)
    nq = np.sqrt(sum(float((c * c).sum()) for c in q.comps))
    ndiv = float(np.linalg.norm(div)) * h
    floor = 1e-13 * np.sqrt(div.size)  # all-round-off currents are fine
    if nq > floor and ndiv > div_tol * nq + floor:
        raise ValueError(f"current is not divergence-free: |div q| h = {ndiv:.3e} vs |q| = {nq:.3e}")
    sigma = {}
    d = grid.dim
    for j in range(d):
        for k in range(j + 1, d):
            omega = _diff_down(q.comps[k], j, h) - _diff_down(q.comps[j], k, h)
            vals = torus_inverse_laplacian(grid, omega)
            sigma[(j, k)] = ScalarField(grid, vals, pair_offsets(d, j, k))
    return FluxPotentialSet(grid, sigma)


def flux_potential_residual(fps, q_comps):
    """Relative L2 residual of the row-divergence identity."""
    num = 0.0
    den = 0.0
    for j in range(fps.grid.dim):
        r = fps.row_divergence(j) - q_comps[j]
        num += float((r * r).sum())
        den += float((q_comps[j] ** 2).sum())
    return np.sqrt(num / den) if den > 0 else np.sqrt(num)


@dataclass
class WholeSpacePair:
    """Corrector/flux-potential pair for all coordinate directions."""

    cset: CorrectorSet
    a_hom: np.ndarray
    q: dict  # i -> VectorField
    sigmas: dict  # i -> FluxPotentialSet


def solve_pair(field, tol=DEFAULT_TOL):
    cset = solve_correctors(field, tol=tol)
    a_hom = homogenized_matrix(cset)
    q = {}
    sigmas = {}
    for i in range(field.grid.dim):
        q[i] = flux_correction(cset, a_hom, i)
        sigmas[i] = solve_flux_potential(field.grid, q[i])
    return WholeSpacePair(cset, a_hom, q, sigmas)


# ---------------------------------------------------------------------------
# sublinearity diagnostics
# ---------------------------------------------------------------------------


def dyadic_radii(grid, r_min=None, r_max=None):
    """Radii 8h * 2^k up to the torus half-side (or r_max)."""
    r = 8.0 * grid.h if r_min is None else float(r_min)
    stop = grid.side / 2.0 if r_max is None else float(r_max)
    out = []
    while r <= stop + 1e-12:
        out.append(r)
        r *= 2.0
    return out


@dataclass
class SublinearityCurve:
    radii: np.ndarray
    delta: np.ndarray
    delta_gno: np.ndarray
    partial_sums: np.ndarray  # cumulative sum of log2(r) * delta^(1/3)
    partial_sums_gno: np.ndarray = None  # same series on the mean-subtracted curve

    def ratio(self, r_num, r_den):
        i = int(np.argmin(np.abs(self.radii - r_num)))
        j = int(np.argmin(np.abs(self.radii - r_den)))
        return self.delta[i] / self.delta[j]


def sublinearity_curve(pair, radii, center=None, directions=None):
    """delta_r and its mean-subtracted variant on dyadic balls around the
    origin, plus the partial sums of the quantified-ergodicity series
    (weights log2 r, increments log2(r) * delta_r^(1/3)).  The sum runs
    over the full coordinate frame unless a subset of direction indices
    is given."""
    grid = pair.cset.grid
    d = grid.dim
    if directions is None:
        directions = range(d)
    for r in radii:
        if abs(np.log2(r / grid.h) % 1.0) > 1e-9:
            raise ValueError(f"radius {r} is not dyadic in units of h")
    delta = []
    delta_gno = []
    for r in radii:
        tot = 0.0
        tot_g = 0.0
        for i in directions:
            phi = pair.cset.phi[i]
            msq, csq = _ball_raw_and_centered(phi.values, grid, r, phi.offsets, center)
            tot += msq
            tot_g += csq
            for (j, k), f in pair.sigmas[i].sigma.items():
                s_msq, s_csq = _ball_raw_and_centered(f.values, grid, r, f.offsets, center)
                tot += 2.0 * s_msq
                tot_g += 2.0 * s_csq
        delta.append(np.sqrt(tot) / r)
        delta_gno.append(np.sqrt(tot_g) / r)
    delta = np.asarray(delta)
    delta_gno = np.asarray(delta_gno)
    weights = np.log2(np.asarray(radii))
    partial = np.cumsum(weights * delta ** (1.0 / 3.0))
    partial_gno = np.cumsum(weights * delta_gno ** (1.0 / 3.0))
    return SublinearityCurve(np.asarray(radii), delta, delta_gno, partial, partial_gno)


def _ball_mean(values, grid, r, offsets, center):
    from .pde import _interior_mask

    mask = grid.ball_mask(offsets, r, center=center)
    mask &= _interior_mask(grid, offsets)
    v = values[mask]
    return float(v.mean()) if v.size else 0.0


def _ball_raw_and_centered(values, grid, r, offsets, center):
    """Ball means of f^2 and of (f - ball mean)^2, the latter computed
    directly to avoid cancellation."""
    from .pde import _interior_mask

    mask = grid.ball_mask(offsets, r, center=center)
    mask &= _interior_mask(grid, offsets)
    v = values[mask]
    if not v.size:
        return 0.0, 0.0
    m = float(v.mean())
    return float((v * v).mean()), float(((v - m) ** 2).mean())


def basis_change_check(pair, basis, r, center=None):
    """Evaluates the rotated-direction functional and the bound
    sqrt(d(d+1)/2) delta_r; returns (lhs, bound)."""
    grid = pair.cset.grid
    d = grid.dim
    B = np.asarray(basis, dtype=float)
    if B.shape != (d, d) or np.abs(B @ B.T - np.eye(d)).max() > 1e-10:
        raise ValueError("basis must be orthonormal (rows)")
    tot = 0.0
    for i in range(d):
        b = B[i]
        phi_b = pair.cset.phi_for(b)
        tot += ball_mean_square(phi_b, grid, r, center=center)
        for j in range(d):
            for k in range(d):
                if j == k:
                    continue
                lo, hi = min(j, k), max(j, k)
                sgn = 1.0 if j < k else -1.0
                comp = sum(b[w] * sgn * pair.sigmas[w].component(lo, hi) for w in range(d))
                f = ScalarField(grid, comp, pair_offsets(d, lo, hi))
                tot += ball_mean_square(f, grid, r, center=center)
    lhs = np.sqrt(tot) / r
    curve = sublinearity_curve(pair, [r], center=center)
    bound = np.sqrt(d * (d + 1) / 2.0) * curve.delta[0]
    return lhs, bound


# ---------------------------------------------------------------------------
# two-scale expansion error
# ---------------------------------------------------------------------------


@dataclass
class TwoScaleReport:
    grad_w: float
    grad_diff: float
    cutoff_width: float
    scale_warning: bool


def two_scale_error(field, pair, R, trace, rho=None, tol=1e-10):
    """Homogenization error on a Dirichlet window of half-width R.

    The window is the box [-R, R]^(d-1) x [0, R] cut from the torus; the
    heterogeneous solution u and the homogenized solution share the trace
    on all window sides.  Returns the gradient norms of the two-scale
    remainder w = u - u_hom - eta sum_i phi_i d_i u_hom (with a boundary
    cutoff eta of width rho) and of the plain difference u - u_hom.
    """
    from .field import restrict_to_half_box, restrict_values

    grid = field.grid
    if grid.topology != TORUS:
        raise ValueError("two-scale window is cut from a torus field")
    warn = R / 1.0 < 8.0
    window_field = restrict_to_half_box(field, R, tangential_periodic=False)
    wgrid = window_field.grid
    bc = BoundarySpec.half_box(
        wgrid, flat=Dirichlet(trace), top=Dirichlet(trace), lateral=Dirichlet(trace)
    )
    u, _ = solve(assemble(window_field, bc), tol=tol)
    d = grid.dim
    a_hom = pair.a_hom
    hom_faces = []
    for k in range(d):
        hom_faces.append(np.broadcast_to(a_hom, wgrid.face_shape(k) + (d, d)).copy())
    hom_field = CoefficientField(wgrid, hom_faces, lam=min(np.linalg.eigvalsh(0.5 * (a_hom + a_hom.T))))
    u_hom, _ = solve(assemble(hom_field, bc), tol=tol)

    if rho is None:
        rho = R ** (2.0 / 3.0)
    eta = _boundary_cutoff(wgrid, rho)
    du_hom = _cell_gradient(u_hom)
    corr = np.zeros(wgrid.shape)
    for i in range(d):
        phi_w = restrict_values(pair.cset.phi[i].values, grid, wgrid, cell_offsets(d))
        corr += phi_w * du_hom[i]
    w = ScalarField(wgrid, u.values - u_hom.values - eta * corr)
    diff = ScalarField(wgrid, u.values - u_hom.values)
    return TwoScaleReport(_grad_norm(w), _grad_norm(diff), rho, warn)


def _cell_gradient(u):
    g = gradient(u)
    grid = u.grid
    out = []
    for k in range(grid.dim):
        c = g.comps[k]
        if grid.periodic_axis(k):
            out.append(0.5 * (c + np.roll(c, -1, axis=k)))
        else:
            out.append(0.5 * (np.take(c, np.arange(grid.shape[k]), axis=k)
                              + np.take(c, np.arange(1, grid.shape[k] + 1), axis=k)))
    return out


def _boundary_cutoff(grid, rho):
    """Piecewise-linear ramp from 0 on the window boundary to 1 at
    distance rho inside."""
    dist = None
    for a in range(grid.dim):
        x = grid.coords(cell_offsets(grid.dim))[a]
        lo = x - (grid.origin[a])
        hi = (grid.origin[a] + grid.shape[a] * grid.h) - x
        d_a = np.minimum(lo, hi)
        dist = d_a if dist is None else np.minimum(dist, d_a)
    return np.clip(dist / rho, 0.0, 1.0)


def _grad_norm(u):
    g = gradient(u)
    grid = u.grid
    from .pde import _interior_mask
    from .grid import face_offsets

    tot = 0.0
    for k in range(grid.dim):
        mask = _interior_mask(grid, face_offsets(grid.dim, k))
        c = g.comps[k][mask]
        tot += float((c * c).sum())
    return float(np.sqrt(tot * grid.cell_volume()))
