import numpy as np
import pytest

from homlab.grid import Grid, cell_offsets
from homlab.field import EnsembleSpec, sample_field
from homlab.corrector import solve_pair
from homlab.halfspace import build_halfspace_set
from homlab.pde import ScalarField
from homlab.excess import (
    band_limited_trace,
    coercivity_check,
    excess,
    excess_decay_experiment,
    harmonic_sample,
    liouville_check,
    mean_value_check,
    smallness_radius,
)


def make_setup(n=64, seed=7, values=(0.25, 1.0), constant=None, tol=1e-12):
    grid = Grid.torus(2, n)
    if constant is not None:
        spec = EnsembleSpec.constant(constant)
    else:
        spec = EnsembleSpec.checkerboard(values=values, seed=seed)
    f = sample_field(spec, grid)
    pair = solve_pair(f, tol=tol)
    hset = build_halfspace_set(f, pair, L=n / 2.0)
    return f, pair, hset


def slab_affine_plus_corrector(hset, i=0, constant=0.0):
    grid = hset.grid
    cells = grid.coords(cell_offsets(2))
    b = hset.basis.vectors[i]
    vals = b[0] * cells[0] + b[1] * cells[1] + hset.phi_h[i].values + constant
    return ScalarField(grid, vals)


# -- harmonic samples ---------------------------------------------------------


def test_harmonic_sample_affine_exact_for_constant_field():
    f, pair, hset = make_setup(constant=np.eye(2))
    b = hset.basis.vectors[0]
    s = harmonic_sample(f, R=16.0, trace=lambda x, y: b[0] * x + b[1] * y)
    cells = s.u.grid.coords(cell_offsets(2))
    target = b[0] * cells[0] + b[1] * cells[1]
    assert np.abs(s.u.values - target).max() <= 1e-9


def test_harmonic_sample_constant_trace():
    f, pair, hset = make_setup(constant=0.5 * np.eye(2))
    s = harmonic_sample(f, R=16.0, trace=lambda x, y: 2.0)
    assert np.abs(s.u.values - 2.0).max() <= 1e-10


def test_harmonic_sample_band_limited_residual():
    f, pair, hset = make_setup(n=64, seed=3)
    trace = band_limited_trace(seed=0, box_half_width=16.0)
    s = harmonic_sample(f, R=16.0, trace=trace, tol=1e-11)
    assert s.residual <= 1e-11
    assert s.energy < 0.0  # Dirichlet energy functional at the solution


# -- excess -------------------------------------------------------------------


def test_excess_exact_member_is_floored():
    f, pair, hset = make_setup(n=64, seed=7)
    u = slab_affine_plus_corrector(hset, 0)
    scale = 1.0  # |b_1 + grad phi|^2 is order one
    for r in (8.0, 16.0):
        ev = excess(u, r, hset)
        assert ev.value <= 1e-12 * scale
        assert np.abs(ev.minimizer - hset.basis.vectors[0]).max() <= 1e-6


def test_excess_constant_function_constant_field():
    f, pair, hset = make_setup(constant=np.eye(2))
    u = ScalarField(hset.grid, np.full(hset.grid.shape, 3.0))
    ev = excess(u, 8.0, hset)
    assert ev.value <= 1e-14
    assert np.abs(ev.minimizer).max() <= 1e-12


def test_excess_quadratic_homogeneity_and_invariance():
    f, pair, hset = make_setup(n=64, seed=5)
    trace = band_limited_trace(seed=1, box_half_width=16.0)
    s = harmonic_sample(f, R=16.0, trace=trace)
    u = s.u
    ev1 = excess(u, 8.0, hset)
    u3 = ScalarField(u.grid, 3.0 * u.values)
    ev3 = excess(u3, 8.0, hset)
    assert ev3.value == pytest.approx(9.0 * ev1.value, rel=1e-12)
    assert np.allclose(ev3.minimizer, 3.0 * ev1.minimizer, rtol=1e-10, atol=1e-12)
    u_shift = ScalarField(u.grid, u.values + 17.0)
    ev_s = excess(u_shift, 8.0, hset)
    # gradients of u + c reproduce those of u to the last ulp of the
    # shifted differences
    assert ev_s.value == pytest.approx(ev1.value, rel=1e-12)


def test_excess_first_order_optimality():
    f, pair, hset = make_setup(n=64, seed=9)
    trace = band_limited_trace(seed=2, box_half_width=16.0)
    u = harmonic_sample(f, R=16.0, trace=trace).u
    ev = excess(u, 8.0, hset)

    def functional(t):
        from homlab.excess import _face_masks, _fint_product, corrected_gradient_family
        from homlab.pde import gradient

        masks = _face_masks(u.grid, 8.0)
        fam = corrected_gradient_family(hset, u.grid)[0]
        g = gradient(u)
        resid = [g.comps[k] - t * fam[k] for k in range(2)]
        return _fint_product(resid, resid, masks)

    rng = np.random.default_rng(0)
    t_star = ev.coefficients[0]
    for _ in range(100):
        t = t_star + rng.uniform(-1.0, 1.0)
        assert functional(t) >= ev.value - 1e-12


def test_excess_minimizer_matches_brute_force_search():
    f, pair, hset = make_setup(n=32, seed=4)
    trace = band_limited_trace(seed=3, box_half_width=8.0)
    u = harmonic_sample(f, R=8.0, trace=trace).u
    ev = excess(u, 4.0, hset)
    ts = np.arange(-4.0, 4.0 + 1e-9, 1e-3)
    from homlab.excess import _face_masks, _fint_product, corrected_gradient_family
    from homlab.pde import gradient

    masks = _face_masks(u.grid, 4.0)
    fam = corrected_gradient_family(hset, u.grid)[0]
    g = gradient(u)
    a = _fint_product(fam, fam, masks)
    blin = _fint_product(g.comps, fam, masks)
    cc = _fint_product(g.comps, g.comps, masks)
    vals = cc - 2 * ts * blin + ts**2 * a
    t_best = ts[int(np.argmin(vals))]
    assert abs(t_best - ev.coefficients[0]) <= 2e-3


# -- excess decay -------------------------------------------------------------


def test_excess_decay_quadratic_oracle():
    # constant coefficients, quadratic trace with zero flat flux:
    # the decay ratio is exactly (r/R)^2 up to quadrature
    f, pair, hset = make_setup(n=64, constant=np.eye(2))
    s = harmonic_sample(f, R=32.0, trace=lambda x, y: x * x - y * y, tol=1e-12)
    radii = [8.0, 16.0, 32.0]
    rep = excess_decay_experiment(s, hset, radii)
    for r, v in zip(rep.radii, rep.excess):
        expect = v if r == 32.0 else None
    base = rep.excess[-1]
    for r, v in zip(rep.radii, rep.excess):
        assert v / base == pytest.approx((r / 32.0) ** 2, rel=0.05)
    assert rep.fitted_alpha == pytest.approx(1.0, abs=0.05)


def test_excess_decay_floored_member_skips_fit():
    f, pair, hset = make_setup(n=64, seed=7)
    u = slab_affine_plus_corrector(hset, 0)
    sample = type("S", (), {"u": u})()
    rep = excess_decay_experiment(sample, hset, [8.0, 16.0])
    assert np.isnan(rep.fitted_alpha)
    assert len(rep.floored) == 2


def test_excess_decay_checkerboard_alpha_positive():
    f, pair, hset = make_setup(n=128, seed=7)
    trace = band_limited_trace(seed=7, box_half_width=32.0)
    s = harmonic_sample(f, R=32.0, trace=trace)
    rep = excess_decay_experiment(s, hset, [8.0, 16.0, 32.0])
    assert rep.fitted_alpha > 0.2
    assert all(v > 0 for v in rep.pair_ratios.values())


# -- coercivity and mean value ------------------------------------------------


def test_coercivity_constant_field_exact():
    f, pair, hset = make_setup(constant=np.eye(2))
    rep = coercivity_check(hset, r=8.0)
    assert np.allclose(rep.values, rep.magnitudes**2, rtol=1e-12)
    assert rep.ok
    # exact factor 16 between consecutive magnitudes
    assert rep.values[1] / rep.values[0] == pytest.approx(16.0, rel=1e-14)


def test_coercivity_checkerboard_above_bound():
    f, pair, hset = make_setup(n=64, seed=7)
    rep = coercivity_check(hset, r=16.0)
    assert rep.ok
    assert rep.empirical_constant > (1.0 / 16.0) ** 3


def test_smallness_radius_helper():
    from homlab.halfspace import half_sublinearity_curve

    f, pair, hset = make_setup(n=128, seed=7)
    curve = half_sublinearity_curve(hset, [8.0, 16.0, 32.0])
    r_star = smallness_radius(curve, threshold=curve.delta_h[1])
    assert r_star in (8.0, 16.0)
    assert smallness_radius(curve, threshold=1e-9) is None


def test_mean_value_affine_and_degenerate():
    f, pair, hset = make_setup(constant=np.eye(2))
    b = hset.basis.vectors[0]
    s = harmonic_sample(f, R=16.0, trace=lambda x, y: b[0] * x + b[1] * y)
    rep = mean_value_check(s, [4.0, 8.0, 16.0])
    assert np.allclose(rep.ratios, 1.0, atol=1e-9)
    assert not rep.zero_energy
    s0 = harmonic_sample(f, R=16.0, trace=lambda x, y: 1.5)
    rep0 = mean_value_check(s0, [4.0, 8.0, 16.0])
    assert rep0.zero_energy and np.all(rep0.ratios == 1.0)


def test_mean_value_checkerboard_bounded():
    f, pair, hset = make_setup(n=64, seed=2)
    trace = band_limited_trace(seed=5, box_half_width=16.0)
    s = harmonic_sample(f, R=16.0, trace=trace)
    rep = mean_value_check(s, [4.0, 8.0, 16.0])
    assert rep.c_mean < 20.0


# -- Liouville ----------------------------------------------------------------


def test_liouville_recovery_of_corrected_affine():
    f, pair, hset = make_setup(n=64, seed=7)
    u = slab_affine_plus_corrector(hset, 0, constant=3.0)
    rep = liouville_check(u, hset, [8.0, 16.0])
    assert np.abs(rep.b_tilde - hset.basis.vectors[0]).max() <= 1e-8
    assert rep.constant == pytest.approx(3.0, abs=1e-8)
    assert max(rep.residual_profile.values()) <= 1e-10
    assert rep.minimizer_drift <= 1e-8


def test_liouville_quadratic_flagged():
    f, pair, hset = make_setup(constant=np.eye(2))
    grid = hset.grid
    cells = grid.coords(cell_offsets(2))
    u = ScalarField(grid, cells[0] ** 2 - cells[1] ** 2)
    rep = liouville_check(u, hset, [4.0, 8.0, 16.0])
    assert not rep.subquadratic


def test_liouville_stability_from_harmonic_sample():
    f, pair, hset = make_setup(n=64, seed=7)
    b = hset.basis.vectors[0]
    phi = hset.phi_h[0]
    grid = hset.grid

    def trace(x, y):
        i = np.clip(np.rint((x - grid.origin[0]) / grid.h - 0.5).astype(int), 0, grid.shape[0] - 1)
        j = np.clip(np.rint((y - grid.origin[1]) / grid.h - 0.5).astype(int), 0, grid.shape[1] - 1)
        return b[0] * x + b[1] * y + phi.values[i, j]

    s = harmonic_sample(f, R=32.0, trace=trace)
    rep = liouville_check(s.u, hset, [8.0, 16.0])
    assert rep.minimizer_drift <= 0.05
    assert np.abs(rep.b_tilde - b).max() <= 0.1


def test_caccioppoli_ratios_bounded_for_harmonic_samples():
    from homlab.pde import caccioppoli_ratio

    f, pair, hset = make_setup(n=128, seed=7)
    trace = band_limited_trace(seed=4, box_half_width=32.0)
    s = harmonic_sample(f, R=32.0, trace=trace, tol=1e-11)
    ratios = []
    for r in (8.0, 16.0):
        rep = caccioppoli_ratio(s.u, s.field, r=r)
        assert not rep.warning
        ratios.append(rep.ratio)
    assert max(ratios) < 10.0


def test_excess_monotone_window_property():
    # freezing the large-radius minimizer upper-bounds the infimum
    from homlab.excess import _face_masks, _fint_product, corrected_gradient_family
    from homlab.pde import gradient

    f, pair, hset = make_setup(n=64, seed=6)
    trace = band_limited_trace(seed=6, box_half_width=16.0)
    u = harmonic_sample(f, R=16.0, trace=trace).u
    ev_R = excess(u, 16.0, hset)
    t_R = ev_R.coefficients[0]
    for r in (4.0, 8.0):
        ev_r = excess(u, r, hset)
        masks = _face_masks(u.grid, r)
        fam = corrected_gradient_family(hset, u.grid)[0]
        g = gradient(u)
        resid = [g.comps[k] - t_R * fam[k] for k in range(2)]
        frozen = _fint_product(resid, resid, masks)
        assert frozen >= ev_r.value - 1e-12
