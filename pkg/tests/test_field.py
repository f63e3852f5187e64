import numpy as np
import pytest

from homlab.grid import Grid
from homlab.field import (
    CoefficientField,
    EllipticityError,
    EnsembleSpec,
    FieldFileError,
    cell_matrices,
    checkerboard_assignment,
    load_field,
    restrict_to_half_box,
    sample_field,
    save_field,
    validate_ellipticity,
)


def test_constant_identity_every_face():
    grid = Grid.torus(2, 8)
    f = sample_field(EnsembleSpec.constant(np.eye(2)), grid)
    for k in range(2):
        assert np.array_equal(f.faces[k], np.broadcast_to(np.eye(2), f.faces[k].shape))


def test_laminate_depends_only_on_first_axis():
    grid = Grid.torus(2, 64)
    f = sample_field(EnsembleSpec.laminate(axis=0, values=(0.25, 1.0)), grid)
    for k in range(2):
        # scan rows: constant along axis 1
        assert np.allclose(f.faces[k], f.faces[k][:, :1], atol=0.0)


def test_checkerboard_fraction_and_determinism():
    grid = Grid.torus(2, 64)
    spec = EnsembleSpec.checkerboard(values=(0.25, 1.0), cell_size=1.0, seed=7)
    assign = checkerboard_assignment(spec, grid)
    frac = float((assign == 1).mean())
    assert 0.375 <= frac <= 0.625
    f1 = sample_field(spec, grid)
    f2 = sample_field(spec, grid)
    assert f1.equals(f2)


def test_checkerboard_face_values_from_harmonic_mean():
    grid = Grid.torus(2, 16)
    spec = EnsembleSpec.checkerboard(values=(0.25, 1.0), cell_size=1.0, seed=3)
    f = sample_field(spec, grid)
    vals = {round(v, 12) for v in np.unique(f.faces[0][..., 0, 0])}
    assert vals <= {0.25, 0.4, 1.0}


def test_ellipticity_report_identity():
    grid = Grid.torus(2, 8)
    f = sample_field(EnsembleSpec.constant(np.eye(2)), grid)
    rep = validate_ellipticity(f)
    assert rep.min_rayleigh == 1.0 and rep.max_gain == 1.0 and rep.ok


def test_ellipticity_scaled_field_violates_everywhere():
    grid = Grid.torus(2, 8)
    with pytest.raises(EllipticityError):
        sample_field(EnsembleSpec.constant(1.5 * np.eye(2), lam=0.25), grid)
    f = sample_field(EnsembleSpec.constant(np.eye(2)), grid)
    scaled = CoefficientField(grid, [1.5 * a for a in f.faces], lam=1.0)
    rep = validate_ellipticity(scaled)
    assert not rep.ok and rep.max_gain == 1.5 and len(rep.violations) > 0


def test_ellipticity_checkerboard_min_rayleigh():
    grid = Grid.torus(2, 64)
    f = sample_field(EnsembleSpec.checkerboard(values=(0.25, 1.0), seed=7), grid)
    rep = validate_ellipticity(f)
    # exhaustive face scan oracle
    lo = min(float(np.linalg.eigvalsh(0.5 * (m + m.T)).min())
             for k in range(2) for m in f.faces[k].reshape(-1, 2, 2))
    assert rep.min_rayleigh == pytest.approx(lo, abs=0.0)
    assert rep.min_rayleigh == pytest.approx(0.25, abs=1e-15)


def test_random_probe_inequalities():
    grid = Grid.torus(2, 16)
    for spec in [
        EnsembleSpec.checkerboard(values=(0.25, 1.0), seed=5),
        EnsembleSpec.gaussian_lipschitz(correlation_length=2.0, lam=0.25, seed=5),
    ]:
        f = sample_field(spec, grid)
        rng = np.random.default_rng(11)
        for k in range(2):
            mats = f.faces[k].reshape(-1, 2, 2)
            xi = rng.standard_normal((100, 2))
            xi /= np.linalg.norm(xi, axis=1, keepdims=True)
            for m in mats[:: max(1, len(mats) // 50)]:
                lower = np.einsum("pi,ij,pj->p", xi, m, xi)
                assert np.all(lower >= f.lam * np.einsum("pi,pi->p", xi, xi) - 1e-13)
                gain = np.linalg.norm(xi @ m.T, axis=1)
                assert np.all(gain <= np.linalg.norm(xi, axis=1) + 1e-13)


def test_gaussian_field_range_and_determinism():
    grid = Grid.torus(2, 64)
    spec = EnsembleSpec.gaussian_lipschitz(correlation_length=3.0, lam=0.25, seed=2)
    c1 = cell_matrices(spec, grid)
    c2 = cell_matrices(spec, grid)
    assert np.array_equal(c1, c2)
    d = c1[..., 0, 0]
    assert d.min() >= 0.25 and d.max() <= 1.0
    assert d.std() > 0.01  # genuinely random


def test_torus_periodicity_of_faces():
    grid = Grid.torus(2, 32)
    f = sample_field(EnsembleSpec.checkerboard(seed=1), grid)
    # faces are stored once per identified location; periodicity is exact
    # by construction, checked via index wrap of the generating cells
    cells = cell_matrices(EnsembleSpec.checkerboard(seed=1), grid)
    assert np.array_equal(cells, np.roll(np.roll(cells, 32, axis=0), 32, axis=1))


def test_restrict_half_box_constant_and_laminate():
    grid = Grid.torus(2, 32)
    const = sample_field(EnsembleSpec.constant(0.5 * np.eye(2)), grid)
    half = restrict_to_half_box(const, L=8.0, tangential_periodic=False)
    assert half.grid.shape == (16, 8)
    assert np.allclose(half.faces[0], 0.5 * np.eye(2), atol=0.0)
    lam = sample_field(EnsembleSpec.laminate(axis=0, values=(0.25, 1.0)), grid)
    hl = restrict_to_half_box(lam, L=8.0, tangential_periodic=False)
    assert np.allclose(hl.faces[1], hl.faces[1][:, :1], atol=0.0)


def test_restrict_half_box_checkerboard_index_arithmetic():
    grid = Grid.torus(2, 32)
    f = sample_field(EnsembleSpec.checkerboard(seed=7), grid)
    half = restrict_to_half_box(f, L=8.0, tangential_periodic=False)  # quarter side
    n, L_cells = 32, 8
    for j in range(half.grid.shape[0]):
        ti = (j - L_cells) % n
        assert np.array_equal(half.faces[1][j], f.faces[1][ti, : L_cells + 1])


def test_sample_field_on_half_box_matches_restriction():
    spec = EnsembleSpec.checkerboard(seed=9)
    torus = Grid.torus(2, 16)
    full = sample_field(spec, torus)
    direct = sample_field(spec, Grid.half_box(2, 16))
    via = restrict_to_half_box(full, L=8.0)
    assert direct.equals(via)


def test_save_load_round_trip(tmp_path):
    grid = Grid.torus(2, 16)
    for spec in [EnsembleSpec.constant(np.eye(2)), EnsembleSpec.checkerboard(seed=7)]:
        f = sample_field(spec, grid)
        p = tmp_path / "f.bin"
        save_field(f, p)
        g = load_field(p)
        assert f.equals(g)
    half = restrict_to_half_box(sample_field(EnsembleSpec.checkerboard(seed=7), grid), 8.0)
    p = tmp_path / "h.bin"
    save_field(half, p)
    assert load_field(p).equals(half)


def test_load_truncated_file_raises(tmp_path):
    grid = Grid.torus(2, 8)
    f = sample_field(EnsembleSpec.constant(np.eye(2)), grid)
    p = tmp_path / "f.bin"
    save_field(f, p)
    raw = p.read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[: len(raw) - 16])
    with pytest.raises(FieldFileError):
        load_field(tmp_path / "t.bin")
    (tmp_path / "m.bin").write_bytes(b"NOTAFIELD" + raw)
    with pytest.raises(FieldFileError):
        load_field(tmp_path / "m.bin")


def test_data_field_round_trip(tmp_path):
    from homlab.field import load_data_field, save_data_field

    grid = Grid.torus(2, 8)
    rng = np.random.default_rng(0)
    scalar = rng.standard_normal(grid.shape)
    p = tmp_path / "scalar.bin"
    save_data_field(p, grid, "scalar", [scalar])
    g2, kind, arrays = load_data_field(p)
    assert kind == "scalar" and g2 == grid
    assert np.array_equal(arrays[0], scalar)
    vec = [rng.standard_normal(grid.face_shape(k)) for k in range(2)]
    pv = tmp_path / "vector.bin"
    save_data_field(pv, grid, "vector", vec)
    g3, kind, arrays = load_data_field(pv)
    assert kind == "vector"
    assert all(np.array_equal(a, b) for a, b in zip(arrays, vec))
    raw = pv.read_bytes()
    (tmp_path / "trunc.bin").write_bytes(raw[:-8])
    with pytest.raises(FieldFileError):
        load_data_field(tmp_path / "trunc.bin")


def test_restrict_errors():
    grid = Grid.torus(2, 16)
    f = sample_field(EnsembleSpec.constant(np.eye(2)), grid)
    with pytest.raises(ValueError):
        restrict_to_half_box(f, L=12.0)  # slab narrower than the torus
    with pytest.raises(ValueError):
        restrict_to_half_box(f, L=3.3, tangential_periodic=False)  # off-grid plane
    with pytest.raises(ValueError):
        restrict_to_half_box(f, L=16.0, tangential_periodic=False)  # 2L > side
