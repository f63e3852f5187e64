"""Random uniformly elliptic coefficient fields on periodized boxes.

Members of the admissible class satisfy, for every stored face matrix a,

    |a xi| <= |xi|   and   lam |xi|^2 <= xi . a xi   for all xi,

with the lower bound read through the symmetric part.  Coefficients are
stored on faces (face-normal sampling): ensembles generate matrices per
cell, and the face value between two cells is their harmonic mean (SPD
pairs) so that one-dimensional flux continuity is exact; this makes the
classical laminate formulas hold exactly on the discrete level.

Ensembles: constant matrices, laminates, iid checkerboards with unit
range of dependence, and clipped Gaussian fields sampled spectrally on
the torus (the Lipschitz image of a stationary Gaussian field).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field as dc_field

import numpy as np

from .grid import Grid, HALF_BOX, TORUS, face_offsets

MAGIC = b"HOMLAB-FIELD-v1\n"


class FieldFileError(ValueError):
    """Raised on malformed or truncated field files."""


class EllipticityError(ValueError):
    """Raised when a sampled field leaves the admissible class."""

    def __init__(self, message, matrix=None, where=None):
        super().__init__(message)
        self.matrix = matrix
        self.where = where


# ---------------------------------------------------------------------------
# coefficient field
# ---------------------------------------------------------------------------


@dataclass
class CoefficientField:
    """Face-sampled coefficient tensors.  Treated as immutable after
    construction, so realizations are safe to share across concurrent
    solves; independent realizations come from independent seeds."""

    grid: Grid
    faces: list  # per axis, shape face_shape(axis) + (d, d)
    lam: float
    seed: int = 0

    def __post_init__(self):
        d = self.grid.dim
        if len(self.faces) != d:
            raise ValueError("need one face array per axis")
        self.faces = [np.ascontiguousarray(f, dtype=float) for f in self.faces]
        for k, f in enumerate(self.faces):
            expect = self.grid.face_shape(k) + (d, d)
            if f.shape != expect:
                raise ValueError(f"face array {k}: shape {f.shape} != {expect}")

    def is_symmetric(self, rtol=1e-12):
        for f in self.faces:
            diff = np.abs(f - np.swapaxes(f, -1, -2)).max()
            if diff > rtol * max(np.abs(f).max(), 1.0):
                return False
        return True

    def has_offdiagonal(self):
        d = self.grid.dim
        off = ~np.eye(d, dtype=bool)
        return any(np.any(f[..., off]) for f in self.faces)

    def equals(self, other):
        return (
            self.grid == other.grid
            and self.lam == other.lam
            and self.seed == other.seed
            and all(np.array_equal(a, b) for a, b in zip(self.faces, other.faces))
        )

    def constant_value(self):
        """The single matrix of a spatially constant field, or None."""
        a0 = self.faces[0].reshape(-1, self.grid.dim, self.grid.dim)[0]
        for f in self.faces:
            if not np.allclose(f, a0, rtol=0.0, atol=0.0):
                return None
        return a0.copy()


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


@dataclass
class EnsembleSpec:
    kind: str
    lam: float
    seed: int = 0
    params: dict = dc_field(default_factory=dict)

    @staticmethod
    def constant(a0, lam=None):
        a0 = np.asarray(a0, dtype=float)
        if lam is None:
            lam = float(np.linalg.eigvalsh(0.5 * (a0 + a0.T)).min())
        return EnsembleSpec("constant", lam, 0, {"a0": a0.tolist()})

    @staticmethod
    def laminate(axis=0, values=(0.25, 1.0), width=1.0, lam=None):
        vals = [np.asarray(v, dtype=float).tolist() for v in values]
        if lam is None:
            lam = min(_value_rayleigh(v) for v in vals)
        return EnsembleSpec("laminate", lam, 0, {"axis": axis, "values": vals, "width": width})

    @staticmethod
    def checkerboard(values=(0.25, 1.0), cell_size=1.0, lam=None, seed=0):
        vals = [np.asarray(v, dtype=float).tolist() for v in values]
        if lam is None:
            lam = min(_value_rayleigh(v) for v in vals)
        return EnsembleSpec("checkerboard", lam, seed, {"values": vals, "cell_size": cell_size})

    @staticmethod
    def gaussian_lipschitz(correlation_length=2.0, lam=0.25, seed=0, mean=None, scale=None):
        if mean is None:
            mean = 0.5 * (1.0 + lam)
        if scale is None:
            scale = 0.25 * (1.0 - lam)
        return EnsembleSpec(
            "gaussian_lipschitz",
            lam,
            seed,
            {"correlation_length": correlation_length, "mean": mean, "scale": scale},
        )

    def to_dict(self):
        return {"kind": self.kind, "lam": self.lam, "seed": self.seed, "params": self.params}

    @staticmethod
    def from_dict(d):
        return EnsembleSpec(d["kind"], float(d["lam"]), int(d.get("seed", 0)), d.get("params", {}))


def _value_rayleigh(v):
    """Smallest symmetric-part eigenvalue of a scalar or matrix value."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        return float(v)
    return float(np.linalg.eigvalsh(0.5 * (v + v.T)).min())


def _matrix_list(values, dim):
    out = []
    for v in values:
        v = np.asarray(v, dtype=float)
        if v.ndim == 0:
            out.append(float(v) * np.eye(dim))
        elif v.shape == (dim, dim):
            out.append(v)
        else:
            raise ValueError(f"ensemble value with shape {v.shape}, need scalar or ({dim},{dim})")
    return np.stack(out)







def checkerboard_assignment(spec, grid):
    """iid unit-cell assignment of the checkerboard on the ambient torus,
    deterministic in the seed."""
    cs = float(spec.params.get("cell_size", 1.0))
    per_unit = cs / grid.h
    if abs(per_unit - round(per_unit)) > 1e-12 or round(per_unit) < 1:
        raise ValueError(f"cell_size {cs} not an integer multiple of h={grid.h}")
    units = grid.side / cs
    if abs(units - round(units)) > 1e-12:
        raise ValueError("torus side must hold an integer number of unit cells")
    units = int(round(units))
    rng = np.random.default_rng(spec.seed)
    nvals = len(spec.params["values"])
    return rng.integers(0, nvals, size=(units,) * grid.dim)


def cell_matrices(spec, grid):
    """Per-cell coefficient matrices of an ensemble on a torus grid."""
    if grid.topology != TORUS:
        raise ValueError("cell sampling happens on the ambient torus")
    d = grid.dim
    shape = grid.shape
    if spec.kind == "constant":
        a0 = np.asarray(spec.params["a0"], dtype=float)
        if a0.ndim == 0:
            a0 = float(a0) * np.eye(d)
        return np.broadcast_to(a0, shape + (d, d)).copy()
    if spec.kind == "laminate":
        axis = int(spec.params.get("axis", 0))
        width = float(spec.params.get("width", 1.0))
        vals = _matrix_list(spec.params["values"], d)
        x = grid.points_along(axis, 0.5)
        stripe = np.floor(x / width).astype(int) % len(vals)
        out = vals[stripe]  # (n, d, d)
        reps = list(shape) + [1, 1]
        reps[axis] = 1
        out = out.reshape([shape[axis] if a == axis else 1 for a in range(d)] + [d, d])
        return np.tile(out, reps)
    if spec.kind == "checkerboard":
        vals = _matrix_list(spec.params["values"], d)
        assign = checkerboard_assignment(spec, grid)
        per_unit = int(round(float(spec.params.get("cell_size", 1.0)) / grid.h))
        for a in range(d):
            assign = np.repeat(assign, per_unit, axis=a)
        return vals[assign]
    if spec.kind == "gaussian_lipschitz":
        ell = float(spec.params["correlation_length"])
        mean = float(spec.params["mean"])
        scale = float(spec.params["scale"])
        disp = grid.displacement((0.0,) * d)
        rho2 = sum(x * x for x in disp)
        cov = np.exp(-rho2 / (2.0 * ell * ell))
        eig = np.maximum(np.fft.fftn(cov).real, 0.0)
        rng = np.random.default_rng(spec.seed)
        white = rng.standard_normal(shape)
        g = np.fft.ifftn(np.sqrt(eig) * np.fft.fftn(white)).real
        lo = spec.lam * (1.0 + 1e-9)
        hi = 1.0 - 1e-12
        m = np.clip(mean + scale * g, lo, hi)
        return m[..., None, None] * np.eye(d)
    raise ValueError(f"unknown ensemble kind {spec.kind!r}")


def _pair_mean(a, b):
    """Face value between two cell matrices: harmonic mean for SPD pairs
    (diagonal fast path), arithmetic otherwise."""
    d = a.shape[-1]
    off = ~np.eye(d, dtype=bool)
    diag_only = not (np.any(a[..., off]) or np.any(b[..., off]))
    if diag_only:
        out = np.zeros_like(a)
        ii = np.arange(d)
        da, db = a[..., ii, ii], b[..., ii, ii]
        if np.all(da > 0) and np.all(db > 0):
            out[..., ii, ii] = 2.0 * da * db / (da + db)
        else:
            out[..., ii, ii] = 0.5 * (da + db)
        return out
    sym = np.array_equal(a, np.swapaxes(a, -1, -2)) and np.array_equal(
        b, np.swapaxes(b, -1, -2)
    )
    if sym:
        try:
            h = 2.0 * np.linalg.inv(np.linalg.inv(a) + np.linalg.inv(b))
            return 0.5 * (h + np.swapaxes(h, -1, -2))
        except np.linalg.LinAlgError:
            pass
    return 0.5 * (a + b)


def faces_from_cells(grid, cells):
    faces = []
    for k in range(grid.dim):
        if grid.periodic_axis(k):
            faces.append(_pair_mean(np.roll(cells, 1, axis=k), cells))
        else:
            m = grid.shape[k]
            inner = _pair_mean(
                np.take(cells, np.arange(m - 1), axis=k),
                np.take(cells, np.arange(1, m), axis=k),
            )
            lo = np.take(cells, [0], axis=k)
            hi = np.take(cells, [m - 1], axis=k)
            faces.append(np.concatenate([lo, inner, hi], axis=k))
    return faces


def sample_field(spec, grid, validate=True):
    """Draw one realization of the ensemble on the grid.

    Deterministic in (spec, grid, seed); torus fields are exactly
    periodic, and half-box grids receive the restriction of the ambient
    torus realization with the same n and h.
    """
    if grid.topology == HALF_BOX:
        ambient = Grid.torus(grid.dim, grid.n, grid.h)
        full = sample_field(spec, ambient, validate=validate)
        return restrict_to_half_box(full, grid.height, grid.tangential_periodic)
    cells = cell_matrices(spec, grid)
    faces = faces_from_cells(grid, cells)
    out = CoefficientField(grid, faces, lam=spec.lam, seed=spec.seed)
    if validate:
        rep = validate_ellipticity(out)
        if not rep.ok:
            ax, idx, mat = rep.violations[0]
            raise EllipticityError(
                f"sampled field leaves the admissible class at axis {ax}, face {idx}: "
                f"rayleigh {rep.min_rayleigh:.6g}, gain {rep.max_gain:.6g}",
                matrix=mat,
                where=(ax, idx),
            )
    return out


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass
class EllipticityReport:
    lam: float
    min_rayleigh: float
    max_gain: float
    violations: list  # (axis, index tuple, matrix), capped
    ok: bool


def validate_ellipticity(field, slack=1e-12, max_violations=10):
    """Exact per-face check of the two admissibility inequalities.

    min_rayleigh is the smallest eigenvalue of any symmetric part,
    max_gain the largest operator norm |a xi| / |xi|.
    """
    d = field.grid.dim
    min_r = np.inf
    max_g = 0.0
    violations = []
    for ax, f in enumerate(field.faces):
        flat = f.reshape(-1, d, d)
        sym = 0.5 * (flat + np.swapaxes(flat, -1, -2))
        eigs = np.linalg.eigvalsh(sym)
        svals = np.linalg.svd(flat, compute_uv=False)
        r = eigs[:, 0]
        g = svals[:, 0]
        min_r = min(min_r, float(r.min()))
        max_g = max(max_g, float(g.max()))
        bad = np.nonzero((r < field.lam - slack) | (g > 1.0 + slack))[0]
        for b in bad[: max_violations - len(violations)]:
            idx = np.unravel_index(b, field.grid.face_shape(ax))
            violations.append((ax, idx, flat[b].copy()))
    ok = (min_r >= field.lam - slack) and (max_g <= 1.0 + slack)
    return EllipticityReport(field.lam, float(min_r), float(max_g), violations, ok)


# ---------------------------------------------------------------------------
# restriction to the half-box
# ---------------------------------------------------------------------------


def _axis_index_map(n_torus, n_half, half_origin, h, offset, periodic_axis_half, count):
    """Torus indices corresponding to half-box home points along one axis."""
    idx = np.arange(count)
    x = half_origin + (idx + offset) * h
    i = np.rint(x / h - offset).astype(int) % n_torus
    return i


def half_box_index_maps(torus_grid, half_grid, offsets):
    """Per-axis torus index arrays matching half-box home points."""
    maps = []
    for a in range(half_grid.dim):
        count = half_grid.home_shape(offsets)[a]
        maps.append(
            _axis_index_map(
                torus_grid.n,
                half_grid.n,
                half_grid.origin[a],
                half_grid.h,
                offsets[a],
                half_grid.periodic_axis(a),
                count,
            )
        )
    return maps


def restrict_to_half_box(field, L, tangential_periodic=True):
    """Restrict a torus coefficient field to the half-box of height L.

    Face matrices are copied from the torus field by index arithmetic,
    so they agree exactly at corresponding locations.
    """
    grid = field.grid
    if grid.topology != TORUS:
        raise ValueError("restriction starts from a torus field")
    if 2.0 * L > grid.side + 1e-12:
        raise ValueError(f"2L = {2*L} exceeds the torus side {grid.side}")
    if tangential_periodic and abs(2.0 * L - grid.side) > 1e-12:
        raise ValueError(
            "a tangentially periodic slab must span the full torus width "
            "(2L = side); use tangential_periodic=False for a narrower box"
        )
    n_half = 2.0 * L / grid.h
    if abs(n_half - round(n_half)) > 1e-12:
        raise ValueError("flat boundary must lie in a grid plane (L/h integral)")
    half = Grid.half_box(grid.dim, int(round(n_half)), grid.h, tangential_periodic)
    faces = []
    for k in range(grid.dim):
        offs = face_offsets(grid.dim, k)
        maps = half_box_index_maps(grid, half, offs)
        faces.append(field.faces[k][np.ix_(*maps)])
    return CoefficientField(half, faces, lam=field.lam, seed=field.seed)


def restrict_values(values, torus_grid, half_grid, offsets):
    """Restrict a torus home-point array to the matching half-box home."""
    maps = half_box_index_maps(torus_grid, half_grid, offsets)
    return np.asarray(values)[np.ix_(*maps)]


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _topology_token(grid):
    if grid.topology == TORUS:
        return "torus"
    return "half_slab" if grid.tangential_periodic else "half_box"


def _grid_from_token(dim, n, h, token):
    if token == "torus":
        return Grid.torus(dim, n, h)
    if token == "half_slab":
        return Grid.half_box(dim, n, h, tangential_periodic=True)
    if token == "half_box":
        return Grid.half_box(dim, n, h, tangential_periodic=False)
    raise FieldFileError(f"unknown topology token {token!r}")


def save_field(field, path):
    """Binary field format: magic, ASCII header `dim n h topology lambda
    seed`, then row-major little-endian float64 payload, faces ordered by
    (axis, index), d*d values per face."""
    grid = field.grid
    header = (
        f"{grid.dim} {grid.n} {grid.h!r} {_topology_token(grid)} "
        f"{field.lam!r} {field.seed}\n"
    )
    payload = np.concatenate([f.ravel() for f in field.faces]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode("ascii"))
        fh.write(payload.tobytes())


def _read_header(fh, path, expect_tokens):
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise FieldFileError(f"{path}: bad magic {magic!r}")
    line = b""
    while not line.endswith(b"\n"):
        c = fh.read(1)
        if not c:
            raise FieldFileError(f"{path}: truncated header")
        line += c
    tokens = line.decode("ascii").split()
    if len(tokens) not in expect_tokens:
        raise FieldFileError(f"{path}: header has {len(tokens)} tokens, want {expect_tokens}")
    return tokens


def load_field(path):
    with open(path, "rb") as fh:
        tokens = _read_header(fh, path, (6,))
        dim, n = int(tokens[0]), int(tokens[1])
        h = float(tokens[2])
        grid = _grid_from_token(dim, n, h, tokens[3])
        lam = float(tokens[4])
        seed = int(tokens[5])
        sizes = [int(np.prod(grid.face_shape(k))) * dim * dim for k in range(dim)]
        raw = fh.read()
    data = np.frombuffer(raw, dtype="<f8")
    if data.size != sum(sizes):
        raise FieldFileError(
            f"{path}: payload holds {data.size} floats, header implies {sum(sizes)}"
        )
    faces = []
    pos = 0
    for k in range(dim):
        chunk = data[pos : pos + sizes[k]]
        pos += sizes[k]
        faces.append(chunk.reshape(grid.face_shape(k) + (dim, dim)).copy())
    return CoefficientField(grid, faces, lam=lam, seed=seed)


def save_data_field(path, grid, kind, arrays):
    """Persist scalar ('scalar', one cell array) or vector ('vector', one
    array per face family) data in the field container with a kind tag."""
    header = f"{grid.dim} {grid.n} {grid.h!r} {_topology_token(grid)} 0.0 0 {kind}\n"
    payload = np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode("ascii"))
        fh.write(payload.tobytes())


def load_data_field(path):
    with open(path, "rb") as fh:
        tokens = _read_header(fh, path, (7,))
        dim, n = int(tokens[0]), int(tokens[1])
        h = float(tokens[2])
        grid = _grid_from_token(dim, n, h, tokens[3])
        kind = tokens[6]
        raw = fh.read()
    data = np.frombuffer(raw, dtype="<f8")
    if kind == "scalar":
        want = int(np.prod(grid.shape))
        if data.size != want:
            raise FieldFileError(f"{path}: scalar payload {data.size} != {want}")
        return grid, kind, [data.reshape(grid.shape).copy()]
    if kind == "vector":
        sizes = [int(np.prod(grid.face_shape(k))) for k in range(dim)]
        if data.size != sum(sizes):
            raise FieldFileError(f"{path}: vector payload {data.size} != {sum(sizes)}")
        arrays = []
        pos = 0
        for k in range(dim):
            arrays.append(data[pos : pos + sizes[k]].reshape(grid.face_shape(k)).copy())
            pos += sizes[k]
        return grid, kind, arrays
    raise FieldFileError(f"{path}: unknown kind {kind!r}")
