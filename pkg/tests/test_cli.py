import json

import numpy as np
import pytest

from homlab.cli import main, read_csv, CsvError, validate_config, ConfigError


def write_spec(tmp_path, n=32, seed=7):
    spec = {
        "kind": "checkerboard",
        "lam": 0.25,
        "seed": seed,
        "params": {"values": [0.25, 1.0], "cell_size": 1.0},
        "grid": {"dim": 2, "n": n, "h": 1.0, "topology": "torus"},
    }
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(spec))
    return p


def small_config(tmp_path, n=32, seeds=(0, 1)):
    cfg = {
        "ensemble": {"kind": "checkerboard", "lam": 0.25,
                     "params": {"values": [0.25, 1.0], "cell_size": 1.0}},
        "grid": {"dim": 2, "n": n, "h": 1.0},
        "seeds": list(seeds),
        "radii": [8.0],
        "halfspace": {"L": n / 2.0, "mode": "direct"},
        "excess": {"R": n / 4.0, "radii": [4.0, 8.0]},
        "tol": 1e-11,
    }
    p = tmp_path / "config.json"
    p.write_text(json.dumps(cfg))
    return p


def test_field_sample_and_check(tmp_path):
    spec = write_spec(tmp_path)
    out = tmp_path / "field.bin"
    assert main(["field", "sample", "--spec", str(spec), "--out", str(out)]) == 0
    assert out.exists()
    assert main(["field", "check", "--field", str(out)]) == 0


def test_field_check_flags_bad_field(tmp_path):
    spec = write_spec(tmp_path)
    out = tmp_path / "field.bin"
    main(["field", "sample", "--spec", str(spec), "--out", str(out)])
    from homlab.field import load_field, save_field

    f = load_field(out)
    for k in range(2):
        f.faces[k] *= 1.5
    bad = tmp_path / "bad.bin"
    save_field(f, bad)
    assert main(["field", "check", "--field", str(bad)]) == 4


def test_corrector_and_halfspace_commands(tmp_path):
    spec = write_spec(tmp_path)
    fld = tmp_path / "field.bin"
    main(["field", "sample", "--spec", str(spec), "--out", str(fld)])
    curve = tmp_path / "curve.csv"
    assert main(["corrector", "--field", str(fld), "--radii", "8:16",
                 "--out", str(curve)]) == 0
    header, rows = read_csv(curve)
    assert header == ["r", "delta", "delta_gno", "partial_sum_m"]
    assert len(rows) == 2
    hs_bin = tmp_path / "hs.npz"
    hs_csv = tmp_path / "hs.csv"
    assert main(["halfspace", "--field", str(fld), "--L", "16",
                 "--out", f"{hs_bin},{hs_csv}"]) == 0
    header, rows = read_csv(hs_csv)
    assert header[:2] == ["r", "delta_h"]
    bundle = np.load(hs_bin)
    assert "phi_h_0" in bundle and "__meta__" in bundle


def test_halfspace_dyadic_mode(tmp_path):
    spec = write_spec(tmp_path, n=64)
    fld = tmp_path / "field.bin"
    main(["field", "sample", "--spec", str(spec), "--out", str(fld)])
    hs_bin = tmp_path / "hs.npz"
    hs_csv = tmp_path / "hs.csv"
    assert main(["halfspace", "--field", str(fld), "--L", "32", "--mode", "dyadic",
                 "--r0", "8", "--n-max", "0", "--out", f"{hs_bin},{hs_csv}"]) == 0
    header, rows = read_csv(tmp_path / "hs.dyadic.csv")
    assert header == ["n", "l_n", "energy", "bound_shape"]


def test_excess_command(tmp_path):
    spec = write_spec(tmp_path)
    fld = tmp_path / "field.bin"
    main(["field", "sample", "--spec", str(spec), "--out", str(fld)])
    out = tmp_path / "excess.csv"
    assert main(["excess", "--field", str(fld), "--R", "8", "--seeds", "2",
                 "--out", str(out)]) == 0
    header, rows = read_csv(out)
    assert header == ["seed", "r", "excess", "b1", "b2", "ratio", "fitted_alpha", "mvp_ratio"]
    assert {int(r[0]) for r in rows} == {0, 1}


def test_pipeline_determinism_and_cache(tmp_path):
    cfg = small_config(tmp_path)
    out1 = tmp_path / "run1"
    out2 = tmp_path / "run2"
    assert main(["pipeline", "--config", str(cfg), "--out-dir", str(out1)]) == 0
    assert main(["pipeline", "--config", str(cfg), "--out-dir", str(out2)]) == 0
    csvs1 = sorted(p.name for p in out1.glob("*.csv"))
    csvs2 = sorted(p.name for p in out2.glob("*.csv"))
    assert csvs1 == csvs2 and csvs1
    for name in csvs1:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    # cached rerun leaves outputs byte-identical
    before = {p.name: p.read_bytes() for p in out1.glob("*.csv")}
    assert main(["pipeline", "--config", str(cfg), "--out-dir", str(out1)]) == 0
    manifest = json.loads(sorted(out1.glob("manifest__*.json"))[-1].read_text())
    assert all(s.get("cached") for s in manifest["stages"].values())
    for p in out1.glob("*.csv"):
        assert p.read_bytes() == before[p.name]
    report = json.loads(sorted(out1.glob("report__*.json"))[-1].read_text())
    assert "a_hom_mean" in report and "halfspace_residuals" in report


def test_pipeline_bad_config_exit_code(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"grid": {"dim": 2, "n": 16}}))
    assert main(["pipeline", "--config", str(p), "--out-dir", str(tmp_path / "o")]) == 2
    p2 = tmp_path / "dup.json"
    p2.write_text(json.dumps({
        "ensemble": {"kind": "checkerboard", "lam": 0.25, "params": {"values": [0.25, 1.0]}},
        "grid": {"dim": 2, "n": 16},
        "seeds": [0, 0],
    }))
    assert main(["pipeline", "--config", str(p2), "--out-dir", str(tmp_path / "o")]) == 2


def test_config_validation_rules():
    with pytest.raises(ConfigError):
        validate_config({"ensemble": {}, "grid": {"dim": 2, "n": 8}, "seeds": [0],
                         "radii": [9.0]})
    with pytest.raises(ConfigError):
        validate_config({"ensemble": {"kind": "checkerboard", "lam": 0.25, "params": {}},
                         "grid": {"dim": 2}, "seeds": [0]})


def test_report_malformed_csv(tmp_path):
    p = tmp_path / "broken.csv"
    p.write_text("r,delta\n1.0\n")
    with pytest.raises(CsvError) as err:
        read_csv(p)
    assert "broken.csv:2" in str(err.value)


def test_report_command(tmp_path):
    cfg = small_config(tmp_path, seeds=(0,))
    out = tmp_path / "run"
    main(["pipeline", "--config", str(cfg), "--out-dir", str(out)])
    for rp in out.glob("report__*.json"):
        rp.unlink()
    assert main(["report", "--out-dir", str(out), "--config", str(cfg)]) == 0
    assert list(out.glob("report__*.json"))


def test_excess_command_with_bundle(tmp_path):
    spec = write_spec(tmp_path)
    fld = tmp_path / "field.bin"
    main(["field", "sample", "--spec", str(spec), "--out", str(fld)])
    hs_bin = tmp_path / "hs.npz"
    main(["halfspace", "--field", str(fld), "--L", "16", "--out", str(hs_bin)])
    out = tmp_path / "excess.csv"
    assert main(["excess", "--field", str(fld), "--hs", str(hs_bin), "--R", "8",
                 "--seeds", "1", "--out", str(out)]) == 0
    # the bundle path reproduces the rebuilt-set numbers
    out2 = tmp_path / "excess2.csv"
    main(["excess", "--field", str(fld), "--R", "8", "--seeds", "1", "--out", str(out2)])
    assert out.read_bytes() == out2.read_bytes()


def test_corrector_direction_flag_validation(tmp_path):
    spec = write_spec(tmp_path)
    fld = tmp_path / "field.bin"
    main(["field", "sample", "--spec", str(spec), "--out", str(fld)])
    out = tmp_path / "c.csv"
    assert main(["corrector", "--field", str(fld), "--directions", "e9",
                 "--radii", "8:8", "--out", str(out)]) == 2


def test_pipeline_failure_marks_manifest(tmp_path):
    cfg = {
        "ensemble": {"kind": "checkerboard", "lam": 0.25,
                     "params": {"values": [0.25, 1.5], "cell_size": 1.0}},  # gain > 1
        "grid": {"dim": 2, "n": 16, "h": 1.0},
        "seeds": [0],
    }
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    out = tmp_path / "run"
    assert main(["pipeline", "--config", str(p), "--out-dir", str(out)]) == 4
    manifest = json.loads(sorted(out.glob("manifest__*.json"))[-1].read_text())
    assert "failed" in manifest and "EllipticityError" in manifest["failed"]
