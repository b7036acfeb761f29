import json

import numpy as np
import pytest

from embhom import cli
from embhom.fem import read_voxel_field
from embhom.fem.voxel import read_provenance
from embhom.tensor import IsoModuli, iso_to_full


def _write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


CONSTANT = {
    "format_version": 1,
    "generator": {"kind": "constant", "phases": [{"kappa": 3.0, "mu": 1.2}], "n": 8,
                  "band": {"alpha": 1.0, "beta": 6.0}},
    "oracle": "closed_form",
    "schemes": ["A1", "A2", "A3", "A4"],
    "a1_tol": 1e-8,
}


def test_eshelby_prints_closed_form(capsys):
    # unit inclusion in a (kappa, mu) = (3, 1) matrix, shear load 12
    assert cli.main(["eshelby", "--inclusion", "1,0.5", "--matrix", "3,1", "--sigma", "12", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    e = out["energies"]
    assert e["general"] == pytest.approx(e["shear_closed_form"], rel=1e-12)
    assert out["traction_jump_residual"] < 1e-10


def test_eshelby_rejects_bad_pair(capsys):
    assert cli.main(["eshelby", "--inclusion", "1", "--matrix", "3,1"]) == cli.EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_config_syntax_error_reports_position(tmp_path, capsys):
    path = _write(tmp_path, '{"generator": {,}}')
    assert cli.main(["homogenize", "--config", path]) == cli.EXIT_CONFIG
    assert "line 1 column" in capsys.readouterr().err


@pytest.mark.parametrize("patch", [
    {"schemes": ["A9"]},
    {"oracle": "spectral"},
    {"bogus": 1},
    {"format_version": 7},
    {"generator": {"kind": "constant", "phases": [{"kappa": -1.0, "mu": 1.0}]}},
])
def test_config_validation_errors(tmp_path, patch):
    cfg = {**CONSTANT, **patch}
    assert cli.main(["homogenize", "--config", _write(tmp_path, cfg)]) == cli.EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert cli.main(["homogenize", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG


def test_homogenize_closed_form_constant(tmp_path, capsys):
    out = tmp_path / "report.json"
    assert cli.main(["homogenize", "--config", _write(tmp_path, CONSTANT), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["format_version"] == 1
    assert len(report["config_hash"]) == 64
    res = report["results"]
    for key in ("A1", "A4"):
        assert res[key]["moduli"]["kappa"] == pytest.approx(3.0, abs=1e-6)
        assert res[key]["moduli"]["mu"] == pytest.approx(1.2, abs=1e-6)
    for key in ("A2", "A3"):
        np.testing.assert_allclose(res[key]["matrix"], iso_to_full(IsoModuli(3.0, 1.2)), atol=1e-8)
    assert (tmp_path / "report.trace.csv").read_text().startswith("t,kappa,mu")
    assert set(report["timings"]) >= {"schemes_total"}


def test_config_hash_tracks_overrides(tmp_path):
    path = _write(tmp_path, CONSTANT)
    a = cli.load_config(path)
    args = cli.build_parser().parse_args(["homogenize", "--config", path, "--nx", "24"])
    b = cli.load_config(path, args)
    assert b.solver.nx == 24
    assert a.digest() != b.digest()
    assert a.digest() == cli.load_config(path).digest()


def test_gen_writes_voxel_file(tmp_path, capsys):
    cfg = {"format_version": 1,
           "generator": {"kind": "sphere_inclusions", "phases": [{"kappa": 2.0, "mu": 1.0}, {"kappa": 6.0, "mu": 2.5}],
                         "n": 8, "r": 0.2, "count": 3, "seed": 3}}
    out = tmp_path / "field.voxf"
    assert cli.main(["gen", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    field = read_voxel_field(out)
    assert field.n == 8
    assert read_provenance(out)["seed"] == 3
    assert "wrote" in capsys.readouterr().out


def test_gen_seed_override_changes_field(tmp_path):
    cfg = {"format_version": 1,
           "generator": {"kind": "sphere_inclusions", "phases": [{"kappa": 2.0, "mu": 1.0}, {"kappa": 6.0, "mu": 2.5}],
                         "n": 8, "r": 0.2, "count": 3, "seed": 3}}
    path = _write(tmp_path, cfg)
    a, b = tmp_path / "a.voxf", tmp_path / "b.voxf"
    cli.main(["gen", "--config", path, "--out", str(a)])
    cli.main(["gen", "--config", path, "--out", str(b), "--seed", "4"])
    assert not np.array_equal(read_voxel_field(a).tensors, read_voxel_field(b).tensors)


def test_validate_quick_json(capsys):
    code = cli.main(["validate", "--quick", "--json"])
    report = json.loads(capsys.readouterr().out)
    assert report["quick"] is True
    assert code == (0 if report["passed"] else cli.EXIT_FAILED)
    assert all({"number", "passed", "measured"} <= set(c) for c in report["criteria"])


def test_truncation_table_scheme(tmp_path):
    cfg = {"format_version": 1,
           "generator": {"kind": "constant", "phases": [{"lam": 1.0, "mu": 1.0}], "n": 4,
                         "band": {"alpha": 1.0, "beta": 15.0}},
           "exterior": {"lam": 1.0, "mu": 2.0},
           "solver": {"L": 2.0, "nx": 16, "cg_tol": 1e-10},
           "schemes": ["truncation_table"], "truncation_L": [2.0, 3.0, 4.0]}
    out = tmp_path / "t.json"
    assert cli.main(["homogenize", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    res = json.loads(out.read_text())["results"]["truncation_table"]
    assert res["analytic"] == pytest.approx(37 / 56)
    assert [r["nx"] for r in res["rows"]] == [16, 24, 32]
    err = [r["rel_error"] for r in res["rows"]]
    assert err[0] > err[1] > err[2]


def test_truncation_table_needs_exterior(tmp_path):
    cfg = {**CONSTANT, "oracle": "fem", "schemes": ["truncation_table"]}
    assert cli.main(["homogenize", "--config", _write(tmp_path, cfg)]) == cli.EXIT_CONFIG
