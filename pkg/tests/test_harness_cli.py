import json

import pytest
import yaml

from hexscatter.checks import CHECKS
from hexscatter.cli import list_checks, main
from hexscatter.config import KINDS, ConfigError, apply_overrides, load_config, validate
from hexscatter.harness import RUNNERS, SCHEMA_VERSION, output_dir, regress, run


def test_defaults_echoed():
    cfg = validate({"kind": "bands"})
    echo = cfg.model_dump(mode="json")
    assert echo["N"] == 1026 and echo["window"] == {"a": 1.2, "b": 2.8} and echo["gap"] == 0.5


@pytest.mark.parametrize("data, path, text", [
    ({"kind": "bands", "window": {"a": 0.8, "b": 2.0}}, "window", "threshold rule"),
    ({"kind": "bands", "N": 1000}, "N", "multiple of 6"),
    ({"kind": "phase", "potential": {"rho": 0.4, "c_long": 0.3}}, "<root>", "rho > 1/2"),
    ({"kind": "bands", "gap": 0.7}, "<root>", "gap"),
    ({"kind": "bands", "potential": {"colour": 1}}, "potential.colour", "Extra inputs"),
    ({"kind": "spectra"}, "kind", "Input should be"),
    ({"kind": "bands", "only": ["cook_cauchy"]}, "<root>", "do not belong"),
])
def test_validation_errors_name_the_field(data, path, text):
    with pytest.raises(ConfigError) as exc:
        validate(data)
    assert any(p == path and text in m for p, m in exc.value.errors), exc.value.errors


def test_modifier_cook_needs_rho_above_half():
    with pytest.raises(ConfigError):
        validate({"kind": "cook", "modifier": True, "potential": {"rho": 0.5, "c_long": 0.1}})
    validate({"kind": "cook", "modifier": False, "potential": {"rho": 0.5, "c_long": 0.1}})


def test_overrides_and_yaml(tmp_path):
    data = apply_overrides({"kind": "bands"}, ["window.a=1.3", "potential.short_profile=sublattice-split", "N=2052"])
    assert data["window"]["a"] == 1.3 and data["N"] == 2052
    assert data["potential"]["short_profile"] == "sublattice-split"
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(data))
    assert load_config(p).window.a == 1.3
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])


def test_every_check_reachable_from_exactly_one_kind():
    assert set(RUNNERS) == set(KINDS)
    assert {kind for kind, _ in CHECKS.values()} == set(KINDS)
    assert len(list_checks().splitlines()) == len(CHECKS)


def test_bands_run_is_deterministic(tmp_path):
    r1 = run({"kind": "bands", "N": 96}, tmp_path / "a")
    r2 = run({"kind": "bands", "N": 96}, tmp_path / "b")
    assert r1.passed
    assert (tmp_path / "a" / "bands.csv").read_bytes() == (tmp_path / "b" / "bands.csv").read_bytes()
    assert r1.files == r2.files
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert rep["schema_version"] == SCHEMA_VERSION and rep["passed"]
    assert rep["config"]["N"] == 96 and rep["config"]["tolerances"]["cauchy"] == 1e-3
    header = (tmp_path / "a" / "bands.csv").read_text().splitlines()[0]
    assert header == "xi1,xi2,p,lambda_plus"


def test_free_cook_report(tmp_path):
    rep = run({"kind": "cook", "L": 64, "times": {"n_times": 5}}, tmp_path)
    assert rep.passed
    assert rep.metrics["cook_cauchy"] <= 1e-12


def test_only_subset(tmp_path):
    rep = run({"kind": "mourre", "only": ["gradient_fd", "conjugate_symmetry"]}, tmp_path)
    assert {c.name for c in rep.checks} == {"gradient_fd", "conjugate_symmetry"}


def test_output_root_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("HEXSCATTER_OUTPUT", str(tmp_path))
    out = output_dir(validate({"kind": "bands"}))
    assert out.parent == tmp_path and out.name.startswith("bands-")


def test_regress_green_and_perturbed():
    assert regress().passed
    assert regress(overrides={"gap": 0.3}).passed
    assert regress(overrides={"N": 2052}).passed


def test_regress_reports_drift(tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({
        "config": {"kind": "bands", "N": 96},
        "metrics": {"band_max": {"value": 2.5, "atol": 1e-12}, "missing": {"value": 1.0}},
    }))
    s = regress(tmp_path)
    assert not s.passed
    assert {d.metric for d in s.drifts} == {"band_max", "missing"}


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["bands", "--N", "96", "--out", str(tmp_path / "ok")]) == 0
    assert "PASS  bands" in capsys.readouterr().out
    assert main(["bands", "--window", "0.8", "2.0"]) == 2
    assert "threshold rule" in capsys.readouterr().err
    assert main(["--list-checks"]) == 0
    assert "band_max" in capsys.readouterr().out
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "bands", "N": 96}))
    assert main(["run", "--config", str(cfg), "--set", "gap=0.3", "--out", str(tmp_path / "r")]) == 0
    assert json.loads((tmp_path / "r" / "report.json").read_text())["config"]["gap"] == 0.3


def test_cli_surfaces_runtime_abort(tmp_path, capsys):
    code = main(["cook", "--L", "16", "--c-long", "0.0", "--t0", "8", "--n-times", "6", "--out", str(tmp_path)])
    assert code == 3
    assert "BoundaryContaminationError" in capsys.readouterr().err
