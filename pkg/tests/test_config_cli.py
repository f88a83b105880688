import json

import pytest

from sgdgeom.acceptance import reproduce_all
from sgdgeom.cli import main
from sgdgeom.config import ConfigError, ExperimentConfig, load_config
from sgdgeom.experiments import run_experiment


def test_defaults_and_kind_defaults():
    cfg = load_config(environ={})
    assert cfg.kind == "tensors" and cfg.N == 1_000_000 and cfg.rate_convention == "flow"
    sv = load_config(overrides={"kind": "stationary-variance"}, environ={})
    assert sv.basis == "x" and sv.sigma == 0.5


def test_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 3, "N": 500, "sigma": 0.2}))
    env = {"SGDGEOM_SEED": "5", "SGDGEOM_N": "700"}
    cfg = load_config(path, overrides={"N": 900}, environ=env)
    assert (cfg.seed, cfg.N, cfg.sigma) == (5, 900, 0.2)


@pytest.mark.parametrize("overrides,field", [
    ({"N": 0}, "N"), ({"burn_in": 1.5}, "burn_in"), ({"kind": "nope"}, "kind"),
    ({"rate_convention": "x"}, "rate_convention"), ({"bogus": 1}, "bogus"), ({"seed": "abc"}, "seed"),
])
def test_config_error_names_field(overrides, field):
    with pytest.raises(ConfigError) as info:
        load_config(overrides=overrides, environ={})
    assert info.value.field == field


def test_hash_ignores_output_dir():
    a = load_config(overrides={"out": "a"}, environ={})
    b = load_config(overrides={"out": "b"}, environ={})
    assert a.hash == b.hash and len(a.hash) == 64
    assert a.hash != a.replace(seed=1).hash
    assert ExperimentConfig(**{k: v for k, v in a.resolved().items()
                               if k not in ("eta_grid", "batch_grid")}).hash == a.hash


def test_run_experiment_deterministic():
    cfg = load_config(overrides={"kind": "tensors", "N": 2000, "basis": "1,x"}, environ={})
    assert run_experiment(cfg).payload_hash == run_experiment(cfg).payload_hash
    assert run_experiment(cfg).payload_hash != run_experiment(cfg.replace(seed=1)).payload_hash


def test_cli_tensors_writes_report(tmp_path, capsys):
    status = main(["tensors", "--N", "5000", "--basis", "1,x", "--out", str(tmp_path), "--seed", "2"])
    assert status in (0, 1)
    rep = json.loads((tmp_path / "tensors_report.json").read_text())
    assert rep["config"]["seed"] == 2 and rep["config"]["N"] == 5000
    assert "payload=" in capsys.readouterr().out


def test_cli_simulate_csv_header(tmp_path):
    status = main(["simulate", "--epochs", "200", "--N", "2000", "--t-final", "1", "--dt", "0.01",
                   "--out", str(tmp_path), "--quiet"])
    assert status in (0, 1)
    for name in ("sgd_trajectory.csv", "geodesic_trajectory.csv"):
        lines = (tmp_path / name).read_text().splitlines()
        assert lines[0].startswith("# config_hash=") and "seed=0" in lines[0]
        assert lines[1].startswith("t,alpha_1,alpha_2")


def test_cli_stability_passes(tmp_path):
    assert main(["stability", "--out", str(tmp_path), "--quiet"]) == 0


def test_cli_bad_config_exit_code(tmp_path, capsys):
    assert main(["tensors", "--N", "-3", "--out", str(tmp_path)]) == 2
    assert "N" in capsys.readouterr().err
    assert not any(tmp_path.iterdir())


def test_cli_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["stability", "--out", str(blocker / "sub"), "--quiet"]) == 3


def test_reproduce_all_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    summary, status = reproduce_all(blocker / "out", criteria=[5])
    assert status == 3 and "error" in summary
    assert sorted(p.name for p in tmp_path.iterdir()) == ["file"]


def test_reproduce_all_subset(tmp_path):
    summary, status = reproduce_all(tmp_path, criteria=[5])
    assert status == 0 and summary["passed"]
    assert {p.name for p in tmp_path.iterdir()} == {"summary.json", "summary.txt"}
    assert "criterion  5 [PASS]" in (tmp_path / "summary.txt").read_text()
