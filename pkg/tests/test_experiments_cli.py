"""Experiment runners (artifacts, manifests, determinism) and the CLI."""

import csv
import json

import pytest

from isac.cli import build_parser, main
from isac.experiments import (EXPERIMENTS, _config_hash, _merge,
                              run_experiment)

TINY_DUALPOLY = {
    "trials": 1,
    "scene": {"P": 3, "Q": 3, "N_r": 1, "R": 1, "k": [1], "s": [1],
              "snr_db": None},
    "resolutions": [12, 12, 1],
    "solver": {"tol": 1e-4, "max_iters": 4000},
}


def test_unknown_experiment_rejected(tmp_path):
    with pytest.raises(ValueError):
        run_experiment("nope", {}, tmp_path, seed=0)


def test_merge_is_nested_and_non_destructive():
    defaults = {"a": 1, "scene": {"P": 6, "Q": 6}, "solver": {"tol": 1e-6}}
    out = _merge(defaults, {"scene": {"P": 3}, "extra": True})
    assert out == {"a": 1, "scene": {"P": 3, "Q": 6},
                   "solver": {"tol": 1e-6}, "extra": True}
    assert defaults["scene"]["P"] == 6          # input untouched
    assert _merge(defaults, None) == defaults


def test_config_hash_is_order_insensitive():
    assert (_config_hash({"a": 1, "b": [2, 3]})
            == _config_hash({"b": [2, 3], "a": 1}))
    assert _config_hash({"a": 1}) != _config_hash({"a": 2})


def test_tiny_dualpoly_run_writes_artifacts(tmp_path):
    result = run_experiment("dualpoly2d", TINY_DUALPOLY, tmp_path, seed=3)
    assert result.experiment == "dualpoly2d"
    assert result.ok
    for name in result.outputs:
        assert (tmp_path / name).exists(), name
    assert "peaks.csv" in result.outputs
    assert "manifest.json" in result.outputs
    assert any(name.endswith(".png") for name in result.outputs)

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["experiment"] == "dualpoly2d"
    assert manifest["seed"] == 3
    assert manifest["config"]["scene"]["P"] == 3
    assert manifest["config_hash"] == _config_hash(manifest["config"])
    # the manifest inventories every artifact except itself
    assert manifest["outputs"] == sorted(
        name for name in result.outputs if name != "manifest.json")

    with open(tmp_path / "peaks.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    kinds = {row["kind"] for row in rows}
    assert kinds == {"true", "estimate"}
    # noiseless single atom: the peak sits on top of the truth
    est = [row for row in rows if row["kind"] == "estimate"]
    assert float(est[0]["match_error"]) <= 1e-2


def test_rerun_is_byte_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    run_experiment("dualpoly2d", TINY_DUALPOLY, a, seed=11)
    run_experiment("dualpoly2d", TINY_DUALPOLY, b, seed=11)
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_experiment_registry_matches_cli_choices():
    assert set(EXPERIMENTS) == {"recovery3d", "dualpoly2d", "localization",
                                "fusion_aoa_ser"}
    parser = build_parser()
    with pytest.raises(SystemExit):
        parser.parse_args(["run", "not_an_experiment"])


def test_cli_argument_errors(tmp_path):
    assert main(["run", "dualpoly2d", "--seed", "-1"]) == 1
    assert main(["run", "dualpoly2d", "--workers", "0"]) == 1
    assert main(["run", "dualpoly2d",
                 "--config", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "list.json"
    bad.write_text("[1, 2]")
    assert main(["run", "dualpoly2d", "--config", str(bad)]) == 1


def test_cli_happy_path(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY_DUALPOLY))
    out = tmp_path / "out"
    code = main(["run", "dualpoly2d", "--config", str(cfg),
                 "--out", str(out), "--seed", "2"])
    assert code == 0
    printed = capsys.readouterr().out.splitlines()
    assert all(line.startswith("wrote ") for line in printed)
    assert (out / "manifest.json").exists()


def test_cli_flags_unconverged_run(tmp_path, capsys):
    cfg = dict(TINY_DUALPOLY, solver={"tol": 1e-12, "max_iters": 5})
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    code = main(["run", "dualpoly2d", "--config", str(cfg_file),
                 "--out", str(out), "--seed", "2"])
    assert code == 2
    assert "iteration budget" in capsys.readouterr().err
    assert (out / "peaks.csv").exists()     # results written regardless
