from __future__ import annotations

import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from wmaxlab import cli

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def staged(tmp_path, name):
    """Copy a scenario into tmp_path so its outputs land there."""
    dst = tmp_path / name
    shutil.copy(SCENARIOS / name, dst)
    return dst


def edited(tmp_path, name, **changes):
    data = json.loads((SCENARIOS / name).read_text())
    data.update(changes)
    path = tmp_path / f"edited_{name}"
    path.write_text(json.dumps(data))
    return path


def run(argv, tmp_path):
    out = tmp_path / "report.json"
    code = cli.main([*argv, "--out", str(out)])
    return code, json.loads(out.read_text()) if out.exists() else None


def test_run_exact_calabi(tmp_path):
    code, rep = run(["run", str(staged(tmp_path, "calabi.json"))], tmp_path)
    assert code == cli.EXIT_OK and rep["pass"]
    assert rep["checks"] == {"bakry_emery_psd": True}
    assert len(rep["convergence"]) == 3
    rows = list(csv.DictReader((tmp_path / "out" / "calabi_exact_fields.csv").open()))
    assert len(rows) == 17 * 17
    assert {"y0", "y1", "h", "det_gt", "residual_norm"} <= set(rows[0])


def test_run_padded_scan_hits(tmp_path):
    code, rep = run(["run", "--scenario", str(staged(tmp_path, "padded_calabi.json"))], tmp_path)
    assert code == cli.EXIT_OK
    assert rep["scan"]["hit_classes"][0]["class"] == [0, 0, 0, 0, 1]


def test_solve_writes_fields(tmp_path):
    fields = tmp_path / "fields.csv"
    code, rep = run(["solve", "--scenario", str(staged(tmp_path, "calabi_solve.json")), "--fields", str(fields)],
                    tmp_path)
    assert code == cli.EXIT_OK
    assert rep["solve"]["converged"]
    assert fields.read_text().startswith("y0,y1,H0,")


def test_residual_default_is_second_order(tmp_path):
    code, rep = run(["residual"], tmp_path)
    assert code == cli.EXIT_OK
    ratios = [row["ratio"] for row in rep["table"][1:]]
    assert all(3.2 <= q <= 4.8 for q in ratios)


def test_residual_3d_affine(tmp_path):
    code, rep = run(["residual", "--dim", "3", "--refine", "1"], tmp_path)
    assert code == cli.EXIT_OK
    assert all(row["raw_inf"] < 1e-12 for row in rep["table"])


@pytest.mark.parametrize("cmd", ["gradcheck", "hesscheck"])
def test_derivative_checks(cmd, tmp_path):
    code, rep = run([cmd, "--seed", "3", "--count", "4"], tmp_path)
    assert code == cli.EXIT_OK
    assert rep["pass"] if cmd == "gradcheck" else rep["fd"]["pass"]


def test_hesscheck_with_scenario(tmp_path):
    code, rep = run(["hesscheck", "--count", "2", "--iterations", "20", "--scenario",
                     str(staged(tmp_path, "calabi.json"))], tmp_path)
    assert code == cli.EXIT_OK
    assert rep["extreme"]["value"] < 0


def test_ricci_and_scan(tmp_path):
    code, rep = run(["ricci", "--scenario", str(staged(tmp_path, "calabi.json"))], tmp_path)
    assert code == cli.EXIT_OK and rep["curvature"]["psd_ok"]
    code, rep = run(["scan-classes", "--scenario", str(staged(tmp_path, "padded_calabi.json")), "--height", "0"],
                    tmp_path)
    assert code == cli.EXIT_FAIL        # expected hits, found none at height 0


def test_check_walls(tmp_path):
    code, rep = run(["check-walls", str(SCENARIOS / "annulus_complex.json")], tmp_path)
    assert code == cli.EXIT_OK and rep["ok"]
    data = json.loads((SCENARIOS / "annulus_complex.json").read_text())
    data["boundaries"][1]["components"] = []
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    code, rep = run(["check-walls", str(bad)], tmp_path)
    assert code == cli.EXIT_FAIL
    assert "outer_circle" in rep["suspects"]
    assert cli.main(["check-walls", str(tmp_path / "missing.json")]) == cli.EXIT_USAGE


def test_inline_walls_in_scenario(tmp_path):
    cx = json.loads((SCENARIOS / "annulus_complex.json").read_text())
    path = edited(tmp_path, "calabi.json", walls=cx, diagnostics={}, outputs={})
    code, rep = run(["run", str(path)], tmp_path)
    assert code == cli.EXIT_OK and rep["checks"]["walls"]


def test_gh_profile(tmp_path, capsys):
    out, plot = tmp_path / "gh.csv", tmp_path / "gh.gp"
    code = cli.main(["gh-profile", "--family", "A_0", "--A", "0", "--count", "5", "--out", str(out),
                     "--plot-script", str(plot)])
    assert code == cli.EXIT_OK
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 5
    for row in rows:
        assert float(row["hbar"]) == pytest.approx(float(row["h"]), rel=1e-11)
    assert str(out) in plot.read_text()
    assert "harmonicity" in capsys.readouterr().err


def test_lefschetz_model(tmp_path):
    code, rep = run(["lefschetz-model", "--scenario", str(SCENARIOS / "lefschetz.json")], tmp_path)
    assert code == cli.EXIT_OK
    assert rep["value_at_origin_inf"] == 0
    assert sum(rep["node_status_counts"].values()) == 21 * 21


@pytest.mark.parametrize("change", [{"colour": "blue"}, {"version": 2}, {"flux": {"analytic": [0, 0, 0, 1]}},
                                    {"domain": {"lo": [0, 1], "hi": [1, 2], "n": [2, 17]}},
                                    {"boundary_perturbation": [{"profile": "bump", "direction": [0, 0, 0, 1]}]},
                                    {"boundary_perturbation": [{"profile": "sawtooth", "direction": [0, 0, 1, 0]}]},
                                    {"solver": {"damping": 3}}])
def test_config_errors_exit_2(change, tmp_path, capsys):
    path = edited(tmp_path, "calabi.json", **change)
    assert cli.main(["run", str(path)]) == cli.EXIT_USAGE
    assert "config error" in capsys.readouterr().err


def test_unknown_key_names_its_path():
    data = json.loads((SCENARIOS / "calabi.json").read_text())
    data["diagnostics"]["scan"] = {"height": 1, "depth": 3}
    with pytest.raises(cli.ConfigError, match="scenario.diagnostics.scan"):
        cli.load_scenario(data)


def test_mixed_boundary_exits_2(tmp_path):
    path = edited(tmp_path, "calabi_solve.json", solver={"enabled": True, "boundary": "mixed"}, outputs={})
    assert cli.main(["solve", "--scenario", str(path)]) == cli.EXIT_USAGE


def test_missing_scenario_and_bad_subcommand():
    assert cli.main(["ricci"]) == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        cli.main(["frobnicate"])
    assert info.value.code == 2


def test_dim_conflict(tmp_path):
    assert cli.main(["ricci", "--dim", "3", "--scenario", str(staged(tmp_path, "calabi.json"))]) == cli.EXIT_USAGE


def test_reports_are_byte_identical(tmp_path):
    path = staged(tmp_path, "affine3d.json")
    texts = []
    for k in range(2):
        out = tmp_path / f"r{k}.json"
        assert cli.main(["run", str(path), "--out", str(out)]) == cli.EXIT_OK
        texts.append(out.read_bytes())
    assert texts[0] == texts[1]


def test_clean_rounds_and_nulls():
    text = cli.dumps_report({"b": np.float64(1 / 3), "a": [np.inf, np.int64(2), np.bool_(True)]})
    assert json.loads(text) == {"a": [None, 2, True], "b": 0.333333333333}
    assert text.index('"a"') < text.index('"b"')
