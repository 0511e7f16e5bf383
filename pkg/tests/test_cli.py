import csv
import json
from pathlib import Path

import pytest

from hypochain.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_MODEL, EXIT_OK, ConfigError, load_config, main, run

CONFIGS = Path(__file__).resolve().parents[1] / "demos" / "configs"

SMALL = """
model:
  key: bs_asian
simulation:
  n_paths: 3000
  steps: 16
  seed: 21
  chunk_size: 500
params:
  record: [terminal, joint_N]
"""


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_unknown_field_is_named(capsys, tmp_path):
    text = "model: {key: kolmogorov}\nsimulation: {n_path: 10}\n"
    assert run("simulate", text, out=str(tmp_path)) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "simulation.n_path" in err
    with pytest.raises(ConfigError, match="n_path"):
        load_config(text)


def test_overrides_win():
    cfg = load_config(SMALL, {"simulation.seed": 5, "simulation.n_paths": None})
    assert cfg.simulation.seed == 5 and cfg.simulation.n_paths == 3000


def test_bad_yaml_and_missing_file(tmp_path, capsys):
    assert run("simulate", "model: [unclosed", out=str(tmp_path)) == EXIT_CONFIG
    assert main(["simulate", "--config", str(tmp_path / "none.yaml")]) == EXIT_CONFIG


def test_model_error_exit(tmp_path, capsys):
    text = "model: {key: quadratic_asian, params: {xi1: 0.0}}\n"
    assert run("limits", text, out=str(tmp_path)) == EXIT_MODEL
    assert "lambda" in capsys.readouterr().err


def test_operation_mismatch(tmp_path):
    assert run("limits", "model: {key: kolmogorov}\noperation: price\n", out=str(tmp_path)) == EXIT_CONFIG


def test_summary_fields(tmp_path):
    assert run("simulate", SMALL, out=str(tmp_path)) == EXIT_OK
    s = json.loads((tmp_path / "simulate.summary.json").read_text())
    for key in ("seed", "model", "version", "wall_clock_seconds", "config_text", "checks", "pass"):
        assert key in s
    assert s["seed"] == 21 and s["model"] == "bs_asian"
    assert s["version"].startswith("v") or "-g" in s["version"]
    assert s["config_text"] == SMALL


def test_byte_identical_csv_across_runs_and_workers(tmp_path):
    outs = []
    for k, workers in enumerate((1, 1, 8)):
        d = tmp_path / str(k)
        assert run("simulate", SMALL, {"simulation.workers": workers}, out=str(d)) == EXIT_OK
        outs.append((d / "simulate.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]
    first = outs[0].decode().splitlines()
    assert first[0] == "X1,X2,N1,N2" and len(first) == 3001


def test_csv_round_trips_doubles(tmp_path):
    assert run("limits", (CONFIGS / "limits_kolmogorov.yaml").read_text(), out=str(tmp_path)) == EXIT_OK
    rows = _rows(tmp_path / "limits.csv")
    q = {(r["row"], r["col"]): float(r["value"]) for r in rows if r["matrix"] == "Q"}
    assert q[("1", "3")] == 1.0 / 6.0


def test_decay_exit_codes(tmp_path):
    text = (CONFIGS / "decay_kolmogorov.yaml").read_text()
    assert run("diagonal-decay", text, out=str(tmp_path)) == EXIT_OK
    assert run("diagonal-decay", "model: {key: quadratic_asian}\nparams: {t_grid: [0.1]}\n",
               out=str(tmp_path)) == EXIT_MODEL


def test_failed_check_exit(tmp_path):
    text = """
model: {key: kolmogorov}
simulation: {n_paths: 20000, steps: 16, t: 1.0}
params:
  levels: [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0]
  regimes: [polynomial]
  expect: {polynomial: false}
"""
    assert run("tails", text, out=str(tmp_path)) == EXIT_CHECK


def test_price_ratio_single_asset(tmp_path):
    assert main(["price", "--config", str(CONFIGS / "price_bs.yaml"), "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "price.csv")
    assert len(rows) == 1
    assert 0.98 <= float(rows[0]["ratio"]) <= 1.02
    assert float(rows[0]["asymptotic"]) == pytest.approx(0.46066, abs=1e-5)


def test_converge_kolmogorov(tmp_path):
    assert main(["converge", "--config", str(CONFIGS / "converge_kolmogorov.yaml"), "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "converge.csv")
    assert [float(r["t"]) for r in rows] == [1.0, 0.1, 0.01]
    assert all(float(r["rel_error"]) < 0.05 for r in rows)
