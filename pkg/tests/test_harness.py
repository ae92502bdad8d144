import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from sidelab import harness
from sidelab.attacks import ProbeMatrix, Strategy
from sidelab.cli import main
from sidelab.errors import ScenarioError, SidelabError
from sidelab.harness import (OUTPUT_ENV, REPORT_SCHEMA_VERSION, emit_heatmap_data, run_power, run_scenario,
                             run_sweep, write_sweep_csv)
from sidelab.pipeline import run_pipeline
from sidelab.scenario import ScenarioConfig, parse_scenario_dict, parse_scenario_text

SMALL = parse_scenario_text("""
victim: {key: '0xb5c3'}
attack: {target_sets: [64, 65, 66], num_slots: 120}
""")


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- artifacts -----------------------------------------------------------------------

def test_default_run_artifacts(tmp_path):
    arts = run_scenario(ScenarioConfig(), tmp_path)
    assert arts.ok
    rows = read_csv(arts.probe_matrix_csv)
    assert len(rows) == 301 and len(rows[0]) == 257
    assert rows[0][:3] == ["slot", "set_0", "set_1"]
    heat = read_csv(arts.heatmap_csv)
    assert heat[0] == ["slot", "set", "latency"] and len(heat) == 1 + 300 * 256
    rep = json.loads(arts.report_json.read_text())
    assert rep["schema_version"] == REPORT_SCHEMA_VERSION and rep["status"] == "ok"
    assert rep["recovery"]["accuracy"] == 1.0
    assert rep["attack"]["matrix_shape"] == [300, 256]
    assert rep["artifacts"] == ["heatmap.csv", "occupancy.csv", "probe_matrix.csv", "report.json"]


def test_heatmap_one_cell(tmp_path):
    m = ProbeMatrix(np.array([[128]]), (65,), Strategy.PRIME_PROBE, True)
    assert read_csv(emit_heatmap_data(m, tmp_path / "h.csv")) == [["slot", "set", "latency"], ["0", "65", "128"]]


def test_heatmap_reemit_is_byte_identical(tmp_path):
    m = run_pipeline(SMALL).matrix
    a = emit_heatmap_data(m, tmp_path / "a.csv").read_bytes()
    b = emit_heatmap_data(m, tmp_path / "b.csv").read_bytes()
    assert a == b


def test_runs_are_byte_identical(tmp_path):
    a = run_scenario(SMALL, tmp_path / "a")
    b = run_scenario(SMALL, tmp_path / "b")
    for name in ("report.json", "probe_matrix.csv", "occupancy.csv", "heatmap.csv"):
        assert (a.output_dir / name).read_bytes() == (b.output_dir / name).read_bytes()


def test_report_scenario_reproduces_run(tmp_path):
    noisy = replace(SMALL, noise_sigma=6.0)
    first = run_scenario(noisy, tmp_path / "a")
    again = parse_scenario_dict(first.report["scenario"])
    second = run_scenario(again, tmp_path / "b")
    assert first.report_json.read_bytes() == second.report_json.read_bytes()


def test_constant_time_report_flags_single_cluster(tmp_path):
    ct = replace(SMALL, victim=replace(SMALL.victim, kind="modexp_ct"))
    rep = run_scenario(ct, tmp_path).report
    assert rep["recovery"]["single_cluster"]
    assert any("single" in w for w in rep["warnings"])


def test_output_dir_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    sc = replace(SMALL, output_dir=str(tmp_path / "cfg"))
    assert run_scenario(sc).output_dir == tmp_path / "env"
    assert run_scenario(sc, tmp_path / "arg").output_dir == tmp_path / "arg"
    monkeypatch.delenv(OUTPUT_ENV)
    assert run_scenario(sc).output_dir == tmp_path / "cfg"


def test_pipeline_error_is_reported(tmp_path, monkeypatch):
    def boom(sc):
        raise SidelabError("simulated failure")
    monkeypatch.setattr(harness, "run_pipeline", boom)
    arts = run_scenario(SMALL, tmp_path)
    assert not arts.ok
    rep = json.loads(arts.report_json.read_text())
    assert rep["status"] == "error" and rep["error"]["message"] == "simulated failure"


def test_validation_error_raises(tmp_path):
    bad = replace(SMALL, cache=SMALL.cache.with_isa(has_line_flush=False),
                  attack=replace(SMALL.attack, strategy=Strategy.FLUSH_RELOAD))
    with pytest.raises(ScenarioError):
        run_scenario(bad, tmp_path)
    assert not (tmp_path / "report.json").exists()


# -- sweeps --------------------------------------------------------------------------

def test_single_point_sweep_matches_run(tmp_path):
    rows = run_sweep(SMALL, "noise_sigma", [0.0], 1)
    rep = run_scenario(SMALL, tmp_path).report["recovery"]
    assert len(rows) == 1 and rows[0]["accuracy"] == rep["accuracy"]
    assert rows[0]["threshold_used"] == rep["threshold_used"]


def test_sweep_row_order_and_csv(tmp_path):
    rows = run_sweep(SMALL, "noise_sigma", [0, 4], 2)
    assert [(r["value"], r["seed"]) for r in rows] == [("0", 0), ("0", 1), ("4", 0), ("4", 1)]
    lines = read_csv(write_sweep_csv(rows, tmp_path / "s.csv"))
    assert lines[0] == harness.SWEEP_HEADER and len(lines) == 5


def test_sweep_parallel_matches_serial():
    a = run_sweep(SMALL, "defense", ["none", "partition"], 1)
    b = run_sweep(SMALL, "defense", ["none", "partition"], 1, jobs=2)
    assert a == b


def test_sweep_rejects_bad_axis_and_value():
    with pytest.raises(ScenarioError):
        run_sweep(SMALL, "attack.nope", [1], 1)
    with pytest.raises(ScenarioError):
        run_sweep(SMALL, "attack.num_slots", [0], 1)


# -- power ---------------------------------------------------------------------------

def test_power_artifacts(tmp_path):
    sc = parse_scenario_text("victim: {key: '0xb5c3'}\npower: {aes_key: '0x3c'}")
    arts = run_power(sc, tmp_path)
    assert arts.ok
    assert arts.report["spa"]["accuracy"] == 1.0
    assert arts.report["dpa"]["best_hypothesis"] == 0x3C
    assert len(read_csv(arts.aes_csv)) == 1 + 256  # repeats are averaged per plaintext
    b = run_power(sc, tmp_path / "again")
    assert arts.report_json.read_bytes() == b.report_json.read_bytes()


# -- CLI -----------------------------------------------------------------------------

@pytest.fixture
def scenario_file(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("victim: {key: '0xb5c3'}\nattack: {target_sets: [65], num_slots: 120}\n")
    return p


def test_cli_run(scenario_file, tmp_path, capsys):
    assert main(["run", str(scenario_file), "-o", str(tmp_path / "out")]) == 0
    assert "accuracy 1.0000" in capsys.readouterr().out
    assert (tmp_path / "out" / "report.json").exists()


def test_cli_validate(scenario_file, capsys):
    assert main(["validate", str(scenario_file)]) == 0
    assert parse_scenario_text(capsys.readouterr().out).victim.key == "0xb5c3"


def test_cli_invalid_exits_1(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("cache: {isa: {has_line_flush: false}}\nattack: {strategy: FLUSH_FLUSH}\n")
    assert main(["run", str(p)]) == 1
    assert "has_line_flush" in capsys.readouterr().err
    assert main(["validate", str(tmp_path / "missing.yaml")]) == 1


def test_cli_pipeline_error_exits_2(scenario_file, tmp_path, monkeypatch):
    def boom(sc):
        raise SidelabError("simulated failure")
    monkeypatch.setattr(harness, "run_pipeline", boom)
    assert main(["run", str(scenario_file), "-o", str(tmp_path / "out")]) == 2
    assert json.loads((tmp_path / "out" / "report.json").read_text())["status"] == "error"


def test_cli_sweep(scenario_file, tmp_path, capsys):
    out = tmp_path / "sw"
    assert main(["sweep", str(scenario_file), "--axis", "noise_sigma", "--values", "0,8",
                 "--seeds", "2", "-o", str(out)]) == 0
    assert len(read_csv(out / "sweep.csv")) == 5
    assert main(["sweep", str(scenario_file), "--axis", "bogus", "--values", "1"]) == 1


def test_cli_power(scenario_file, tmp_path, capsys):
    assert main(["power", str(scenario_file), "-o", str(tmp_path / "p")]) == 0
    assert "DPA best" in capsys.readouterr().out
