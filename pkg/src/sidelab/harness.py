"""Experiment execution and artifact emission.

Every artifact is plain text with a header row. ``report.json`` follows the
schema documented in README.md (``schema_version`` 1). Output goes to, in order
of precedence: the explicit ``output_dir`` argument, the ``SIDELAB_OUTPUT_DIR``
environment variable, the scenario's ``output_dir``.
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from .analysis import SingleClusterWarning
from .attacks import ProbeMatrix
from .errors import SidelabError
from .pipeline import PipelineResult, run_pipeline
from .power import (PowerModel, aes_traces, average_traces, dpa_attack, spa_extract, trace_modexp,
                    write_aes_csv, write_trace_csv)
from .scenario import (ScenarioConfig, check_axis, validate_scenario, with_seed_offset, with_value)
from .victims import AesTableConfig

REPORT_SCHEMA_VERSION = 1
OUTPUT_ENV = "SIDELAB_OUTPUT_DIR"

PathLike = Union[str, Path]


@dataclass
class RunArtifacts:
    output_dir: Path
    report_json: Path
    probe_matrix_csv: Optional[Path] = None
    occupancy_csv: Optional[Path] = None
    heatmap_csv: Optional[Path] = None
    trace_csv: Optional[Path] = None
    aes_csv: Optional[Path] = None
    report: dict = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def resolve_output_dir(sc: ScenarioConfig, output_dir: Optional[PathLike] = None) -> Path:
    chosen = output_dir or os.environ.get(OUTPUT_ENV) or sc.output_dir
    path = Path(chosen)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _write_wide(path: Path, sets: Sequence[int], grid: np.ndarray) -> Path:
    with path.open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["slot"] + [f"set_{s}" for s in sets])
        for t, row in enumerate(grid):
            w.writerow([t, *(int(x) for x in row)])
    return path


def write_probe_matrix(matrix: ProbeMatrix, path: PathLike) -> Path:
    """Wide CSV: header ``slot,set_<id>,...``, one row per slot."""
    return _write_wide(Path(path), matrix.sets, matrix.latency)


def emit_heatmap_data(matrix: ProbeMatrix, path: PathLike) -> Path:
    """Long-format ``slot,set,latency`` CSV, one data row per matrix cell."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["slot", "set", "latency"])
        for t, row in enumerate(matrix.latency):
            for s, x in zip(matrix.sets, row):
                w.writerow([t, s, int(x)])
    return path


def _write_json(path: Path, data: dict) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def _seeds(sc: ScenarioConfig) -> dict:
    return sc.to_document()["seeds"]


def build_report(result: PipelineResult) -> dict:
    sc = result.scenario
    m = result.matrix
    victim: dict[str, Any] = {"kind": sc.victim.kind, "truth": "".join(map(str, result.truth))}
    if result.timeline is not None:
        victim.update(key_bits=len(result.truth), result=result.victim_result,
                      slots=len(result.timeline.slots), busy_slots=result.timeline.busy_slots)
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "status": "ok",
        "error": None,
        "scenario": _portable(sc),
        "seeds": _seeds(sc),
        "victim": victim,
        "attack": {
            "strategy": m.strategy.value,
            "matrix_shape": list(m.latency.shape),
            "monitored_sets": len(m.sets),
            "shared_address": result.attack_config.shared_address,
        },
        "recovery": result.report.to_dict(),
        "warnings": list(result.warnings),
    }


def _portable(sc: ScenarioConfig) -> dict:
    # output_dir is where artifacts land, not part of the experiment
    doc = sc.to_document()
    doc.pop("output_dir")
    return doc


def run_scenario(sc: ScenarioConfig, output_dir: Optional[PathLike] = None) -> RunArtifacts:
    """Run the cache-attack pipeline for ``sc`` and write its artifacts.

    Validation problems raise :class:`~sidelab.errors.ScenarioError`. Errors
    inside the pipeline are caught and recorded in ``report.json`` with
    ``status: error``; check :attr:`RunArtifacts.ok`.
    """
    validate_scenario(sc)
    out = resolve_output_dir(sc, output_dir)
    report_path = out / "report.json"
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SingleClusterWarning)
            result = run_pipeline(sc)
    except (SidelabError, ValueError) as exc:
        report = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "status": "error",
            "error": {"type": type(exc).__name__, "message": str(exc)},
            "scenario": _portable(sc),
            "seeds": _seeds(sc),
            "warnings": [],
        }
        _write_json(report_path, report)
        return RunArtifacts(out, report_path, report=report, error=f"{type(exc).__name__}: {exc}")

    arts = RunArtifacts(out, report_path)
    arts.probe_matrix_csv = write_probe_matrix(result.matrix, out / "probe_matrix.csv")
    occ = result.occupancy
    grid = occ.grid if occ is not None else np.zeros(result.matrix.latency.shape, dtype=bool)
    arts.occupancy_csv = _write_wide(out / "occupancy.csv", result.matrix.sets, grid)
    arts.heatmap_csv = emit_heatmap_data(result.matrix, out / "heatmap.csv")
    report = build_report(result)
    report["artifacts"] = sorted(p.name for p in (arts.probe_matrix_csv, arts.occupancy_csv,
                                                   arts.heatmap_csv, report_path))
    arts.report = report
    _write_json(report_path, report)
    return arts


# ---------------------------------------------------------------------------
# power analysis


def run_power(sc: ScenarioConfig, output_dir: Optional[PathLike] = None) -> RunArtifacts:
    """SPA on the modexp key and DPA on one AES key byte under ``sc.power``.

    All noise comes from ``seeds.noise``; the keys from ``seeds.key``.
    """
    validate_scenario(sc)
    out = resolve_output_dir(sc, output_dir)
    p = sc.power
    model = PowerModel(p.base_power, p.op_weight, p.noise_sigma, p.masked)
    rng = np.random.default_rng(sc.seeds.noise)
    table = AesTableConfig()

    key = sc.resolved_key() if sc.victim.kind != "aes" else None
    report: dict[str, Any] = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "status": "ok",
        "error": None,
        "scenario": _portable(sc),
        "seeds": _seeds(sc),
        "warnings": [],
    }
    arts = RunArtifacts(out, out / "power_report.json")
    if key is not None:
        trace = average_traces([trace_modexp(key, model, rng) for _ in range(p.spa_traces)])
        arts.trace_csv = write_trace_csv(out / "trace.csv", trace)
        truth = list(key.bits)
        try:
            bits = spa_extract(trace)
            acc = float(np.mean(np.array(bits) == np.array(truth)))
            report["spa"] = {"recovered": "".join(map(str, bits)), "truth": str(key), "accuracy": acc}
        except SidelabError as exc:
            report["spa"] = {"recovered": None, "truth": str(key), "accuracy": None}
            report["warnings"].append(f"SPA: {exc}")

    key_byte = sc.resolved_aes_key()
    traces = aes_traces(key_byte, table, model, rng, repeats=p.dpa_repeats)
    arts.aes_csv = write_aes_csv(out / "aes_traces.csv", traces)
    try:
        dpa = dpa_attack(traces, table)
        report["dpa"] = {"true_key_byte": key_byte, "best_hypothesis": dpa.best_hypothesis,
                         "rank_of_true_key": dpa.rank_of(key_byte), "margin": dpa.margin,
                         "success": dpa.best_hypothesis == key_byte}
    except SidelabError as exc:
        report["status"] = "error"
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        arts.error = f"{type(exc).__name__}: {exc}"
    report["artifacts"] = sorted(x.name for x in (arts.trace_csv, arts.aes_csv, arts.report_json) if x)
    arts.report = report
    _write_json(arts.report_json, report)
    return arts


# ---------------------------------------------------------------------------
# sweeps

SWEEP_HEADER = ["axis", "value", "seed", "accuracy", "mean_margin", "min_margin",
                "threshold_used", "single_cluster", "no_signal", "error"]


def _fmt(value) -> str:
    return value if isinstance(value, str) else json.dumps(value)


def _sweep_point(args) -> dict:
    sc, axis, value, seed = args
    row = {"axis": axis, "value": _fmt(value), "seed": seed}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SingleClusterWarning)
            rep = run_pipeline(with_seed_offset(with_value(sc, axis, value), seed)).report
    except (SidelabError, ValueError) as exc:
        row.update(accuracy=None, mean_margin=None, min_margin=None, threshold_used=None,
                   single_cluster=None, no_signal=None, error=f"{type(exc).__name__}: {exc}")
        return row
    margins = rep.per_bit_margin or [0.0]
    row.update(accuracy=rep.accuracy, mean_margin=float(np.mean(margins)),
               min_margin=float(np.min(margins)), threshold_used=rep.threshold_used,
               single_cluster=rep.single_cluster, no_signal=rep.no_signal, error=None)
    return row


def run_sweep(sc: ScenarioConfig, axis: str, values: Sequence, num_seeds: int,
              jobs: int = 1) -> list[dict]:
    """One pipeline run per (value, seed); rows in value-major, seed-minor order.

    Seed ``i`` shifts the scenario's trial seeds by ``i`` (see
    :func:`~sidelab.scenario.with_seed_offset`). ``jobs > 1`` runs points in
    worker processes; the row order does not depend on it.
    """
    validate_scenario(sc)
    check_axis(sc, axis)
    if num_seeds < 1:
        raise ValueError("num_seeds must be >= 1")
    for v in values:  # fail fast on a bad value before any long run
        with_value(sc, axis, v)
    points = [(sc, axis, v, i) for v in values for i in range(num_seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_point, points))
    return [_sweep_point(p) for p in points]


def write_sweep_csv(rows: Sequence[dict], path: PathLike) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow(["" if r[k] is None else r[k] for k in SWEEP_HEADER])
    return path


def summarize_sweep(rows: Sequence[dict]) -> list[tuple[str, float, int]]:
    """``(value, mean accuracy, runs)`` per swept value, in sweep order."""
    groups: dict[str, list[float]] = {}
    for r in rows:
        if r["accuracy"] is not None:
            groups.setdefault(r["value"], []).append(r["accuracy"])
        else:
            groups.setdefault(r["value"], [])
    return [(v, float(np.mean(a)) if a else float("nan"), len(a)) for v, a in groups.items()]
