"""Command line entry point: ``sidelab run|sweep|power|validate <scenario.yaml>``.

Exit status: 0 on success, 1 when the scenario fails validation, 2 when the
pipeline itself fails (the error is also recorded in the report).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import ScenarioError, SidelabError
from .harness import resolve_output_dir, run_power, run_scenario, run_sweep, summarize_sweep, write_sweep_csv
from .scenario import dump_scenario, load_document, parse_scenario

EXIT_OK, EXIT_INVALID, EXIT_PIPELINE = 0, 1, 2


def _parse_values(text: str) -> list:
    """``0,8,16`` -> [0, 8, 16]; each item is read as a YAML scalar."""
    return [load_document(v.strip(), "--values") for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sidelab", description="Cache and power side-channel experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one cache-attack scenario")
    run.add_argument("scenario", type=Path)
    run.add_argument("-o", "--output-dir", type=Path)

    sweep = sub.add_parser("sweep", help="vary one parameter over values and seeds")
    sweep.add_argument("scenario", type=Path)
    sweep.add_argument("--axis", required=True,
                       help="'defense' or a dotted scenario field, e.g. noise_sigma or attack.shuffle_probe_order")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--seeds", type=int, default=1, help="seeds per value (default 1)")
    sweep.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    sweep.add_argument("-o", "--output-dir", type=Path)

    power = sub.add_parser("power", help="SPA on the modexp key and DPA on an AES key byte")
    power.add_argument("scenario", type=Path)
    power.add_argument("-o", "--output-dir", type=Path)

    val = sub.add_parser("validate", help="parse and validate, printing the resolved scenario")
    val.add_argument("scenario", type=Path)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = parse_scenario(args.scenario)
        if args.command == "validate":
            sys.stdout.write(dump_scenario(sc))
            return EXIT_OK
        if args.command == "sweep":
            values = _parse_values(args.values)
            if not values:
                raise ScenarioError("--values is empty")
    except (ScenarioError, SidelabError, ValueError) as exc:
        print(f"sidelab: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID

    try:
        if args.command == "run":
            arts = run_scenario(sc, args.output_dir)
            if not arts.ok:
                print(f"sidelab: pipeline error: {arts.error}", file=sys.stderr)
                return EXIT_PIPELINE
            rec = arts.report["recovery"]
            print(f"accuracy {rec['accuracy']:.4f}  recovered {rec['recovered']}  truth {rec['truth']}")
            for w in arts.report["warnings"]:
                print(f"warning: {w}")
            print(f"artifacts in {arts.output_dir}")
        elif args.command == "power":
            arts = run_power(sc, args.output_dir)
            if not arts.ok:
                print(f"sidelab: pipeline error: {arts.error}", file=sys.stderr)
                return EXIT_PIPELINE
            if "spa" in arts.report:
                print(f"SPA accuracy {arts.report['spa']['accuracy']}")
            dpa = arts.report["dpa"]
            print(f"DPA best 0x{dpa['best_hypothesis']:02x}  true 0x{dpa['true_key_byte']:02x}  "
                  f"rank {dpa['rank_of_true_key']}")
            print(f"artifacts in {arts.output_dir}")
        else:
            try:
                rows = run_sweep(sc, args.axis, values, args.seeds, jobs=args.jobs)
            except (ScenarioError, ValueError) as exc:
                print(f"sidelab: invalid sweep: {exc}", file=sys.stderr)
                return EXIT_INVALID
            out = resolve_output_dir(sc, args.output_dir)
            path = write_sweep_csv(rows, out / "sweep.csv")
            for value, acc, n in summarize_sweep(rows):
                print(f"{args.axis}={value}: mean accuracy {acc:.4f} over {n} run(s)")
            print(f"wrote {path}")
            if any(r["error"] for r in rows):
                print("sidelab: some sweep points failed; see the error column", file=sys.stderr)
                return EXIT_PIPELINE
    except (SidelabError, OSError) as exc:
        print(f"sidelab: pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
