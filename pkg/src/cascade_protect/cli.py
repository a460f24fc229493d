"""Command-line interface.

    cascade-protect predict  --scenario S.json [--out DIR]
    cascade-protect protect  --scenario S.json [--out DIR]
    cascade-protect flow     --case CASE [--outages 8 21] [--injections P.csv]
    cascade-protect validate --case CASE

Exit codes: 0 success, 1 input/parse error, 2 infeasible robust set,
3 numerical failure (including non-convergence).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import CascadeError, EmptyIntersectionError
from .grid_model import THRESHOLD_MODES, load_case
from .report import format_flow_table, run_flow, run_predict, run_protect, run_validate
from .scenario import load_scenario

log = logging.getLogger("cascade_protect")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cascade-protect",
                                description="Cascading-failure prediction and injection-based protection.")
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    for name, help_ in (("predict", "propagate the cascade distribution and rank paths"),
                        ("protect", "predict, then compute the injection adjustment")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--scenario", required=True, type=Path)
        s.add_argument("--out", type=Path, help="directory for report.json and CSV files")
        s.add_argument("--seed", type=_u64)
        s.add_argument("--epsilon", type=float)
        s.add_argument("--horizon", type=int)
        s.add_argument("--beam", type=int, dest="beam_width")
        s.add_argument("--no-timings", action="store_true",
                       help="omit wall-clock timings (byte-reproducible output)")

    s = sub.add_parser("flow", help="DC flow table for one topology")
    s.add_argument("--case", required=True, type=Path)
    s.add_argument("--outages", type=int, nargs="*", default=[], help="tripped branch ids")
    s.add_argument("--injections", type=Path,
                   help="CSV with bus_id,p columns (p.u.) overriding the base injections")
    s.add_argument("--thresholds", choices=THRESHOLD_MODES, default="auto")
    s.add_argument("--out", type=Path, help="write flows.csv here")

    s = sub.add_parser("validate", help="check a case file")
    s.add_argument("--case", required=True, type=Path)
    s.add_argument("--thresholds", choices=THRESHOLD_MODES, default="auto")
    return p


def _read_injections(path: Path, bus_ids) -> np.ndarray:
    index = {int(b): i for i, b in enumerate(bus_ids)}
    p = np.zeros(len(bus_ids))
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            b = int(row["bus_id"])
            if b not in index:
                raise ValueError(f"unknown bus id {b} in {path}")
            p[index[b]] = float(row["p"])
    return p


def _scenario_command(args) -> int:
    scenario = load_scenario(args.scenario).override(
        seed=args.seed, epsilon=args.epsilon, horizon=args.horizon, beam_width=args.beam_width)
    if args.horizon is not None and scenario.protect_at_step > args.horizon:
        scenario = scenario.override(protect_at_step=args.horizon)
    runner = run_protect if args.command == "protect" else run_predict
    report = runner(scenario)
    timings = not args.no_timings
    if args.out:
        for path in report.write(args.out, timings=timings):
            log.info("wrote %s", path)
    else:
        sys.stdout.write(report.to_json(timings))
    for w in report.warnings:
        log.warning(w)
    return report.exit_code


def _flow_command(args) -> int:
    case = load_case(args.case, thresholds=args.thresholds)
    inj = _read_injections(args.injections, case.bus_ids) if args.injections else None
    rows = run_flow(args.case, args.outages, inj, case=case)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "flows.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    sys.stdout.write(format_flow_table(rows))
    return EXIT_OK


def _validate_command(args) -> int:
    result = run_validate(args.case, thresholds=args.thresholds)
    sys.stdout.write(json.dumps(result, sort_keys=True, indent=2) + "\n")
    return EXIT_OK if result["ok"] else EXIT_INPUT


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("predict", "protect"):
            return _scenario_command(args)
        if args.command == "flow":
            return _flow_command(args)
        return _validate_command(args)
    except EmptyIntersectionError as exc:
        log.error("%s: %s. Injection adjustment alone cannot stop the predicted cascades; "
                  "consider other remedial actions (load shedding, switching).", exc.code, exc)
        return EXIT_INFEASIBLE
    except CascadeError as exc:
        log.error("%s: %s", exc.code, exc)
        return exc.exit_code
    except (ValueError, KeyError, OSError) as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
