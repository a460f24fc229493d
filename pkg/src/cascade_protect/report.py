"""Prediction / protection pipelines and their serialized reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cascade_markov import (
    CascadePath, LambdaCache, _Row, SparseDistribution, beam_paths, monte_carlo_cascade,
    path_probability, prevention_bound, propagate, uncertainty_set,
)
from .dc_flow import solve_flow
from .errors import CascadeError, InvalidCaseError
from .grid_model import GridCase, islands, load_case
from .robust_protect import ProtectionResult, solve_protection
from .scenario import Scenario
from .state import TopologyState

log = logging.getLogger(__name__)


@dataclass
class RunReport:
    scenario: Scenario
    case: GridCase
    trajectory: list[SparseDistribution]
    d_epsilon: list[TopologyState]
    bound: float
    bound_step: int
    paths: list[CascadePath]
    protection: ProtectionResult | None = None
    monte_carlo: dict | None = None
    status: str = "ok"
    warnings: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 0 if self.status == "ok" else 3

    def to_dict(self, timings: bool = True) -> dict:
        case = self.case
        steps = range(1, len(self.trajectory))
        d_eps = [{
            "state": s.to_hex(),
            "outaged": list(s.outaged()),
            "probabilities": [self.trajectory[k].get(s) for k in steps],
        } for s in self.d_epsilon]
        out = {
            "status": self.status,
            "scenario": self.scenario.to_dict(),
            "case": {"name": case.name, "buses": case.bus_count,
                     "branches": case.branch_count, "notes": list(case.notes)},
            "trajectory": [{"step": x.step, "states": len(x), "mass": x.mass()}
                           for x in self.trajectory],
            "d_epsilon": d_eps,
            "bound": {"step": self.bound_step, "value": self.bound},
            "paths": [_path_dict(i + 1, p) for i, p in enumerate(self.paths)],
            "warnings": list(self.warnings),
        }
        if self.monte_carlo is not None:
            out["monte_carlo"] = self.monte_carlo
        if self.protection is not None:
            pr = self.protection
            res = pr.result
            out["protection"] = {
                "converged": res.converged,
                "iterations": res.iterations,
                "max_violation": res.max_violation,
                "elementary_sets": res.set_count,
                "states": [s.to_hex() for s in pr.states],
                "postcheck_worst_excess": dict(sorted(pr.postcheck.items())),
                "delta_norm": float(np.linalg.norm(pr.delta)),
                "delta_pb": [{"bus_id": int(b), "delta_p": float(d)}
                             for b, d in zip(case.bus_ids, pr.delta)],
            }
        if timings:
            out["timings"] = dict(self.timings)
        return out

    def to_json(self, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings), sort_keys=True, indent=2) + "\n"

    def write(self, out_dir, timings: bool = True) -> list[Path]:
        """report.json, paths.csv and, after protection, delta_pb.csv and
        solver_trace.jsonl."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = [out_dir / "report.json", out_dir / "paths.csv"]
        written[0].write_text(self.to_json(timings), encoding="utf-8")
        written[1].write_text(paths_csv(self.paths), encoding="utf-8")
        if self.protection is not None:
            p = out_dir / "delta_pb.csv"
            p.write_text(delta_csv(self.case, self.protection.delta), encoding="utf-8")
            t = out_dir / "solver_trace.jsonl"
            t.write_text("".join(json.dumps(row, sort_keys=True) + "\n"
                                 for row in self.protection.result.increments), encoding="utf-8")
            written += [p, t]
        return written


def _path_dict(rank: int, p: CascadePath) -> dict:
    return {
        "rank": rank,
        "path": p.describe(),
        "probability": p.probability,
        "initial_outages": list(p.initial_outages),
        "initial_probability": p.initial_probability,
        "steps": [list(s) for s in p.steps],
        "step_probabilities": list(p.step_probabilities),
        "terminal_state": p.terminal_state.to_hex(),
    }


def paths_csv(paths: list[CascadePath]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "path", "probability", "terminal_outaged"])
    for i, p in enumerate(paths, 1):
        w.writerow([i, p.describe(), repr(p.probability),
                    " ".join(map(str, p.terminal_state.outaged()))])
    return buf.getvalue()


def delta_csv(case: GridCase, delta) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bus_id", "delta_p"])
    for b, d in zip(case.bus_ids, delta):
        w.writerow([int(b), repr(float(d))])
    return buf.getvalue()


@contextmanager
def _timed(timings: dict, name: str):
    t0 = time.perf_counter()
    yield
    timings[name] = time.perf_counter() - t0


def run_predict(scenario: Scenario, *, case: GridCase | None = None, lambdas=None) -> RunReport:
    """Propagate the truncated distribution, collect D_eps, the prevention
    bound at ``protect_at_step`` and the most probable paths."""
    timings: dict[str, float] = {}
    with _timed(timings, "load"):
        if case is None:
            case = scenario.load_case()
    params = scenario.params
    n = case.branch_count
    x0 = SparseDistribution.from_contingencies(
        n, [(c.outaged, c.probability) for c in scenario.initial_contingencies])
    fn = LambdaCache(case, params, fn=lambdas)
    with _timed(timings, "propagate"):
        traj = propagate(case, x0, params, scenario.epsilon, scenario.horizon, lambdas=fn)
        d_eps = sorted(uncertainty_set(traj, scenario.epsilon, scenario.horizon))
        k = scenario.protect_at_step
        bound = prevention_bound(traj, k)
    with _timed(timings, "paths"):
        paths = beam_paths(case, x0, params, scenario.beam_width, scenario.horizon, lambdas=fn)
    warnings = sorted({w for s in d_eps for w in _row_warnings(fn, s, params)})
    mc = None
    if scenario.monte_carlo_samples:
        with _timed(timings, "monte_carlo"):
            res = monte_carlo_cascade(case, x0, params, scenario.horizon,
                                      scenario.monte_carlo_samples, scenario.seed, lambdas=fn)
            mc = {"samples": res.samples, "seed": scenario.seed,
                  "frequencies": [{s.to_hex(): res.frequencies(j).get(s) for s in d_eps}
                                  for j in range(1, scenario.horizon + 1)]}
    log.info("%s: %d states in D_eps, bound %.4f at step %d",
             case.name, len(d_eps), bound, k)
    return RunReport(scenario=scenario, case=case, trajectory=traj, d_epsilon=d_eps,
                     bound=bound, bound_step=k, paths=paths, monte_carlo=mc,
                     warnings=warnings, timings=timings)


def _row_warnings(fn, state, params) -> list[str]:
    return _Row(state, fn(state), params).warnings


def run_protect(scenario: Scenario, *, case: GridCase | None = None, lambdas=None) -> RunReport:
    """Predict, then find the smallest injection change that keeps every
    topology in D_eps (steps up to ``protect_at_step``) within limits."""
    report = run_predict(scenario, case=case, lambdas=lambdas)
    k = scenario.protect_at_step
    states = sorted(uncertainty_set(report.trajectory, scenario.epsilon, k))
    with _timed(report.timings, "protect"):
        if states:
            report.protection = solve_protection(
                report.case, states, N=scenario.dykstra_N, tol=scenario.feasibility_tol,
                bound=report.bound)
    if report.protection is None:
        report.warnings.append("uncertainty set is empty; no injection change computed")
    elif not report.protection.result.converged:
        report.status = "NOT_CONVERGED"
        report.warnings.append(
            f"Dykstra did not converge in {scenario.dykstra_N} cycles "
            f"(max violation {report.protection.result.max_violation:.3e} p.u.)")
    return report


def run_flow(case_path, outages=(), injections=None, *, thresholds: str = "auto",
             case: GridCase | None = None) -> list[dict]:
    """Per-branch flow table for one topology."""
    if case is None:
        case = load_case(case_path, thresholds=thresholds)
    state = TopologyState.from_outages(case.branch_count, outages)
    sol = solve_flow(case, state, injections)
    sigma = case.flow_thresholds
    rows = []
    for br, f, s, on in zip(case.branches, sol.flows, sigma, state.mask()):
        r = abs(f) / s
        rows.append({"branch": br.id, "from_bus": int(case.bus_ids[br.from_bus - 1]),
                     "to_bus": int(case.bus_ids[br.to_bus - 1]), "in_service": bool(on),
                     "flow": float(f), "threshold": float(s), "ratio": float(r),
                     "overloaded": bool(r > 1.0)})
    return rows


def format_flow_table(rows: list[dict]) -> str:
    lines = [f"{'branch':>6} {'from':>5} {'to':>5} {'flow':>10} {'sigma':>9} {'ratio':>7}  flag"]
    for r in rows:
        flag = "OFF" if not r["in_service"] else ("OVER" if r["overloaded"] else "")
        lines.append(f"{r['branch']:>6} {r['from_bus']:>5} {r['to_bus']:>5} {r['flow']:>10.5f} "
                     f"{r['threshold']:>9.5f} {r['ratio']:>7.4f}  {flag}".rstrip())
    return "\n".join(lines) + "\n"


def run_validate(case_path, *, thresholds: str = "auto") -> dict:
    """Load a case and report invariant violations, notes and islands."""
    try:
        case = load_case(case_path, thresholds=thresholds)
    except InvalidCaseError as exc:
        return {"ok": False, "code": exc.code, "violations": exc.violations, "warnings": []}
    except CascadeError as exc:
        return {"ok": False, "code": exc.code, "violations": [str(exc)], "warnings": []}
    isl = islands(case, case.all_on())
    warnings = list(case.notes)
    if len(isl) > 1:
        warnings.append(f"intact network has {len(isl)} islands")
    return {"ok": True, "code": None, "violations": [], "warnings": warnings,
            "name": case.name, "buses": case.bus_count, "branches": case.branch_count,
            "islands": len(isl)}


def verify_report(report_dict: dict) -> float:
    """Recompute the bound from the serialized D_eps table."""
    k = report_dict["bound"]["step"]
    return math.fsum(row["probabilities"][k - 1] for row in report_dict["d_epsilon"])


def recompute_paths(report: RunReport, lambdas=None) -> list[float]:
    """Path probabilities recomputed independently of the beam search."""
    fn = LambdaCache(report.case, report.scenario.params, fn=lambdas)
    return [path_probability(p, fn, report.scenario.params) for p in report.paths]
