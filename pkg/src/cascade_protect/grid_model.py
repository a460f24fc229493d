"""Static network description, case-file ingestion and topology queries."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatchError, InvalidCaseError, ParseError
from .state import TopologyState

log = logging.getLogger(__name__)


class SlackPolicy(str, Enum):
    DISTRIBUTED_UNIFORM = "distributed_uniform"
    DISTRIBUTED_BY_CAPACITY = "distributed_by_capacity"


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int  # 1-based bus index
    to_bus: int
    susceptance: float  # p.u.


@dataclass(frozen=True, eq=False)
class GridCase:
    """Immutable network description in per-unit.

    Bus indices are 1-based positions ``1..m``; ``bus_ids`` keeps the labels
    used by the source file for reporting.
    """

    branches: tuple[Branch, ...]
    injections0: np.ndarray
    injection_bounds: np.ndarray  # shape (m, 2): lower, upper
    flow_thresholds: np.ndarray
    base_power: float = 100.0
    slack_policy: SlackPolicy = SlackPolicy.DISTRIBUTED_UNIFORM
    bus_ids: tuple[int, ...] = ()
    name: str = ""
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        inj = np.array(self.injections0, dtype=float).ravel()
        bounds = np.array(self.injection_bounds, dtype=float).reshape(-1, 2)
        sigma = np.array(self.flow_thresholds, dtype=float).ravel()
        for arr in (inj, bounds, sigma):
            arr.setflags(write=False)
        object.__setattr__(self, "injections0", inj)
        object.__setattr__(self, "injection_bounds", bounds)
        object.__setattr__(self, "flow_thresholds", sigma)
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "slack_policy", SlackPolicy(self.slack_policy))
        if not self.bus_ids:
            object.__setattr__(self, "bus_ids", tuple(range(1, len(inj) + 1)))
        violations = case_violations(self)
        if violations:
            raise InvalidCaseError("; ".join(violations), violations=violations)

    @property
    def bus_count(self) -> int:
        return len(self.injections0)

    @property
    def branch_count(self) -> int:
        return len(self.branches)

    @property
    def from_index(self) -> np.ndarray:
        """0-based from-bus index per branch."""
        return np.array([b.from_bus - 1 for b in self.branches], dtype=int)

    @property
    def to_index(self) -> np.ndarray:
        return np.array([b.to_bus - 1 for b in self.branches], dtype=int)

    @property
    def susceptances(self) -> np.ndarray:
        return np.array([b.susceptance for b in self.branches], dtype=float)

    def all_on(self) -> TopologyState:
        return TopologyState.all_on(self.branch_count)

    def with_thresholds(self, thresholds, note: str | None = None) -> "GridCase":
        notes = self.notes + ((note,) if note else ())
        return replace(self, flow_thresholds=np.asarray(thresholds, dtype=float), notes=notes)


def case_violations(case: GridCase) -> list[str]:
    """Every failed GridCase invariant, as human-readable messages."""
    out = []
    m = len(case.injections0)
    n = len(case.branches)
    if m < 1:
        out.append("bus_count must be positive")
    if n < 1:
        out.append("branch_count must be positive")
    if not (np.isfinite(case.base_power) and case.base_power > 0):
        out.append(f"base_power must be > 0 (got {case.base_power})")
    if case.injection_bounds.shape != (m, 2):
        out.append(f"injection_bounds must have shape ({m}, 2)")
    if len(case.flow_thresholds) != n:
        out.append(f"flow_thresholds must have length {n} (got {len(case.flow_thresholds)})")
    if len(case.bus_ids) != m:
        out.append("bus_ids must have one label per bus")
    for k, br in enumerate(case.branches, start=1):
        if br.id != k:
            out.append(f"branch ids must be dense and 1-based (position {k} has id {br.id})")
        for end in (br.from_bus, br.to_bus):
            if not 1 <= end <= m:
                out.append(f"branch {br.id}: endpoint {end} is not a bus index in [1, {m}]")
        if br.from_bus == br.to_bus:
            out.append(f"branch {br.id}: self-loop at bus {br.from_bus}")
        if not np.isfinite(br.susceptance) or br.susceptance == 0:
            out.append(f"branch {br.id}: susceptance must be nonzero and finite")
    if len(case.flow_thresholds) == n:
        for j in np.flatnonzero(~(case.flow_thresholds > 0) | ~np.isfinite(case.flow_thresholds)):
            out.append(f"branch {j + 1}: flow threshold must be > 0 (got {case.flow_thresholds[j]})")
    if case.injection_bounds.shape == (m, 2):
        lo, hi = case.injection_bounds[:, 0], case.injection_bounds[:, 1]
        p0 = case.injections0
        for i in np.flatnonzero(~(lo <= hi)):
            out.append(f"bus {case_label(case, i)}: injection lower bound exceeds upper bound")
        for i in np.flatnonzero(~((lo <= p0) & (p0 <= hi))):
            out.append(f"bus {case_label(case, i)}: initial injection {p0[i]:g} outside bounds [{lo[i]:g}, {hi[i]:g}]")
    if not np.all(np.isfinite(case.injections0)):
        out.append("injections0 must be finite")
    return out


def case_label(case: GridCase, i: int) -> int:
    return case.bus_ids[i] if len(case.bus_ids) > i else i + 1


def default_bounds(p0: np.ndarray) -> np.ndarray:
    """Generators may move in [0, 2 p0]; loads may be shed down to zero;
    zero-injection buses stay at zero."""
    p0 = np.asarray(p0, dtype=float)
    lo = np.where(p0 > 0, 0.0, p0)
    hi = np.where(p0 > 0, 2 * p0, 0.0)
    return np.column_stack([lo, hi])


# ---------------------------------------------------------------------------
# Topology queries
# ---------------------------------------------------------------------------

def incidence(case: GridCase) -> sp.csr_matrix:
    """Branch-to-bus incidence (n x m): +1 at the from bus, -1 at the to bus."""
    n, m = case.branch_count, case.bus_count
    rows = np.repeat(np.arange(n), 2)
    cols = np.column_stack([case.from_index, case.to_index]).ravel()
    vals = np.tile([1.0, -1.0], n)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, m))


class UnionFind:
    def __init__(self, size: int):
        self.parent = list(range(size))
        self.rank = [0] * size

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1


def _check_state(case: GridCase, state: TopologyState) -> None:
    if state.n != case.branch_count:
        raise DimensionMismatchError(
            f"state has {state.n} bits but case has {case.branch_count} branches")


def island_labels(case: GridCase, state: TopologyState) -> np.ndarray:
    """0-based island label per bus. Islands are numbered by their lowest bus."""
    _check_state(case, state)
    uf = UnionFind(case.bus_count)
    fr, to = case.from_index, case.to_index
    bits = state.bits
    for l in range(case.branch_count):
        if (bits >> l) & 1:
            uf.union(int(fr[l]), int(to[l]))
    labels = np.empty(case.bus_count, dtype=int)
    seen: dict[int, int] = {}
    for i in range(case.bus_count):
        labels[i] = seen.setdefault(uf.find(i), len(seen))
    return labels


def islands(case: GridCase, state: TopologyState) -> list[frozenset[int]]:
    """Connected components of the in-service graph, as sets of 1-based bus
    indices. Isolated buses come back as singletons."""
    labels = island_labels(case, state)
    groups: list[set[int]] = [set() for _ in range(labels.max() + 1)]
    for i, lab in enumerate(labels):
        groups[lab].add(i + 1)
    return [frozenset(g) for g in groups]


def adjacent_to_outage(case: GridCase, state: TopologyState) -> np.ndarray:
    """Boolean per branch: shares an endpoint bus with some tripped branch."""
    _check_state(case, state)
    fr, to = case.from_index, case.to_index
    off = ~state.mask()
    touched = np.zeros(case.bus_count, dtype=bool)
    touched[fr[off]] = True
    touched[to[off]] = True
    return touched[fr] | touched[to]


# ---------------------------------------------------------------------------
# Case files
# ---------------------------------------------------------------------------

THRESHOLD_MODES = ("auto", "rate_a", "base_flow")


def load_case(
    path,
    format: str | None = None,
    *,
    thresholds: str = "auto",
    threshold_multiplier: float = 2.0,
    threshold_floor: float = 0.1,
    balance_generation: bool = True,
    slack_policy: str | None = None,
) -> GridCase:
    """Read a native JSON or MATPOWER case.

    ``thresholds`` chooses where flow limits come from: ``"rate_a"`` uses the
    file's limits only, ``"base_flow"`` always synthesizes them as
    ``threshold_multiplier * |base-case flow|`` (at least ``threshold_floor``),
    and ``"auto"`` synthesizes only the branches whose limit is missing or 0.
    """
    path = Path(path)
    if thresholds not in THRESHOLD_MODES:
        raise ValueError(f"thresholds must be one of {THRESHOLD_MODES}")
    if format is None:
        format = "matpower" if path.suffix.lower() == ".m" else "native_json"
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read case file {path}: {exc}") from exc
    if format == "native_json":
        raw = _parse_native(text)
    elif format == "matpower":
        raw = _parse_matpower(text, balance_generation=balance_generation)
    else:
        raise ValueError(f"unknown case format {format!r}")
    raw.setdefault("name", path.stem)
    if slack_policy is not None:
        raw["slack_policy"] = slack_policy
    return _build_case(raw, thresholds, threshold_multiplier, threshold_floor)


def _build_case(raw: dict, mode: str, multiplier: float, floor: float) -> GridCase:
    limits = np.array([np.nan if v is None else float(v) for v in raw.pop("limits")])
    missing = ~np.isfinite(limits) | (limits == 0)
    if mode == "rate_a" and missing.any():
        ids = ", ".join(str(j + 1) for j in np.flatnonzero(missing)[:10])
        raise InvalidCaseError(f"flow limit missing for branches {ids}",
                               violations=["flow threshold missing"])
    synth = missing if mode == "auto" else np.full(len(limits), mode == "base_flow")
    provisional = np.where(synth, 1.0, limits)
    notes = list(raw.pop("notes", []))
    case = GridCase(flow_thresholds=provisional, notes=tuple(notes), **raw)
    if synth.any():
        from .dc_flow import base_flow_thresholds

        sigma = base_flow_thresholds(case, multiplier=multiplier, floor=floor)
        sigma = np.where(synth, sigma, limits)
        note = (f"flow thresholds synthesized for {int(synth.sum())} of {len(synth)} branches "
                f"as {multiplier:g} x |base flow| (floor {floor:g} p.u.)")
        log.warning(note)
        case = case.with_thresholds(sigma, note)
    return case


def _parse_native(text: str) -> dict:
    try:
        doc = json.loads(text)
        base = float(doc.get("base_mva", 100.0))
        buses = doc["buses"]
        ids = [int(b["id"]) for b in buses]
        p0 = np.array([float(b["p0"]) for b in buses])
        has_bounds = ["p_min" in b and "p_max" in b for b in buses]
        bounds = default_bounds(p0)
        for i, b in enumerate(buses):
            if has_bounds[i]:
                bounds[i] = (float(b["p_min"]), float(b["p_max"]))
        pos = {bid: k + 1 for k, bid in enumerate(ids)}
        if len(pos) != len(ids):
            raise InvalidCaseError("duplicate bus ids", violations=["duplicate bus ids"])
        rows = sorted(
            ((Branch(int(br["id"]), pos.get(int(br["from"]), -1), pos.get(int(br["to"]), -1),
                     float(br["susceptance"])), br.get("flow_limit"))
             for br in doc["branches"]),
            key=lambda row: row[0].id)
        branches = [b for b, _ in rows]
        limits = [lim for _, lim in rows]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed native case: {exc!r}") from exc
    out = dict(branches=branches, injections0=p0, injection_bounds=bounds, limits=limits,
               base_power=base, bus_ids=tuple(ids))
    if "slack_policy" in doc:
        out["slack_policy"] = doc["slack_policy"]
    if "name" in doc:
        out["name"] = str(doc["name"])
    if not all(has_bounds):
        out["notes"] = [f"default injection bounds used for {has_bounds.count(False)} buses"]
    return out


_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")


def _matpower_matrix(body: str) -> np.ndarray:
    rows = []
    for line in body.splitlines():
        line = line.split("%", 1)[0]
        for chunk in line.split(";"):
            vals = chunk.replace(",", " ").split()
            if vals:
                rows.append([float(v) for v in vals])
    if not rows:
        return np.zeros((0, 0))
    width = min(len(r) for r in rows)
    return np.array([r[:width] for r in rows])


def _parse_matpower(text: str, balance_generation: bool = True) -> dict:
    """Best-effort MATPOWER v2 reader; AC fields are ignored."""
    m = _SCALAR_RE.search(text)
    if m is None:
        raise ParseError("MATPOWER file has no mpc.baseMVA")
    base = float(m.group(1))
    try:
        mats = {name: _matpower_matrix(body) for name, body in _MATRIX_RE.findall(text)}
    except ValueError as exc:
        raise ParseError(f"malformed MATPOWER matrix: {exc}") from exc
    for key, width in (("bus", 3), ("gen", 10), ("branch", 6)):
        if key not in mats or mats[key].shape[1] < width:
            raise ParseError(f"MATPOWER file lacks a usable mpc.{key} matrix")
    bus, gen, branch = mats["bus"], mats["gen"], mats["branch"]
    ids = [int(v) for v in bus[:, 0]]
    pos = {bid: k for k, bid in enumerate(ids)}
    m_ = len(ids)
    pd = bus[:, 2] / base
    pg = np.zeros(m_)
    pmin = np.zeros(m_)
    pmax = np.zeros(m_)
    has_gen = np.zeros(m_, dtype=bool)
    for row in gen:
        if row[7] <= 0:
            continue
        k = pos.get(int(row[0]))
        if k is None:
            raise InvalidCaseError(f"generator at unknown bus {int(row[0])}",
                                   violations=["generator bus not in bus table"])
        pg[k] += row[1] / base
        pmax[k] += row[8] / base
        pmin[k] += row[9] / base
        has_gen[k] = True
    notes = []
    total_g, total_d = pg.sum(), pd.sum()
    if balance_generation and total_g > 0 and not np.isclose(total_g, total_d, rtol=0, atol=1e-9):
        pg *= total_d / total_g
        notes.append(f"generation scaled by {total_d / total_g:.6f} to balance total load (lossless DC)")
    p0 = pg - pd
    lo = np.where(has_gen, pmin, 0.0) - pd
    hi = np.where(has_gen, pmax, 0.0) - np.minimum(pd, 0.0)
    branches, limits = [], []
    in_service = branch[:, 10] > 0 if branch.shape[1] > 10 else np.ones(len(branch), dtype=bool)
    if not in_service.all():
        notes.append(f"{int((~in_service).sum())} out-of-service branches dropped")
    for row in branch[in_service]:
        f, t = pos.get(int(row[0])), pos.get(int(row[1]))
        x = row[3]
        branches.append(Branch(len(branches) + 1, -1 if f is None else f + 1,
                               -1 if t is None else t + 1, 1.0 / x if x != 0 else np.inf))
        limits.append(row[5] / base if row[5] > 0 else None)
    return dict(branches=branches, injections0=p0, injection_bounds=np.column_stack([lo, hi]),
                limits=limits, base_power=base, bus_ids=tuple(ids), notes=notes)


def case_to_native(case: GridCase) -> dict:
    """Native JSON document for a case (round-trips through load_case)."""
    return {
        "base_mva": case.base_power,
        "name": case.name,
        "slack_policy": case.slack_policy.value,
        "buses": [
            {"id": int(case.bus_ids[i]), "p0": float(case.injections0[i]),
             "p_min": float(case.injection_bounds[i, 0]), "p_max": float(case.injection_bounds[i, 1])}
            for i in range(case.bus_count)
        ],
        "branches": [
            {"id": b.id, "from": int(case.bus_ids[b.from_bus - 1]), "to": int(case.bus_ids[b.to_bus - 1]),
             "susceptance": b.susceptance, "flow_limit": float(case.flow_thresholds[b.id - 1])}
            for b in case.branches
        ],
    }


def make_case(
    branches: Sequence[tuple[int, int, float]],
    injections0,
    flow_thresholds,
    injection_bounds=None,
    **kwargs,
) -> GridCase:
    """Build a case from ``(from_bus, to_bus, susceptance)`` triples."""
    brs = [Branch(k + 1, int(f), int(t), float(b)) for k, (f, t, b) in enumerate(branches)]
    p0 = np.asarray(injections0, dtype=float)
    if injection_bounds is None:
        injection_bounds = default_bounds(p0)
    return GridCase(branches=brs, injections0=p0, injection_bounds=injection_bounds,
                    flow_thresholds=flow_thresholds, **kwargs)
