"""Minimal injection adjustment that keeps every predicted topology within
its flow limits.

For each topology ``s`` the feasible injections form a polyhedron: a box
(injection bounds), one balance hyperplane per island, and two halfspaces
per live branch (``|H_s[j] @ p| <= sigma_j``). The closest point to the
pre-event injections in the intersection over all topologies is found with
Dykstra's cyclic projection algorithm.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dc_flow import flow_map, solve_flow
from .errors import DimensionMismatchError, EmptyIntersectionError, PostcheckFailedError
from .grid_model import GridCase, island_labels
from .state import TopologyState

log = logging.getLogger(__name__)

BOX, HALFSPACE, HYPERPLANE = "box", "halfspace", "hyperplane"


@dataclass(frozen=True, eq=False)
class ElementaryConvexSet:
    """``box``: lo <= x <= hi; ``halfspace``: a @ x <= b; ``hyperplane``: a @ x == b."""

    kind: str
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    a: np.ndarray | None = None
    b: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.kind == BOX:
            lo = np.asarray(self.lo, dtype=float)
            hi = np.asarray(self.hi, dtype=float)
            if lo.shape != hi.shape or np.any(lo > hi):
                raise ValueError("box needs lo <= hi with matching shapes")
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)
        elif self.kind in (HALFSPACE, HYPERPLANE):
            a = np.asarray(self.a, dtype=float)
            if not np.linalg.norm(a) > 0:
                raise ValueError(f"{self.kind} normal must be nonzero")
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", float(self.b))
        else:
            raise ValueError(f"unknown set kind {self.kind!r}")

    @classmethod
    def box(cls, lo, hi, label: str = "") -> "ElementaryConvexSet":
        return cls(BOX, lo=lo, hi=hi, label=label)

    @classmethod
    def halfspace(cls, a, b, label: str = "") -> "ElementaryConvexSet":
        return cls(HALFSPACE, a=a, b=b, label=label)

    @classmethod
    def hyperplane(cls, a, b, label: str = "") -> "ElementaryConvexSet":
        return cls(HYPERPLANE, a=a, b=b, label=label)

    @property
    def dim(self) -> int:
        return len(self.lo) if self.kind == BOX else len(self.a)

    def violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.kind == BOX:
            return float(max(0.0, np.max(self.lo - x), np.max(x - self.hi)))
        r = float(self.a @ x - self.b)
        return max(r, 0.0) if self.kind == HALFSPACE else abs(r)

    def distance(self, x) -> float:
        """Euclidean distance from ``x`` to the set."""
        x = np.asarray(x, dtype=float)
        if self.kind == BOX:
            return float(np.linalg.norm(x - np.clip(x, self.lo, self.hi)))
        return self.violation(x) / float(np.linalg.norm(self.a))

    def key(self) -> tuple:
        """Identity for de-duplication: exact match after normalizing ``a``."""
        if self.kind == BOX:
            return (BOX, self.lo.tobytes(), self.hi.tobytes())
        norm = np.linalg.norm(self.a)
        return (self.kind, (self.a / norm).tobytes(), self.b / norm)


def project_elementary(point, s: ElementaryConvexSet) -> np.ndarray:
    """Euclidean projection of ``point`` onto one elementary set."""
    x = np.asarray(point, dtype=float)
    if x.shape != (s.dim,):
        raise DimensionMismatchError(f"point has shape {x.shape}, set lives in R^{s.dim}")
    if s.kind == BOX:
        return np.clip(x, s.lo, s.hi)
    t = (s.a @ x - s.b) / (s.a @ s.a)
    if s.kind == HALFSPACE:
        t = max(t, 0.0)
    return x - t * s.a


@dataclass(frozen=True, eq=False)
class TopologyConstraintSet:
    state: TopologyState
    sets: list[ElementaryConvexSet]
    branches: tuple[int, ...] = ()  # 1-based branch of each flow halfspace pair

    def max_violation(self, x) -> float:
        return max((s.violation(x) for s in self.sets), default=0.0)


def build_constraint_set(case: GridCase, state: TopologyState,
                         include_balance: bool = True) -> TopologyConstraintSet:
    m = case.bus_count
    lo, hi = case.injection_bounds[:, 0], case.injection_bounds[:, 1]
    sets = [ElementaryConvexSet.box(lo, hi, label="bounds")]
    if include_balance:
        labels = island_labels(case, state)
        for k in range(labels.max() + 1):
            ind = (labels == k).astype(float)
            buses = np.flatnonzero(ind) + 1
            sets.append(ElementaryConvexSet.hyperplane(ind, 0.0, label=f"balance island@{buses[0]}"))
    h = flow_map(case, state).matrix
    sigma = case.flow_thresholds
    branches = []
    for j in np.flatnonzero(state.mask()):
        row = np.array(h[j])
        if not np.any(row):
            continue
        sets.append(ElementaryConvexSet.halfspace(row, sigma[j], label=f"+flow {j + 1}"))
        sets.append(ElementaryConvexSet.halfspace(-row, sigma[j], label=f"-flow {j + 1}"))
        branches.append(int(j) + 1)
    assert all(s.dim == m for s in sets)
    return TopologyConstraintSet(state=state, sets=sets, branches=tuple(branches))


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

class _Stack:
    """Elementary sets split by kind into arrays for fast cycling."""

    def __init__(self, sets: Sequence[ElementaryConvexSet]):
        self.sets = list(sets)
        m = self.sets[0].dim
        if any(s.dim != m for s in self.sets):
            raise DimensionMismatchError("elementary sets live in different dimensions")
        self.m = m
        lin = [s for s in self.sets if s.kind != BOX]
        self.a = np.array([s.a for s in lin]).reshape(len(lin), m)
        self.b = np.array([s.b for s in lin])
        self.eq = np.array([s.kind == HYPERPLANE for s in lin], dtype=bool)
        self.boxes = [s for s in self.sets if s.kind == BOX]

    def violations(self, x) -> np.ndarray:
        r = self.a @ x - self.b
        r = np.where(self.eq, np.abs(r), np.maximum(r, 0.0))
        box = [max(0.0, np.max(s.lo - x), np.max(x - s.hi)) for s in self.boxes]
        return np.concatenate([r, box])

    def max_violation(self, x) -> float:
        return float(self.violations(x).max(initial=0.0))


@dataclass
class FeasibilityResult:
    feasible: bool | None  # None: undecided (treat as infeasible)
    witness: np.ndarray | None
    max_violation: float
    iterations: int
    gap: float = 0.0  # largest Euclidean distance from the last iterate to a set


def check_feasibility(cset: TopologyConstraintSet | Sequence[ElementaryConvexSet],
                      tol: float = 1e-6, max_iter: int = 1000, start=None) -> FeasibilityResult:
    """Cyclic alternating projections from the box center (or ``start``).

    Finds a point of the intersection when one exists; on an empty
    intersection the iterates stall at a positive gap and the answer is
    ``None`` (unknown).
    """
    sets = cset.sets if isinstance(cset, TopologyConstraintSet) else list(cset)
    stack = _Stack(sets)
    if start is not None:
        x = np.array(start, dtype=float)
    elif stack.boxes:
        x = 0.5 * (stack.boxes[0].lo + stack.boxes[0].hi)
    else:
        x = np.zeros(stack.m)
    viol = stack.max_violation(x)
    it = 0
    while viol > tol and it < max_iter:
        it += 1
        for s in sets:
            x = project_elementary(x, s)
        viol = stack.max_violation(x)
    gap = max(s.distance(x) for s in sets)
    if viol <= tol:
        return FeasibilityResult(True, x, viol, it, gap)
    return FeasibilityResult(None, None, viol, it, gap)


@dataclass
class DykstraSolveResult:
    solution: np.ndarray
    converged: bool
    iterations: int
    max_violation: float
    increments: list[dict] = field(default_factory=list)
    set_count: int = 0


def flatten_sets(sets: Iterable) -> list[ElementaryConvexSet]:
    """Flatten constraint sets into elementary sets, dropping exact duplicates."""
    out, seen = [], set()
    for item in sets:
        group = item.sets if isinstance(item, TopologyConstraintSet) else [item]
        for s in group:
            k = s.key()
            if k not in seen:
                seen.add(k)
                out.append(s)
    return out


def dykstra_project(origin, sets, N: int = 50, tol: float = 1e-6, *,
                    order: Sequence[int] | None = None, early_exit: bool = True) -> DykstraSolveResult:
    """Project ``origin`` onto the intersection of ``sets`` with Dykstra's
    algorithm.

    Each cycle visits every elementary set once: ``y = x + e_i``,
    ``x = P_i(y)``, ``e_i = y - x``. Stops after ``N`` cycles, or earlier
    once the per-cycle movement of ``x``, the change of the corrections and
    the largest violation are all within ``tol``. For halfspaces and hyperplanes the correction ``e_i`` is always
    a multiple of the normal, so only that coefficient is stored.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    elems = flatten_sets(sets)
    if not elems:
        raise ValueError("need at least one set")
    if order is not None:
        elems = [elems[i] for i in order]
    x = np.array(origin, dtype=float)
    if x.shape != (elems[0].dim,):
        raise DimensionMismatchError(f"origin has shape {x.shape}, sets live in R^{elems[0].dim}")
    stack = _Stack(elems)
    kinds = [s.kind for s in elems]
    normals = [s.a for s in elems]
    offsets = [s.b for s in elems]
    sq = [float(s.a @ s.a) if s.kind != BOX else 0.0 for s in elems]
    coef = [0.0] * len(elems)
    box_corr = {i: np.zeros_like(x) for i, k in enumerate(kinds) if k == BOX}
    trace = []
    converged = False
    viol = stack.max_violation(x)
    cycles = 0
    for cycles in range(1, N + 1):
        prev = x.copy()
        # squared change of all corrections this cycle; a cycle can end where
        # it started while corrections still shift between sets
        shift = 0.0
        for i, kind in enumerate(kinds):
            if kind == BOX:
                y = x + box_corr[i]
                x = np.clip(y, elems[i].lo, elems[i].hi)
                new = y - x
                shift += float((new - box_corr[i]) @ (new - box_corr[i]))
                box_corr[i] = new
                continue
            a = normals[i]
            c_old = coef[i]
            # a @ (x + c_old a) - b, scaled by |a|^2
            t = (a @ x - offsets[i]) / sq[i] + c_old
            if kind == HALFSPACE and t < 0.0:
                t = 0.0
            if t != c_old:
                x = x + (c_old - t) * a
                coef[i] = t
                shift += (c_old - t) ** 2 * sq[i]
        movement = float(np.linalg.norm(x - prev))
        shift = math.sqrt(shift)
        viol = stack.max_violation(x)
        trace.append({"cycle": cycles, "max_violation": viol, "movement": movement,
                      "correction_change": shift})
        log.debug("dykstra cycle %d: violation %.3e movement %.3e correction change %.3e",
                  cycles, viol, movement, shift)
        if movement <= tol and viol <= tol and shift <= tol:
            converged = True
            if early_exit:
                break
    return DykstraSolveResult(solution=x, converged=converged, iterations=cycles,
                              max_violation=viol, increments=trace, set_count=len(elems))


@dataclass
class ProtectionResult:
    delta: np.ndarray
    solution: np.ndarray
    result: DykstraSolveResult
    bound: float | None
    states: list[TopologyState]
    postcheck: dict = field(default_factory=dict)  # state hex -> worst flow excess (p.u.)


def postcheck(case: GridCase, states: Iterable[TopologyState], injections, tol: float) -> dict:
    """Worst ``|flow| - sigma`` per state under ``injections``."""
    out = {}
    for s in states:
        flows = solve_flow(case, s, injections).flows
        out[s.to_hex()] = float(np.max(np.abs(flows) - case.flow_thresholds))
    return out


def solve_protection(case: GridCase, d_eps: Iterable[TopologyState], N: int = 50,
                     tol: float = 1e-6, *, bound: float | None = None,
                     include_balance: bool = True, feasibility_iter: int = 2000) -> ProtectionResult:
    """Closest injection vector to P_b^0 keeping every state in ``d_eps``
    within flow limits.

    Raises EmptyIntersectionError when some single topology (or the
    intersection) looks infeasible, and PostcheckFailedError when Dykstra
    reports convergence but a DC flow re-solve exceeds a limit by more than
    ``tol``.
    """
    states = sorted(d_eps)
    if not states:
        raise ValueError("uncertainty set is empty")
    csets = [build_constraint_set(case, s, include_balance) for s in states]
    for cs in csets:
        fr = check_feasibility(cs, tol=tol, max_iter=feasibility_iter)
        if not fr.feasible:
            raise EmptyIntersectionError(
                f"no feasible injections for topology {cs.state.to_hex()} "
                f"(outaged {list(cs.state.outaged())}); violation {fr.max_violation:.3e} p.u. "
                f"after {fr.iterations} alternating-projection cycles")
    origin = case.injections0
    res = dykstra_project(origin, csets, N=N, tol=tol)
    if not res.converged and res.max_violation > tol:
        last = res.increments[-1]["movement"] if res.increments else math.inf
        if last <= tol:
            raise EmptyIntersectionError(
                f"Dykstra stalled at violation {res.max_violation:.3e} p.u. after {res.iterations} cycles")
        log.warning("Dykstra not converged after %d cycles (violation %.3e, movement %.3e)",
                    res.iterations, res.max_violation, last)
    check = postcheck(case, states, res.solution, tol)
    if res.converged:
        bad = {k: v for k, v in check.items() if v > tol}
        if bad:
            raise PostcheckFailedError(f"flow limits exceeded after convergence: {bad}")
    return ProtectionResult(delta=res.solution - origin, solution=res.solution, result=res,
                            bound=bound, states=states, postcheck=check)
