"""Sparse Markov chain over branch-connection states.

The 2^n x 2^n transition matrix is never built. Rows are expanded lazily
from the states that survive truncation, and each row is enumerated over the
branches whose outage probability is large enough to matter.
"""

from __future__ import annotations

import heapq
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import StepOutOfRangeError
from .grid_model import GridCase
from .outage_model import BranchOutageProbabilities, OutageParams, branch_lambdas
from .state import TopologyState, check_same_width

log = logging.getLogger(__name__)

LambdaFn = Callable[[TopologyState], BranchOutageProbabilities]


def fixed_lambdas(lam) -> BranchOutageProbabilities:
    """Wrap a hand-set probability vector (tests, toy chains)."""
    lam = np.asarray(lam, dtype=float)
    zero = np.zeros_like(lam)
    return BranchOutageProbabilities(lam=lam, p_over=zero, p_hidden=zero, p_cont=zero,
                                     ratios=zero)


def constant_lambdas(lam) -> LambdaFn:
    """State-independent probabilities; tripped branches are masked to 0."""
    lam = np.asarray(lam, dtype=float)

    def fn(state: TopologyState) -> BranchOutageProbabilities:
        return fixed_lambdas(np.where(state.mask(), lam, 0.0))

    return fn


class LambdaCache:
    """Memoized ``state -> branch outage probabilities`` for one case."""

    def __init__(self, case: GridCase, params: OutageParams, injections=None,
                 fn: LambdaFn | None = None):
        self.case = case
        self.params = params
        self.injections = injections
        self._fn = fn
        self._cache: dict[TopologyState, BranchOutageProbabilities] = {}

    def __call__(self, state: TopologyState) -> BranchOutageProbabilities:
        hit = self._cache.get(state)
        if hit is None:
            if self._fn is not None:
                hit = self._fn(state)
            else:
                hit = branch_lambdas(self.case, state, self.params, injections=self.injections)
            self._cache[state] = hit
        return hit

    def __len__(self):
        return len(self._cache)


def _as_lambda_fn(case, params, lambdas, injections=None) -> LambdaCache:
    if isinstance(lambdas, LambdaCache):
        return lambdas
    return LambdaCache(case, params, injections=injections, fn=lambdas)


# ---------------------------------------------------------------------------
# Distributions and transitions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SparseDistribution:
    entries: Mapping[TopologyState, float]
    step: int = 0

    def mass(self) -> float:
        return math.fsum(self.entries.values())

    def support(self) -> list[TopologyState]:
        return sorted(self.entries)

    def get(self, state: TopologyState) -> float:
        return self.entries.get(state, 0.0)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(sorted(self.entries.items()))

    @classmethod
    def point(cls, state: TopologyState) -> "SparseDistribution":
        return cls({state: 1.0}, 0)

    @classmethod
    def from_contingencies(cls, n: int, contingencies: Iterable[tuple[Iterable[int], float]]
                           ) -> "SparseDistribution":
        """Initial distribution from ``(outaged branch ids, probability)`` pairs.
        No pairs means the intact network with probability 1."""
        entries: dict[TopologyState, list[float]] = defaultdict(list)
        for outaged, p in contingencies:
            entries[TopologyState.from_outages(n, outaged)].append(float(p))
        if not entries:
            return cls.point(TopologyState.all_on(n))
        dist = {s: math.fsum(ps) for s, ps in entries.items()}
        total = math.fsum(dist.values())
        if total > 1 + 1e-12:
            raise ValueError(f"initial probabilities sum to {total} > 1")
        return cls(dist, 0)


@dataclass(frozen=True)
class TransitionFanout:
    source: TopologyState
    successors: list[tuple[TopologyState, float]]
    candidates: tuple[int, ...] = ()  # 1-based branches enumerated
    warnings: tuple[str, ...] = ()

    def total(self) -> float:
        return math.fsum(p for _, p in self.successors)

    def as_dict(self) -> dict[TopologyState, float]:
        return dict(self.successors)


def transition_probability(i: TopologyState, j: TopologyState,
                           lambdas: BranchOutageProbabilities) -> float:
    """Exact one-step probability of moving from ``i`` to ``j``."""
    check_same_width(i, j)
    if not i.can_reach(j):
        return 0.0
    lam = lambdas.lam
    p = 1.0
    for l in i.connected():
        p *= lam[l - 1] if not j.is_on(l) else 1.0 - lam[l - 1]
    return p


class _Row:
    """One row of the transition matrix as seen by the enumeration rules.

    Connected branches are split into certain failures (probability 1),
    enumerated candidates, and ignored ones (under ``lambda_floor`` or beyond
    ``max_candidates``), which are assumed to survive.
    """

    def __init__(self, state: TopologyState, lambdas: BranchOutageProbabilities,
                 params: OutageParams):
        lam = np.asarray(lambdas.lam, dtype=float)
        on = state.mask()
        self.state = state
        self.lam = lam
        self.certain = [int(l) for l in np.flatnonzero(on & (lam >= 1.0))]
        uncertain = [int(l) for l in np.flatnonzero(on & (lam > 0.0) & (lam < 1.0))]
        cand = [l for l in uncertain if lam[l] >= params.lambda_floor]
        ignored = [l for l in uncertain if lam[l] < params.lambda_floor]
        self.warnings: tuple[str, ...] = ()
        cap = params.max_candidates
        if cap is not None and len(cand) > cap:
            # largest probabilities first, lower branch id wins ties
            order = sorted(cand, key=lambda l: (-lam[l], l))
            ignored = sorted(ignored + order[cap:])
            cand = sorted(order[:cap])
            self.warnings = (f"TRUNCATED_FANOUT: {len(order)} candidates capped at {cap}",)
            log.debug("state %s: %s", state.to_hex(), self.warnings[0])
        self.cand = cand
        self.ignored = ignored
        self.base = 1.0
        if params.exact_survivor_factors:
            for l in ignored:
                self.base *= 1.0 - lam[l]
        bits = state.bits
        for l in self.certain:
            bits &= ~(1 << l)
        self.bits0 = bits  # certain failures applied, candidates untouched
        self._tripped_allowed = sum(1 << l for l in self.certain + cand)
        self._certain_mask = sum(1 << l for l in self.certain)

    def enumerate(self) -> list[tuple[TopologyState, float]]:
        outcomes = [(self.bits0, self.base)]
        # doubling build: each candidate splits every partial outcome in two
        for l in self.cand:
            q = self.lam[l]
            mask = ~(1 << l)
            outcomes = [(b, p * (1.0 - q)) for b, p in outcomes] + [(b & mask, p * q) for b, p in outcomes]
        return [(TopologyState(self.state.n, b), p) for b, p in outcomes if p > 0.0]

    def ordered(self):
        """Successors in nonincreasing probability order, produced lazily.

        Every outcome is the most likely one with a set of candidates
        flipped; flip sets are walked best-first over a heap.
        """
        lam = self.lam
        hi = [max(lam[l], 1.0 - lam[l]) for l in self.cand]
        lo = [min(lam[l], 1.0 - lam[l]) for l in self.cand]
        mode_bits = self.bits0
        mode_p = self.base
        for k, l in enumerate(self.cand):
            if lam[l] > 0.5:
                mode_bits &= ~(1 << l)
            mode_p *= hi[k]
        order = sorted(range(len(self.cand)), key=lambda k: (-(lo[k] / hi[k]), self.cand[k]))

        def prob(flips):
            p = mode_p
            for k in flips:
                p = p / hi[order[k]] * lo[order[k]]
            return p

        def outcome(flips):
            bits = mode_bits
            for k in flips:
                bits ^= 1 << self.cand[order[k]]
            return TopologyState(self.state.n, bits), prob(flips)

        yield outcome(())
        if not order:
            return
        heap = [(-prob((0,)), (0,))]
        while heap:
            neg_p, flips = heapq.heappop(heap)
            if neg_p == 0.0:
                return
            yield outcome(flips)
            last = flips[-1]
            if last + 1 < len(order):
                for nxt in (flips + (last + 1,), flips[:-1] + (last + 1,)):
                    heapq.heappush(heap, (-prob(nxt), nxt))

    def probability(self, target: TopologyState) -> float:
        """Closed-form probability the enumeration assigns to ``target``."""
        check_same_width(self.state, target)
        src = self.state.bits
        if (src | target.bits) != src:
            return 0.0
        tripped = src & ~target.bits
        if tripped & ~self._tripped_allowed or (self._certain_mask & ~tripped):
            return 0.0
        p = self.base
        for l in self.cand:
            p *= self.lam[l] if (tripped >> l) & 1 else 1.0 - self.lam[l]
        return p


def expand_successors(state: TopologyState, lambdas: BranchOutageProbabilities,
                      params: OutageParams = OutageParams()) -> TransitionFanout:
    """Enumerate the joint outages of the candidate branches.

    Branches at probability 1 always trip and branches at 0 never do, so
    neither is enumerated. Branches under ``params.lambda_floor`` (or beyond
    ``params.max_candidates``) are assumed to survive; their ``1 - lambda``
    factors are only applied when ``params.exact_survivor_factors`` is set.
    """
    row = _Row(state, lambdas, params)
    return TransitionFanout(source=state, successors=row.enumerate(),
                            candidates=tuple(l + 1 for l in sorted(row.certain + row.cand)),
                            warnings=row.warnings)


def ordered_successors(state: TopologyState, lambdas: BranchOutageProbabilities,
                       params: OutageParams = OutageParams()):
    """The successors of ``expand_successors``, lazily, most probable first."""
    return _Row(state, lambdas, params).ordered()


def fanout_probability(i: TopologyState, j: TopologyState, lambdas: BranchOutageProbabilities,
                       params: OutageParams = OutageParams()) -> float:
    """Probability ``expand_successors`` assigns to ``i -> j``, computed in
    closed form instead of by enumeration."""
    return _Row(i, lambdas, params).probability(j)


def apply_truncation(x: SparseDistribution, epsilon: float) -> SparseDistribution:
    """Drop every entry with probability ``<= epsilon``."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    return SparseDistribution({s: p for s, p in x.entries.items() if p > epsilon}, x.step)


def step_distribution(x: SparseDistribution, lambdas: LambdaFn, params: OutageParams,
                      epsilon: float = 0.0) -> SparseDistribution:
    """``x P`` restricted to the rows in ``x``'s support.

    With ``epsilon > 0`` only entries that can exceed ``epsilon`` are
    returned, with exact values. A successor whose total exceeds ``epsilon``
    receives more than ``epsilon / N`` from at least one of the ``N``
    sources, so sources are enumerated down to that level and totals are
    then summed in closed form over all sources.
    """
    rows = [(_Row(s, lambdas(s), params), p) for s, p in x]
    if epsilon <= 0.0:
        acc: dict[TopologyState, list[float]] = defaultdict(list)
        for row, p in rows:
            for succ, q in row.enumerate():
                acc[succ].append(p * q)
    else:
        level = epsilon / max(len(rows), 1)
        targets: set[TopologyState] = set()
        for row, p in rows:
            for succ, q in row.ordered():
                if p * q <= level:
                    break
                targets.add(succ)
        acc = {t: [p * row.probability(t) for row, p in rows] for t in targets}
    # fsum makes the merge independent of accumulation order
    out = {s: math.fsum(v) for s, v in acc.items()}
    return SparseDistribution({s: v for s, v in out.items() if v > 0.0}, x.step + 1)


def propagate(case: GridCase, x0: SparseDistribution, params: OutageParams = OutageParams(),
              epsilon: float = 0.1, horizon: int = 3, *, lambdas: LambdaFn | None = None,
              injections=None) -> list[SparseDistribution]:
    """Truncated trajectory ``[x^0, x^1, ..., x^h]`` with
    ``x^{k+1} = truncate(x^k P, epsilon)``.

    ``lambdas`` overrides the flow-based outage model (state -> probabilities).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if x0.mass() > 1 + 1e-12:
        raise ValueError("initial distribution has mass > 1")
    fn = _as_lambda_fn(case, params, lambdas, injections)
    traj = [SparseDistribution(dict(x0.entries), 0)]
    for _ in range(horizon):
        nxt = step_distribution(traj[-1], fn, params, epsilon)
        traj.append(apply_truncation(nxt, epsilon))
        log.debug("step %d: %d states retained, mass %.6f", nxt.step, len(traj[-1]), traj[-1].mass())
    return traj


def prevention_bound(trajectory: list[SparseDistribution], k: int) -> float:
    """Lower bound on the probability that the step-``k`` state is one of
    the retained states: the l1 mass of the truncated distribution."""
    if not 0 <= k < len(trajectory):
        raise StepOutOfRangeError(f"step {k} outside trajectory 0..{len(trajectory) - 1}")
    return trajectory[k].mass()


def uncertainty_set(trajectory: list[SparseDistribution], epsilon: float,
                    horizon: int) -> frozenset[TopologyState]:
    """States with probability above ``epsilon`` at some step ``1..horizon``."""
    if horizon >= len(trajectory):
        raise StepOutOfRangeError(f"horizon {horizon} beyond trajectory of {len(trajectory) - 1} steps")
    out = set()
    for x in trajectory[1:horizon + 1]:
        out.update(s for s, p in x.entries.items() if p > epsilon)
    return frozenset(out)


# ---------------------------------------------------------------------------
# Most probable paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CascadePath:
    start: TopologyState
    initial_probability: float
    steps: tuple[tuple[int, ...], ...]  # branches tripped at each step (may be empty)
    step_probabilities: tuple[float, ...]
    terminal_state: TopologyState
    probability: float = field(default=0.0)

    @property
    def initial_outages(self) -> tuple[int, ...]:
        return self.start.outaged()

    def states(self) -> list[TopologyState]:
        out = [self.start]
        for tripped in self.steps:
            out.append(out[-1].without(tripped))
        return out

    def describe(self) -> str:
        """Arrow notation, e.g. ``8 -> (21,36,37) -> 32``."""
        def fmt(ids):
            if not ids:
                return "-"
            return str(ids[0]) if len(ids) == 1 else "(" + ",".join(map(str, ids)) + ")"
        parts = [fmt(self.initial_outages)] + [fmt(s) for s in self.steps]
        return " -> ".join(parts)

    def _order_key(self):
        return (-self.probability, self.initial_outages, self.steps)

    def extend(self, succ: TopologyState, q: float) -> "CascadePath":
        return CascadePath(
            start=self.start, initial_probability=self.initial_probability,
            steps=self.steps + (self.terminal_state.newly_outaged(succ),),
            step_probabilities=self.step_probabilities + (q,),
            terminal_state=succ, probability=self.probability * q)


def beam_paths(case: GridCase, x0: SparseDistribution, params: OutageParams = OutageParams(),
               beam_width: int = 8, horizon: int = 3, *, lambdas: LambdaFn | None = None,
               injections=None) -> list[CascadePath]:
    """Beam search for the ``beam_width`` most probable ``horizon``-step paths.

    Ties are broken by the lexicographic order of the outage sets, so the
    result is reproducible.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    fn = _as_lambda_fn(case, params, lambdas, injections)
    beam = [CascadePath(start=s, initial_probability=p, steps=(), step_probabilities=(),
                        terminal_state=s, probability=p)
            for s, p in x0 if p > 0]
    beam = sorted(beam, key=CascadePath._order_key)[:beam_width]
    for _ in range(horizon):
        grown = []
        for path in beam:
            # no more than beam_width children of one entry can survive;
            # ties with the last one are kept so tie-breaking stays global
            kept = []
            for succ, q in _Row(path.terminal_state, fn(path.terminal_state), params).ordered():
                if len(kept) >= beam_width and q < kept[-1][1]:
                    break
                kept.append((succ, q))
            grown.extend(path.extend(succ, q) for succ, q in kept)
        beam = sorted(grown, key=CascadePath._order_key)[:beam_width]
    return beam


def path_probability(path: CascadePath, lambdas: LambdaFn,
                     params: OutageParams | None = None) -> float:
    """Recompute a path's probability step by step. With ``params`` the
    fanout semantics are used, otherwise the exact transition law."""
    p = path.initial_probability
    states = path.states()
    for a, b in zip(states, states[1:]):
        lam = lambdas(a)
        p *= fanout_probability(a, b, lam, params) if params is not None else transition_probability(a, b, lam)
    return p


# ---------------------------------------------------------------------------
# Monte Carlo oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonteCarloResult:
    counts: list[dict[TopologyState, int]]  # per step 0..h
    samples: int
    scale: float  # mass of x^0; frequencies are scaled by it

    def frequencies(self, k: int) -> SparseDistribution:
        if not 0 <= k < len(self.counts):
            raise StepOutOfRangeError(f"step {k} outside 0..{len(self.counts) - 1}")
        return SparseDistribution(
            {s: self.scale * c / self.samples for s, c in self.counts[k].items()}, k)

    def standard_error(self, p: float) -> float:
        """Binomial standard error of a scaled frequency with true value ``p``."""
        q = min(max(p / self.scale, 0.0), 1.0) if self.scale > 0 else 0.0
        return self.scale * math.sqrt(q * (1 - q) / self.samples)


def monte_carlo_cascade(case: GridCase, x0: SparseDistribution,
                        params: OutageParams = OutageParams(), horizon: int = 3,
                        samples: int = 100_000, seed: int = 0, *,
                        lambdas: LambdaFn | None = None, injections=None) -> MonteCarloResult:
    """Sample cascades: draw a start state from ``x0`` (normalized), then at
    each step trip every live branch independently with probability
    ``lambda_l`` of the current state.

    Samples sharing a state are drawn as one block, so the cost grows with
    the number of distinct states rather than with ``samples``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    scale = x0.mass()
    if not scale > 0:
        raise ValueError("initial distribution is empty")
    fn = _as_lambda_fn(case, params, lambdas, injections)
    rng = np.random.default_rng(seed)
    support = x0.support()
    probs = np.array([x0.get(s) for s in support]) / scale
    drawn = np.bincount(rng.choice(len(support), size=samples, p=probs), minlength=len(support))
    counts = [{s: int(c) for s, c in zip(support, drawn) if c}]
    for _ in range(horizon):
        nxt: dict[TopologyState, int] = defaultdict(int)
        for state in sorted(counts[-1]):
            count = counts[-1][state]
            lam = fn(state).lam
            live = np.flatnonzero(lam > 0)
            if not len(live):
                nxt[state] += count
                continue
            trips = rng.random((count, len(live))) < lam[live]
            rows, freq = np.unique(trips, axis=0, return_counts=True)
            for row, c in zip(rows, freq):
                nxt[state.without(live[row] + 1)] += int(c)
        counts.append(dict(nxt))
    return MonteCarloResult(counts=counts, samples=samples, scale=scale)
