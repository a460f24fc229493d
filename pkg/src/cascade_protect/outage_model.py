"""Per-branch outage probabilities for a topology state.

Three independent causes are combined: overload (piecewise-linear in the
flow-to-threshold ratio), hidden relay failure (higher next to tripped
branches) and a constant contingency rate.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .dc_flow import FlowSolution, solve_flow
from .errors import NonpositiveThresholdError
from .grid_model import GridCase, adjacent_to_outage
from .state import TopologyState


@dataclass(frozen=True)
class OutageParams:
    p_cont: float = 1e-4
    p_hidden_adjacent: float = 1e-2
    p_hidden_far: float = 1e-4
    overload_lower: float = 0.8
    overload_upper: float = 1.05
    lambda_floor: float = 1e-3
    max_candidates: int | None = 20
    exact_survivor_factors: bool = False

    def __post_init__(self):
        for name in ("p_cont", "p_hidden_adjacent", "p_hidden_far", "lambda_floor"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not self.overload_lower < self.overload_upper:
            raise ValueError("overload_lower must be below overload_upper")
        if self.max_candidates is not None and self.max_candidates < 0:
            raise ValueError("max_candidates must be nonnegative")

    @classmethod
    def exact(cls, **overrides) -> "OutageParams":
        """Settings that make successor enumeration exhaustive (small n only)."""
        return cls(**{"lambda_floor": 0.0, "max_candidates": None,
                      "exact_survivor_factors": True, **overrides})

    @classmethod
    def from_mapping(cls, data: dict) -> "OutageParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown outage parameters: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True, eq=False)
class BranchOutageProbabilities:
    lam: np.ndarray
    p_over: np.ndarray
    p_hidden: np.ndarray
    p_cont: np.ndarray
    ratios: np.ndarray

    @property
    def components(self) -> np.ndarray:
        """(n, 3) array of (p_over, p_hidden, p_cont) per branch."""
        return np.column_stack([self.p_over, self.p_hidden, self.p_cont])

    def __len__(self):
        return len(self.lam)


def p_over(flow: float, threshold: float, params: OutageParams = OutageParams()) -> float:
    if not threshold > 0:
        raise NonpositiveThresholdError(f"flow threshold must be > 0, got {threshold}")
    r = abs(flow) / threshold
    return float(_p_over_ratio(np.array([r]), params)[0])


def _p_over_ratio(r: np.ndarray, params: OutageParams) -> np.ndarray:
    lo, hi = params.overload_lower, params.overload_upper
    # linear ramp from 0 at lo to 1 at hi; the default (0.8, 1.05) gives 4r - 3.2
    ramp = (r - lo) / (hi - lo)
    out = np.where(r < lo, 0.0, np.where(r > hi, 1.0, ramp))
    return np.clip(out, 0.0, 1.0)


def p_hidden(branch: int, state: TopologyState, case: GridCase,
             params: OutageParams = OutageParams()) -> float:
    """Hidden-failure probability of ``branch`` (1-based) in ``state``."""
    adjacent = adjacent_to_outage(case, state)[branch - 1]
    return params.p_hidden_adjacent if adjacent else params.p_hidden_far


def compose(p_over_, p_hidden_, p_cont_):
    return 1.0 - (1.0 - p_over_) * (1.0 - p_hidden_) * (1.0 - p_cont_)


def branch_lambdas(case: GridCase, state: TopologyState, params: OutageParams = OutageParams(),
                   injections=None, flow: FlowSolution | None = None) -> BranchOutageProbabilities:
    """Outage probability of every branch for one step out of ``state``.

    Tripped branches get probability 0: they cannot trip again.
    """
    if flow is None:
        flow = solve_flow(case, state, injections)
    on = state.mask()
    sigma = case.flow_thresholds
    if np.any(sigma <= 0):
        raise NonpositiveThresholdError("all flow thresholds must be > 0")
    ratios = np.abs(flow.flows) / sigma
    po = np.where(on, _p_over_ratio(ratios, params), 0.0)
    ph = np.where(adjacent_to_outage(case, state), params.p_hidden_adjacent, params.p_hidden_far)
    ph = np.where(on, ph, 0.0)
    pc = np.where(on, params.p_cont, 0.0)
    lam = np.where(on, compose(po, ph, pc), 0.0)
    return BranchOutageProbabilities(lam=lam, p_over=po, p_hidden=ph, p_cont=pc, ratios=ratios)
