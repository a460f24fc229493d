"""DC power flow for arbitrary branch-connection states.

The bus susceptance Laplacian of a partially tripped network is singular once
per island. Its Moore-Penrose pseudo-inverse applied to an injection vector
is reproduced here by removing each island's mean injection (uniform slack)
and grounding one reference bus per island; flows do not depend on the
reference choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import DimensionMismatchError, SingularSystemError
from .grid_model import GridCase, SlackPolicy, island_labels
from .state import TopologyState

RESIDUAL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class FlowSolution:
    flows: np.ndarray  # per branch, p.u., positive from -> to
    angles: np.ndarray  # rad, reference bus of each island at 0
    imbalance_adjustment: np.ndarray  # added to the requested injections
    injections: np.ndarray  # injections actually balanced and solved
    state: TopologyState


@dataclass(frozen=True, eq=False)
class FlowMap:
    """Injection-to-flow matrix ``H`` (n x m) for one topology.

    ``H @ p`` equals ``solve_flow(case, state, p).flows`` for every ``p``:
    the slack redistribution is folded into ``H``.
    """

    matrix: np.ndarray
    state: TopologyState

    def __matmul__(self, injections):
        return self.matrix @ injections


def slack_weights(case: GridCase, labels: np.ndarray) -> np.ndarray:
    """Per-bus share of its island's imbalance. Shares sum to 1 per island."""
    m = case.bus_count
    if case.slack_policy is SlackPolicy.DISTRIBUTED_BY_CAPACITY:
        raw = case.injection_bounds[:, 1] - case.injection_bounds[:, 0]
    else:
        raw = np.ones(m)
    totals = np.bincount(labels, weights=raw)
    sizes = np.bincount(labels)
    # islands without any capacity fall back to uniform
    uniform = (totals[labels] <= 0)
    w = np.where(uniform, 1.0 / sizes[labels], raw / np.where(uniform, 1.0, totals[labels]))
    return w


def _check(case: GridCase, state: TopologyState, injections=None) -> None:
    if state.n != case.branch_count:
        raise DimensionMismatchError(
            f"state has {state.n} bits but case has {case.branch_count} branches")
    if injections is not None and np.shape(injections) != (case.bus_count,):
        raise DimensionMismatchError(
            f"injections must have length {case.bus_count}, got shape {np.shape(injections)}")


class _Grounded:
    """Factorized Laplacian with one grounded bus per island."""

    def __init__(self, case: GridCase, state: TopologyState):
        m = case.bus_count
        on = state.mask()
        self.on = on
        self.labels = island_labels(case, state)
        self.refs = np.array([np.flatnonzero(self.labels == k)[0]
                              for k in range(self.labels.max() + 1)])
        keep = np.ones(m, dtype=bool)
        keep[self.refs] = False
        self.free = np.flatnonzero(keep)
        fr, to = case.from_index[on], case.to_index[on]
        self.y = np.where(on, case.susceptances, 0.0)
        y = self.y[on]
        lap = sp.csc_matrix(
            (np.concatenate([y, y, -y, -y]),
             (np.concatenate([fr, to, fr, to]), np.concatenate([fr, to, to, fr]))),
            shape=(m, m))
        self.laplacian = lap
        self.lu = None
        if len(self.free):
            reduced = lap[self.free][:, self.free].tocsc()
            try:
                self.lu = splu(reduced)
            except RuntimeError as exc:
                raise SingularSystemError(f"reduced Laplacian is singular: {exc}") from exc

    def angles(self, p: np.ndarray) -> np.ndarray:
        theta = np.zeros(p.shape, dtype=float)
        if self.lu is not None:
            theta[self.free] = self.lu.solve(np.ascontiguousarray(p[self.free]))
        return theta


def balance(case: GridCase, labels: np.ndarray, injections: np.ndarray) -> np.ndarray:
    """Adjustment that zeroes each island's net injection per the slack policy."""
    w = slack_weights(case, labels)
    imbalance = np.bincount(labels, weights=injections)
    return -w * imbalance[labels]


def solve_flow(case: GridCase, state: TopologyState, injections=None) -> FlowSolution:
    """Branch flows for ``injections`` (defaults to the case's P_b^0)."""
    p_req = case.injections0 if injections is None else np.asarray(injections, dtype=float)
    _check(case, state, p_req)
    g = _Grounded(case, state)
    adj = balance(case, g.labels, p_req)
    p = p_req + adj
    theta = g.angles(p)
    fr, to = case.from_index, case.to_index
    flows = g.y * (theta[fr] - theta[to])
    scale = max(1.0, float(np.abs(p).max(initial=0.0)))
    residual = g.laplacian @ theta - p
    if np.abs(residual).max(initial=0.0) > RESIDUAL_TOL * scale:
        raise SingularSystemError(
            f"DC flow residual {np.abs(residual).max():.3e} exceeds tolerance")
    return FlowSolution(flows=flows, angles=theta, imbalance_adjustment=adj,
                        injections=p, state=state)


def flow_map(case: GridCase, state: TopologyState) -> FlowMap:
    _check(case, state)
    m = case.bus_count
    g = _Grounded(case, state)
    x = np.zeros((m, m))
    if g.lu is not None:
        x[np.ix_(g.free, g.free)] = g.lu.solve(np.eye(len(g.free)))
    fr, to = case.from_index, case.to_index
    h = g.y[:, None] * (x[fr] - x[to])
    # fold in the slack: p -> p - w * (island sum of p)
    same_island = g.labels[:, None] == g.labels[None, :]
    w = slack_weights(case, g.labels)
    h = h - (h * w[None, :]) @ same_island.astype(float)
    h[~g.on] = 0.0
    h.setflags(write=False)
    return FlowMap(matrix=h, state=state)


def base_flow_thresholds(case: GridCase, multiplier: float = 2.0, floor: float = 0.1) -> np.ndarray:
    """``multiplier * |flow|`` of the intact network, never below ``floor``."""
    flows = solve_flow(case, case.all_on()).flows
    return np.maximum(multiplier * np.abs(flows), floor)
