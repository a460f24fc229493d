from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cascade_protect.errors import (
    DimensionMismatchError, EmptyIntersectionError,
)
from cascade_protect.robust_protect import (
    ElementaryConvexSet as E, build_constraint_set, check_feasibility, dykstra_project,
    flatten_sets, project_elementary, solve_protection,
)
from cascade_protect.grid_model import make_case
from cascade_protect.state import TopologyState

from qp_oracle import cvxpy_projection, kkt_residual, max_violation, random_instance

vec = st.lists(st.floats(-10, 10), min_size=3, max_size=3).map(np.array)
normal = vec.filter(lambda a: np.linalg.norm(a) > 1e-3)


def sets_from(kind, a, b):
    if kind == "box":
        lo = np.minimum(a, b)
        return E.box(lo, np.maximum(a, b))
    return E.halfspace(a, b[0]) if kind == "halfspace" else E.hyperplane(a, b[0])


def test_projection_examples():
    assert project_elementary([2, 2], E.halfspace([1, 0], 1)).tolist() == [1, 2]
    assert project_elementary([1, 0], E.hyperplane([1, 1], 0)).tolist() == [0.5, -0.5]
    assert project_elementary([0.5, 0.5], E.box([0, 0], [1, 1])).tolist() == [0.5, 0.5]
    with pytest.raises(DimensionMismatchError):
        project_elementary([1, 2, 3], E.box([0, 0], [1, 1]))


def test_set_validation():
    with pytest.raises(ValueError):
        E.halfspace([0, 0], 1)
    with pytest.raises(ValueError):
        E.box([1, 0], [0, 1])


@settings(max_examples=200)
@given(st.sampled_from(["box", "halfspace", "hyperplane"]), normal, vec, vec, vec)
def test_projection_idempotent_and_nonexpansive(kind, a, b, x, y):
    s = sets_from(kind, a, b)
    px, py = project_elementary(x, s), project_elementary(y, s)
    np.testing.assert_allclose(project_elementary(px, s), px, atol=1e-9)
    assert s.violation(px) <= 1e-9 * (1 + np.abs(x).max())
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-9


def test_dykstra_examples():
    inside = dykstra_project([0.5, 0.5], [E.box([0, 0], [1, 1])])
    assert inside.solution.tolist() == [0.5, 0.5] and inside.iterations == 1 and inside.converged
    clamp = dykstra_project([2, 2], [E.halfspace([1, 0], 1), E.halfspace([0, 1], 1)])
    assert clamp.solution.tolist() == [1.0, 1.0]
    cone = dykstra_project([1, 0], [E.halfspace([1, 1], 0), E.halfspace([1, -1], 0)],
                           N=1000, tol=1e-12)
    np.testing.assert_allclose(cone.solution, [0, 0], atol=1e-10)
    assert cone.converged
    assert [set(row) for row in cone.increments] == [{"cycle", "max_violation", "movement", "correction_change"}] * len(cone.increments)


def test_dykstra_differs_from_alternating_projections():
    # plain alternating projections stop at a feasible point that is not nearest
    sets = [E.box([0, 0], [1, 1]), E.hyperplane([1, -1], 0)]
    res = dykstra_project([2, 0], sets, N=500, tol=1e-12)
    np.testing.assert_allclose(res.solution, [1, 1], atol=1e-9)
    alt = check_feasibility(sets, start=[2, 0], tol=1e-12)
    assert alt.feasible and not np.allclose(alt.witness, [1, 1])


def test_stationary_cycle_is_not_convergence():
    # the second cycle ends where it started while corrections still move
    rng = np.random.default_rng(25)
    for _ in range(12):
        origin, sets = random_instance(rng)
        perm = rng.permutation(len(sets))
    res = dykstra_project(origin, sets, N=200_000, tol=1e-11, order=perm)
    assert res.increments[1]["movement"] == 0.0 and res.increments[1]["correction_change"] > 0
    np.testing.assert_allclose(res.solution, cvxpy_projection(origin, sets), atol=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_dykstra_matches_qp_oracle(seed):
    origin, sets = random_instance(np.random.default_rng(seed))
    res = dykstra_project(origin, sets, N=200_000, tol=1e-11)
    assert res.converged
    np.testing.assert_allclose(res.solution, cvxpy_projection(origin, sets), atol=1e-6)
    assert kkt_residual(origin, res.solution, sets) <= 1e-6
    perm = np.random.default_rng(seed + 100).permutation(len(sets))
    again = dykstra_project(origin, sets, N=200_000, tol=1e-11, order=perm)
    np.testing.assert_allclose(again.solution, res.solution, atol=1e-6)


def test_dedup():
    a = E.halfspace([1.0, 1.0], 1.0)
    same = E.halfspace([2.0, 2.0], 2.0)
    other = E.halfspace([2.0, 2.0], 2.0 + 1e-9)
    assert len(flatten_sets([a, same, other])) == 2


def test_feasibility_examples():
    box = E.box([0, 0], [1, 1])
    ok = check_feasibility([box, E.halfspace([1, 1], 3)])
    assert ok.feasible and box.violation(ok.witness) == 0
    bad = check_feasibility([box, E.halfspace([1, 1], -1)], max_iter=200)
    assert bad.feasible is None
    # the gap stalls at the box-halfspace distance
    assert bad.gap == pytest.approx(np.sqrt(2) / 2, rel=1e-6)
    seeded = check_feasibility([box, E.halfspace([1, 1], 3)], start=[0.2, 0.3])
    assert seeded.witness.tolist() == [0.2, 0.3] and seeded.iterations == 0


def test_two_bus_constraint_set(two_bus):
    cs = build_constraint_set(two_bus, two_bus.all_on())
    kinds = [s.kind for s in cs.sets]
    assert kinds == ["box", "hyperplane", "halfspace", "halfspace"]
    assert cs.sets[1].a.tolist() == [1, 1]
    # on balanced injections each flow halfspace reads +-x1 <= 2
    for s, sign in zip(cs.sets[2:], (1, -1)):
        assert s.a @ np.array([1.0, -1.0]) == pytest.approx(sign)
        assert s.b == 2


def test_constraint_set_skips_tripped_and_splits_islands(triangle):
    s = TopologyState.from_outages(3, [1, 3])
    cs = build_constraint_set(triangle, s)
    assert cs.branches == (2,)
    assert sum(x.kind == "hyperplane" for x in cs.sets) == 2


def test_two_bus_protection():
    case = make_case([(1, 2, 1.0)], [1.0, -1.0], [0.5], [[0.0, 2.0], [-2.0, 0.0]])
    out = solve_protection(case, {case.all_on()}, N=50, tol=1e-9)
    np.testing.assert_allclose(out.solution, [0.5, -0.5], atol=1e-9)
    np.testing.assert_allclose(out.delta, [-0.5, 0.5], atol=1e-9)
    assert out.result.converged


def test_quiescent_protection_is_zero(ring5):
    out = solve_protection(ring5, {ring5.all_on()})
    np.testing.assert_allclose(out.delta, 0, atol=1e-12)
    assert out.result.iterations == 1


def test_protection_over_several_topologies(ring5):
    states = [TopologyState.from_outages(6, ids) for ids in ([1], [2], [1, 6])]
    out = solve_protection(ring5, states, N=20_000, tol=1e-9)
    assert out.result.converged
    assert max(out.postcheck.values()) <= 1e-9
    sets = flatten_sets(build_constraint_set(ring5, s) for s in states)
    assert kkt_residual(ring5.injections0, out.solution, sets) <= 1e-6
    assert max_violation(out.solution, sets) <= 1e-9


def test_infeasible_topology_raises():
    # the load cannot be shed and the only line is too weak
    case = make_case([(1, 2, 1.0)], [1.0, -1.0], [0.5], [[0.0, 2.0], [-1.0, -1.0]])
    with pytest.raises(EmptyIntersectionError):
        solve_protection(case, {case.all_on()})
