from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cascade_protect.errors import NonpositiveThresholdError
from cascade_protect.outage_model import (
    OutageParams, branch_lambdas, compose, p_hidden, p_over,
)
from cascade_protect.state import TopologyState

unit = st.floats(0.0, 1.0)


@pytest.mark.parametrize("r, expected", [(0.5, 0.0), (1.10, 1.0), (0.9, 0.4), (0.8, 0.0), (1.05, 1.0)])
def test_p_over_pieces(r, expected):
    assert p_over(r * 2.0, 2.0) == pytest.approx(expected, abs=1e-12)
    assert p_over(-r * 2.0, 2.0) == pytest.approx(expected, abs=1e-12)


def test_p_over_is_continuous():
    r = np.linspace(0.0, 1.5, 3001)
    values = np.array([p_over(x, 1.0) for x in r])
    assert np.all(np.diff(values) >= 0)
    assert np.max(np.abs(np.diff(values))) < 4 * (r[1] - r[0]) + 1e-12


def test_nonpositive_threshold():
    with pytest.raises(NonpositiveThresholdError):
        p_over(1.0, 0.0)


def test_compose_examples():
    assert compose(0.0, 0.0, 0.0) == 0.0
    assert compose(1.0, 0.3, 0.2) == 1.0
    assert compose(0.5, 0.01, 1e-4) == pytest.approx(1 - 0.5 * 0.99 * 0.9999, rel=1e-15)
    assert compose(0.5, 0.01, 1e-4) == pytest.approx(0.50504950, abs=1e-8)


@given(unit, unit, unit, unit)
def test_compose_bounds_and_monotonicity(a, b, c, bump):
    lam = compose(a, b, c)
    assert max(a, b, c) - 1e-12 <= lam <= a + b + c + 1e-12
    assert compose(min(a + bump * (1 - a), 1.0), b, c) >= lam - 1e-12


def test_hidden_failure_adjacency(triangle):
    params = OutageParams()
    intact = triangle.all_on()
    assert p_hidden(2, intact, triangle, params) == 1e-4
    s = TopologyState.from_outages(3, [1])
    assert p_hidden(2, s, triangle, params) == 1e-2


def test_branch_lambdas(ring5):
    s = TopologyState.from_outages(6, [1])
    out = branch_lambdas(ring5, s)
    assert out.lam[0] == 0.0
    assert np.all((out.lam >= 0) & (out.lam <= 1))
    np.testing.assert_allclose(out.lam, np.where(s.mask(), compose(*out.components.T), 0.0))
    # branches 2, 5 and 6 touch buses 1 or 2 of the tripped branch 1
    assert out.p_hidden.tolist() == [0.0, 1e-2, 1e-4, 1e-4, 1e-2, 1e-2]


def test_ieee_branch8_overloads(ieee118):
    out = branch_lambdas(ieee118, TopologyState.from_outages(186, [8]))
    certain = np.flatnonzero(out.p_over == 1.0) + 1
    assert len(certain) > 0
    assert np.all(out.lam[certain - 1] == 1.0)


def test_params_validation():
    with pytest.raises(ValueError):
        OutageParams(p_cont=2.0)
    with pytest.raises(ValueError):
        OutageParams(overload_lower=1.1, overload_upper=1.0)
    with pytest.raises(ValueError):
        OutageParams.from_mapping({"p_bogus": 1})
    assert OutageParams.from_mapping({"p_cont": 0.0}).p_cont == 0.0
