from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from cascade_protect.errors import DimensionMismatchError
from cascade_protect.state import TopologyState, check_same_width


def test_head_bit_is_highest_branch():
    s = TopologyState.from_string("10")
    assert s.is_on(2) and not s.is_on(1)
    assert s.outaged() == (1,)
    assert str(s) == "10"


def test_index_extremes():
    assert TopologyState(4, 0).index == 1
    assert TopologyState.all_on(4).index == 16


@given(st.integers(1, 70).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, 2 ** n))))
def test_index_round_trip(args):
    n, idx = args
    s = TopologyState.from_index(n, idx)
    assert s.index == idx
    assert TopologyState.from_hex(n, s.to_hex()) == s
    assert TopologyState.from_mask(s.mask()) == s
    assert TopologyState.from_outages(n, s.outaged()) == s


def test_reach_forbids_reconnection():
    full, one_off = TopologyState.from_string("11"), TopologyState.from_string("01")
    assert full.can_reach(one_off)
    assert not one_off.can_reach(full)
    assert full.newly_outaged(one_off) == (2,)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        TopologyState(2, 4)
    with pytest.raises(ValueError):
        TopologyState.from_outages(3, [4])
    with pytest.raises(DimensionMismatchError):
        check_same_width(TopologyState.all_on(2), TopologyState.all_on(3))
