from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pytest

from cascade_protect.grid_model import load_case, make_case

DATA = Path(__file__).resolve().parents[1] / "src" / "cascade_protect" / "data"
CASE118 = DATA / "case118.m"


@pytest.fixture(scope="session")
def two_bus():
    return make_case([(1, 2, 1.0)], [1.0, -1.0], [2.0], [[0.0, 2.0], [-2.0, 0.0]])


@pytest.fixture(scope="session")
def triangle():
    return make_case([(1, 2, 1.0), (2, 3, 1.0), (1, 3, 1.0)], [1.0, -1.0, 0.0], [1.0, 1.0, 1.0],
                     [[0.0, 2.0], [-2.0, 0.0], [-1.0, 1.0]])


@pytest.fixture(scope="session")
def ring5():
    """Five buses on a ring plus a chord; one generator, three loads."""
    return make_case(
        [(1, 2, 10.0), (2, 3, 8.0), (3, 4, 12.0), (4, 5, 9.0), (5, 1, 11.0), (2, 4, 5.0)],
        [1.2, -0.3, -0.4, -0.2, -0.3], [1.0, 0.6, 0.5, 0.5, 0.8, 0.4])


@pytest.fixture(scope="session")
def ieee118():
    logging.getLogger("cascade_protect").setLevel(logging.ERROR)
    return load_case(CASE118, thresholds="base_flow")


def random_balanced(rng, labels, size):
    """Random injections summing to zero within each island."""
    p = rng.normal(size=size)
    for k in np.unique(labels):
        p[labels == k] -= p[labels == k].mean()
    return p


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
