from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from cascade_protect.cascade_markov import constant_lambdas
from cascade_protect.cli import main
from cascade_protect.errors import InvalidScenarioError, ParseError
from cascade_protect.report import (
    recompute_paths, run_flow, run_predict, run_protect, run_validate, verify_report,
)
from cascade_protect.scenario import ieee118_scenario_path, load_scenario, scenario_from_dict


def native_case(tmp_path, limit=2.0, load_bounds=(-2.0, 0.0), name="two_bus.json"):
    doc = {
        "base_mva": 100,
        "buses": [{"id": 1, "p0": 1.0, "p_min": 0.0, "p_max": 2.0},
                  {"id": 2, "p0": -1.0, "p_min": load_bounds[0], "p_max": load_bounds[1]}],
        "branches": [{"id": 1, "from": 1, "to": 2, "susceptance": 1.0, "flow_limit": limit}],
    }
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def write_scenario(tmp_path, **fields):
    doc = {"case": "two_bus.json", "horizon": 2, "protect_at_step": 1, **fields}
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(doc))
    return path


def test_shipped_scenario_is_small_and_valid():
    path = ieee118_scenario_path()
    assert len(path.read_text().splitlines()) <= 15
    sc = load_scenario(path)
    assert sc.case_path.exists()
    assert [(c.outaged, c.probability) for c in sc.initial_contingencies] == [((8,), 0.6), ((4,), 0.4)]
    assert (sc.epsilon, sc.horizon, sc.protect_at_step, sc.dykstra_N) == (0.1, 3, 3, 50)
    assert sc.threshold_multiplier == 2.0 and sc.beam_width == 8


@pytest.mark.parametrize("bad", [
    {"protect_at_step": 3},
    {"epsilon": 1.0},
    {"initial_contingencies": [[[1], 0.7], [[1], 0.4]]},
    {"outage_params": {"p_cont": 2}},
    {"colour": "blue"},
])
def test_invalid_scenarios(bad):
    with pytest.raises(InvalidScenarioError):
        scenario_from_dict({"case": "x.json", "horizon": 2, "protect_at_step": 1, **bad})


def test_scenario_parse_errors(tmp_path):
    (tmp_path / "s.json").write_text("[1, 2")
    with pytest.raises(ParseError):
        load_scenario(tmp_path / "s.json")
    with pytest.raises(ParseError):
        load_scenario(tmp_path / "missing.json")


def test_predict_quiescent(tmp_path):
    native_case(tmp_path)
    sc = load_scenario(write_scenario(tmp_path))
    rep = run_predict(sc)
    # lambda = 2e-4 is under the default floor: nothing is enumerated and the
    # survivor factor is dropped, so the self-loop carries all the mass
    assert rep.paths[0].steps == ((), ())
    assert rep.paths[0].probability == 1.0
    exact = run_predict(sc.override(outage_params={"exact_survivor_factors": True}))
    stay = (1 - 1e-4) * (1 - 1e-4)  # contingency and far hidden failure
    assert exact.paths[0].probability == pytest.approx(stay ** 2, rel=1e-12)
    assert exact.bound == pytest.approx(stay, rel=1e-12)


def test_predict_matches_hand_enumeration(tmp_path):
    native_case(tmp_path)
    sc = load_scenario(write_scenario(tmp_path, epsilon=0.0))
    rep = run_predict(sc, lambdas=constant_lambdas([0.3]))
    on, off = sorted(rep.d_epsilon, key=lambda s: -s.bits)
    assert rep.trajectory[1].get(on) == pytest.approx(0.7)
    assert rep.trajectory[2].get(off) == pytest.approx(1 - 0.7 ** 2)
    d = rep.to_dict()
    assert verify_report(d) == d["bound"]["value"]


def test_protect_two_bus_toy(tmp_path):
    native_case(tmp_path, limit=0.5)
    sc = load_scenario(write_scenario(tmp_path, feasibility_tol=1e-9))
    rep = run_protect(sc, lambdas=constant_lambdas([0.0]))
    np.testing.assert_allclose(rep.protection.delta, [-0.5, 0.5], atol=1e-9)
    assert rep.status == "ok" and rep.exit_code == 0


def test_protect_quiescent_zero(tmp_path):
    native_case(tmp_path)
    rep = run_protect(load_scenario(write_scenario(tmp_path)))
    np.testing.assert_allclose(rep.protection.delta, 0, atol=1e-12)


def test_report_self_consistency(ring_scenario):
    rep = run_protect(ring_scenario)
    d = json.loads(rep.to_json())
    assert verify_report(d) == d["bound"]["value"]
    assert 0 <= d["bound"]["value"] <= 1
    assert len(d["protection"]["delta_pb"]) == 5
    for p, q in zip(rep.paths, recompute_paths(rep)):
        assert p.probability == pytest.approx(q, rel=1e-12)


@pytest.fixture
def ring_scenario(tmp_path, ring5):
    from cascade_protect.grid_model import case_to_native
    (tmp_path / "ring.json").write_text(json.dumps(case_to_native(ring5)))
    return scenario_from_dict({"case": "ring.json", "horizon": 3, "protect_at_step": 2,
                               "epsilon": 0.05, "initial_contingencies": [[[1], 0.5], [[6], 0.5]]},
                              tmp_path)


def test_flow_table(tmp_path):
    rows = run_flow(native_case(tmp_path))
    assert len(rows) == 1
    assert rows[0]["flow"] == pytest.approx(1.0) and rows[0]["ratio"] == pytest.approx(0.5)
    zero = run_flow(native_case(tmp_path), injections=np.zeros(2))
    assert zero[0]["flow"] == 0


def test_flow_table_ieee():
    from conftest import CASE118
    rows = run_flow(CASE118, thresholds="base_flow")
    assert len(rows) == 186 and max(r["ratio"] for r in rows) < 0.8


def test_validate(tmp_path):
    assert run_validate(native_case(tmp_path))["ok"]
    bad = run_validate(native_case(tmp_path, limit=-1.0), thresholds="rate_a")
    assert not bad["ok"] and bad["code"] == "INVALID_CASE"
    assert any("threshold" in v for v in bad["violations"])


def test_cli_exit_codes(tmp_path, capsys):
    native_case(tmp_path)
    good = write_scenario(tmp_path)
    assert main(["predict", "--scenario", str(good)]) == 0
    assert json.loads(capsys.readouterr().out)["status"] == "ok"
    assert main(["predict", "--scenario", str(tmp_path / "nope.json")]) == 1
    assert main(["validate", "--case", str(native_case(tmp_path, limit=-1, name="bad.json")),
                 "--thresholds", "rate_a"]) == 1
    # the overloaded line trips for sure; the islanded load cannot be shed to zero
    native_case(tmp_path, limit=0.5, load_bounds=(-1.0, -1.0))
    assert main(["protect", "--scenario", str(good)]) == 2


def test_cli_outputs_are_deterministic(tmp_path, ring5):
    from cascade_protect.grid_model import case_to_native
    (tmp_path / "ring.json").write_text(json.dumps(case_to_native(ring5)))
    sc = tmp_path / "sc.json"
    sc.write_text(json.dumps({"case": "ring.json", "horizon": 2, "protect_at_step": 2,
                              "epsilon": 0.05, "monte_carlo_samples": 2000,
                              "initial_contingencies": [{"outaged": [1], "probability": 1.0}]}))
    outs = []
    for k in range(2):
        out = tmp_path / f"out{k}"
        assert main(["protect", "--scenario", str(sc), "--out", str(out), "--no-timings",
                     "--seed", "7"]) == 0
        outs.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert outs[0] == outs[1]
    assert set(outs[0]) == {"report.json", "paths.csv", "delta_pb.csv", "solver_trace.jsonl"}
    rows = list(csv.DictReader(outs[0]["delta_pb.csv"].decode().splitlines()))
    assert [int(r["bus_id"]) for r in rows] == [1, 2, 3, 4, 5]
    assert "timings" not in json.loads(outs[0]["report.json"])


def test_cli_overrides(tmp_path, capsys):
    native_case(tmp_path)
    sc = write_scenario(tmp_path)
    assert main(["predict", "--scenario", str(sc), "--horizon", "1", "--epsilon", "0.2",
                 "--beam", "3"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["scenario"]["horizon"] == 1 and d["scenario"]["epsilon"] == 0.2
    assert d["scenario"]["beam_width"] == 3


def test_cli_flow(tmp_path, capsys):
    assert main(["flow", "--case", str(native_case(tmp_path)), "--out", str(tmp_path)]) == 0
    assert "1.00000" in capsys.readouterr().out
    assert (tmp_path / "flows.csv").exists()
