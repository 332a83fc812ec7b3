import json

import pytest

from ppnsim.scenarios import (
    RUNNERS,
    SCENARIOS,
    Check,
    ScenarioResult,
    calibrate_pif,
    ordering_violations,
    run_scenario,
    within,
)


def test_every_scenario_has_a_runner():
    assert set(RUNNERS) == set(SCENARIOS)
    with pytest.raises(KeyError):
        run_scenario("fig1")


def test_check_line_format():
    c = Check(4, "delay", False, 22.0, "> 70")
    assert c.line() == "[FAIL] C4 delay: observed 22 (target > 70)"
    assert Check(1, "x", True, None, "y").line().startswith("[PASS] C1 x")


def test_result_serializes_complex_values():
    r = ScenarioResult("fig3", [Check(2, "ev", True, 1 + 2j, "-")], {}, 0.1)
    d = json.loads(json.dumps(r.to_dict()))
    assert d["checks"][0]["observed"] == [1.0, 2.0]
    assert r.passed


def test_within():
    assert within(1.43, 1.41, 0.05)
    assert not within(None, 1.41, 0.05)
    assert not within(1.5, 1.41, 0.05)


def test_ordering_violations():
    pub = {"a": 3.0, "b": 2.0, "c": 1.0}
    assert ordering_violations({"a": 3.1, "b": 2.2, "c": 0.9}, pub) == []
    assert ordering_violations({"a": 1.0, "b": 2.2, "c": 0.9}, pub) != []


def test_calibration_rejects_out_of_range_durations():
    with pytest.raises(ValueError):
        calibrate_pif("fig9nc", durations=(2.0,))
    with pytest.raises(KeyError):
        calibrate_pif("fig9x")


def test_nc_calibration_on_small_grid():
    rep = calibrate_pif("fig9nc", durations=(6.0, 15.0))
    assert rep["passed"]
    assert rep["achieved"] == {"paired": 1, "inhibition_only": 0, "excitation_only": 0}
    assert len(rep["grid"]) == 4


def test_scenario_writes_artifacts(tmp_path):
    r = run_scenario("fig9nc", out=tmp_path)
    assert r.passed and r.error is None
    assert any(tmp_path.joinpath("fig9nc").iterdir())
