import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppnsim.continuation import continue_equilibria, find_equilibrium
from ppnsim.fields import ReducedModel
from ppnsim.gspt import (
    CrossingEvent,
    Partition,
    QuasiSteadyModel,
    TrajectoryField,
    _running_mean,
    concordant,
    crossings_to_json,
    detect_crossings,
    freeze,
    manifold_slice,
    nullcline,
    quasi_steady_run,
)
from ppnsim.integrate import Trace
from ppnsim.model import ModelError, build_model, rest_state
from ppnsim.protocols import make_protocol, run


@pytest.fixture(scope="module")
def sdp():
    return run(make_protocol("SDP"))


def test_partition_validation():
    with pytest.raises(ModelError):
        Partition(("V", "m_K"), ("m_K",))
    with pytest.raises(ModelError):
        Partition(("m_K",), ("V",))
    p = Partition.for_context("NC", "SDP")
    assert p.slow == ("m_CaT", "h_CaT", "Ca")
    with pytest.raises(ModelError):
        p.check(build_model("C"))
    assert p.frozen_for("full") == ()
    with pytest.raises(ValueError):
        p.frozen_for("medium")


def test_partition_round_trip():
    p = Partition.for_context("CT", "PIR")
    assert Partition.from_dict(p.to_dict()) == p
    assert p.frozen_for("fast-slow") == ("h_CaT", "Ca")


def test_freeze_requires_exact_keys():
    m = build_model("NC")
    p = Partition.for_context("NC", "SDP")
    red = freeze(m, p, {"mCaT": 0.1, "hCaT": 0.5, "ca": 120.0})
    assert red.dim == 5
    with pytest.raises(ModelError):
        freeze(m, p, {"m_CaT": 0.1, "h_CaT": 0.5})
    with pytest.raises(ModelError):
        freeze(m, p, {"m_CaT": 0.1, "h_CaT": 0.5, "Ca": 120.0, "m_K": 0.2})


def test_slice_points_lie_on_the_manifold(sdp):
    m = build_model("NC")
    p = Partition.for_context("NC", "SDP")
    sl = manifold_slice(m, p, "h_CaT", (0.0, 1.0), trace=sdp.trace, t=100.0, ds_max=2e-2)
    assert sl.residual < 1e-10
    assert sl.regime == "e" and sl.kind == "M1"
    red = ReducedModel(m, {k: v for k, v in sl.frozen.items() if "@" not in k} | {"h_CaT": 0.0}, sl.I_app)
    for x, q in zip(sl.branch.states[::10], sl.branch.params[::10]):
        assert np.max(np.abs(red.rhs(x, frozen={"h_CaT": q}))) < 1e-10
    stable, unstable = sl.count()
    assert stable >= 1 and unstable >= 1
    with pytest.raises(ModelError):
        manifold_slice(m, p, "m_K", (0, 1), trace=sdp.trace, t=100.0)


def test_slice_exports(sdp, tmp_path):
    m = build_model("NC")
    p = Partition.for_context("NC", "SDP")
    sl = manifold_slice(m, p, "Ca", (50.0, 400.0), trace=sdp.trace, t=20.0, ds_max=5.0)
    sl.to_json(tmp_path / "s.json")
    sl.to_csv(tmp_path / "s.csv")
    assert json.loads((tmp_path / "s.json").read_text())["sweep"] == "Ca"
    assert (tmp_path / "s.csv").read_text().splitlines()[0].startswith("Ca,stable,V")


def test_gate_nullcline_is_steady_state():
    m = build_model("C")
    pts = nullcline(m, "h_A", [-75.7, -200.0])
    assert pts[0, 1] == pytest.approx(0.5)
    assert pts[1, 1] == pytest.approx(1.0, abs=1e-8)
    # m_CaT is essentially closed far below its half-activation
    assert nullcline(build_model("CT"), "m_CaT", [-120.0])[0, 1] < 1e-4
    with pytest.raises(ModelError):
        nullcline(m, "V", [0.0])


def test_calcium_nullcline_matches_steady_state():
    m = build_model("NC")
    pts = nullcline(m, "Ca", [-60.0, -40.0])
    for V, ca in pts:
        assert ca == pytest.approx(m.steady_state_at(V)[-1], rel=1e-10)


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_running_mean_reproduces_linear_functions(a, b):
    t = np.linspace(0, 100, 1001)
    at = np.array([20.0, 50.0, 80.0])
    assert _running_mean(t, a + b * t, at, 10.0) == pytest.approx(a + b * at, abs=1e-9)


def test_trajectory_field_splits_at_steps(sdp):
    m = build_model("NC")
    p = Partition.for_context("NC", "SDP")
    fld = TrajectoryField(m, p, sdp.trace, (10.0, 400.0))
    assert len(fld.steps) == 2
    (a0, b0), (a1, b1), (a2, b2) = fld.pieces()
    assert a0 == 10.0 and b0 < 50.0 <= a1 and b1 < 250.0 <= a2 and b2 == 400.0
    y, I, _, _ = fld._interp(100.0)
    ref = sdp.trace.at(100.0)
    np.testing.assert_allclose(y, ref[fld.cols], rtol=1e-12)
    assert I == pytest.approx(-0.415)


def test_ah_crossing_time_matches_direct_continuation():
    # Slow variables held constant while the current ramps: the AH crossing
    # time is then (I_H - I_0) / slope, with I_H from continuation in I_app.
    # The ramp starts at I_0 on the upper branch, past the two folds.
    m = build_model("NC").block(["Na"])
    p = Partition.for_context("NC", "Ramp")
    y0 = rest_state(m, 0.0)
    frozen = {n: y0[m.index(n)] for n in p.frozen_for("fast")}
    red = ReducedModel(m, frozen, 0.0)
    br = continue_equilibria(red, (0.0, 2.0), red.restrict(y0), ds=1e-2, ds_max=2e-2)
    folds = br.of_kind("fold")
    assert len(folds) == 2
    I_H = br.of_kind("Hopf")[0]["param"]
    I0, slope = 0.2, 0.002
    k = folds[-1]["index"] + int(np.argmin(np.abs(br.params[folds[-1]["index"] :] - I0)))
    x0 = find_equilibrium(red, I0, br.states[k])
    y = y0.copy()
    y[red.free_idx] = x0
    t = np.arange(0.0, 300.0 + 1e-9, 0.5)
    tr = Trace(t, np.tile(y, (len(t), 1)), m.state_names, I0 + slope * t)
    ev = detect_crossings(tr, m, p, kind="AH")
    assert len(ev) == 1
    assert ev[0].time == pytest.approx((I_H - I0) / slope, abs=1e-3)


def test_crossing_validation_and_export(tmp_path):
    m = build_model("NC")
    p = Partition.for_context("NC", "SDP")
    t = np.arange(0.0, 10.0, 0.5)
    tr = Trace(t, np.tile(rest_state(m), (len(t), 1)), m.state_names, 0 * t)
    with pytest.raises(ValueError):
        detect_crossings(tr, m, p, kind="Bautin")
    ev = [CrossingEvent(1.0, "AH", "fast", {"V": -50.0})]
    crossings_to_json(ev, tmp_path / "c.json")
    assert json.loads((tmp_path / "c.json").read_text())[0]["kind"] == "AH"


def test_concordance_on_synthetic_onset():
    t = np.arange(0, 400, 0.1)
    V = np.where(t > 200, -40 + 15 * np.sin(2 * np.pi * t / 20), -60.0)
    tr = Trace(t, V[:, None], ("V",), 0 * t)
    assert concordant(tr, CrossingEvent(205.0, "AH", "fast", {}))
    assert not concordant(tr, CrossingEvent(100.0, "AH", "fast", {}))


def test_quasi_steady_gates_track_steady_state():
    m = build_model("C")
    q = QuasiSteadyModel(m, ["m_Na"])
    y = m.steady_state_at(-50.0)
    y[1] = 0.9
    z = q.slave(y)
    assert z[1] == pytest.approx(m.gate("m_Na").steady(-50.0))
    tr, spikes = quasi_steady_run(make_protocol("Delay", windows=[[100.0, 400.0]], total=450.0), ["m_Na"])
    k = m.index("m_Na")
    np.testing.assert_allclose(tr.states[:, k], m.gate("m_Na").steady(tr.V), atol=1e-6)
    assert len(spikes) >= 1
