import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppnsim.integrate import (
    IntegratorConfig,
    Trace,
    detect_spikes,
    integrate,
    local_maxima,
    settle,
)
from ppnsim.model import build_model, rest_state


def synthetic(V, dt=0.1):
    V = np.asarray(V, dtype=float)
    t = dt * np.arange(len(V))
    return Trace(t, V[:, None], ("V",), np.zeros_like(t))


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(rel_tol=0.1)
    with pytest.raises(ValueError):
        IntegratorConfig(max_step=-1)
    with pytest.raises(ValueError):
        IntegratorConfig(abs_tol=[1e-9, 0.0])


def test_scalar_abs_tol_is_scaled_for_voltage_and_calcium():
    m = build_model("NC")
    a = IntegratorConfig(abs_tol=1e-9).atol_for(m)
    assert a[0] == a[-1] == pytest.approx(1e-7)
    assert np.all(a[1:-1] == 1e-9)
    with pytest.raises(ValueError):
        IntegratorConfig(abs_tol=[1e-9] * 3).atol_for(m)


def test_trace_rejects_nonmonotone_times():
    with pytest.raises(ValueError):
        Trace(np.array([0.0, 0.0]), np.zeros((2, 1)), ("V",), np.zeros(2))


def test_spikes_on_synthetic_bumps():
    t = np.arange(0, 100, 0.1)
    V = -60 + 80 * (np.exp(-((t - 20) ** 2) / 2) + np.exp(-((t - 60) ** 2) / 2))
    spikes = detect_spikes(synthetic(V))
    assert spikes == pytest.approx([20.0, 60.0], abs=0.06)


def test_refractory_merges_double_peak():
    t = np.arange(0, 50, 0.1)
    V = -60 + 80 * np.exp(-((t - 20) ** 2) / 2) + 75 * np.exp(-((t - 21.2) ** 2) / 0.1)
    assert len(detect_spikes(synthetic(V))) == 1


def test_unfinished_upstroke_is_not_a_spike():
    V = np.concatenate([np.full(50, -60.0), np.linspace(-60, 10, 20)])
    assert detect_spikes(synthetic(V)) == []


@given(st.lists(st.floats(-90, -25), min_size=2, max_size=200))
def test_subthreshold_traces_have_no_spikes(vals):
    assert detect_spikes(synthetic(vals)) == []


def test_local_maxima_prominence():
    t = np.arange(0, 100, 0.1)
    V = -50 + 10 * np.sin(2 * np.pi * t / 25)
    assert len(local_maxima(synthetic(V), 5.0)) == 4
    assert len(local_maxima(synthetic(V), 30.0)) == 0


def test_rest_is_stationary_under_integration():
    m = build_model("NC")
    y = rest_state(m)
    tr = integrate(m, y, lambda t: 0.0, (0.0, 200.0))
    assert np.max(np.abs(tr.states[-1] - y) / np.array([100] + [1] * (m.dim - 2) + [100])) < 1e-6
    assert tr.times[-1] == 200.0
    assert np.allclose(np.diff(tr.times), 0.05)


def test_breakpoint_is_on_grid_and_reports_post_edge_current():
    m = build_model("NC")
    cur = lambda t: 0.0 if t < 10.03 else 0.2  # noqa: E731
    tr = integrate(m, rest_state(m), cur, (0.0, 20.0), breakpoints=[10.03])
    k = int(np.nonzero(tr.times == 10.03)[0][0])
    assert tr.I_app[k] == 0.2 and tr.I_app[k - 1] == 0.0
    assert (10.03, "stimulus_edge") in tr.events


def test_integration_is_deterministic():
    m = build_model("CT")
    y = m.steady_state_at(-40.0)
    a = integrate(m, y, lambda t: 1.0, (0.0, 100.0))
    b = integrate(m, y, lambda t: 1.0, (0.0, 100.0))
    np.testing.assert_array_equal(a.states, b.states)


def test_gates_stay_in_unit_interval_while_spiking():
    m = build_model("C")
    tr = integrate(m, rest_state(m), lambda t: 3.0, (0.0, 300.0))
    assert len(detect_spikes(tr)) >= 3
    g = tr.states[:, 1:-1]
    assert g.min() >= -1e-9 and g.max() <= 1 + 1e-9
    assert tr.states[:, -1].min() > 0


def test_invalid_inputs():
    m = build_model("NC")
    with pytest.raises(ValueError):
        integrate(m, rest_state(m), lambda t: 0.0, (5.0, 5.0))
    with pytest.raises(ValueError):
        integrate(m, np.zeros(3), lambda t: 0.0, (0.0, 1.0))


def test_settle_reaches_equilibrium():
    m = build_model("NC")
    s = settle(m, -0.6)
    assert s.stationary
    assert np.max(np.abs(m.rhs(s.state, -0.6))) < 1e-9


def test_trace_window_and_export(tmp_path):
    m = build_model("NC")
    tr = integrate(m, rest_state(m), lambda t: 0.0, (0.0, 10.0))
    w = tr.window(2.0, 4.0)
    assert w.times[0] == pytest.approx(2.0) and w.times[-1] == pytest.approx(4.0)
    p = tmp_path / "t.csv"
    tr.to_csv(p)
    head = p.read_text().splitlines()[0].split(",")
    assert head == ["t", "V", "m_Na", "h_Na", "m_K", "m_CaPQ", "m_CaT", "h_CaT", "Ca", "I_app"]
    assert tr.at(5.0)[0] == pytest.approx(tr.V[100])
