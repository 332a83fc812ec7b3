import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppnsim.model import (
    VARIANTS,
    CalciumParams,
    GateKinetics,
    ModelError,
    ModelSpec,
    build_model,
    canonical_conductance,
    channel_current,
    gate_steady,
    gate_tau,
    kca_activation,
    numerical_jacobian,
    rest_state,
    scalar_equilibria,
    state_scale,
)

# Independent transcription of the published channel table, typed in
# separately from data/models/*.json. Gates: (half, slope, t0, t1, theta,
# sigma0, sigma1).
ORACLE_GATES = {
    "m_Na": (-32.5, 7, 0.05, 0.2, -12, 4, -10),
    "h_Na": (-63, -8, 0.7, 31, -48, 12, -6),
    "m_K": (-32, 10, 0.3, 13, -38, 19, -16),
    "m_CaPQ": (-23, 5.5, 1, 1, 1, 1, 1),
    "m_CaT": (-53.2, 6.4, 10, 10, 1, 1, 1),
    "h_CaT": (-76.8, -4.5, 125, 100, 1, 1, 1),
    "m_A": (-16.5, 5.14, 0, 7.58, -79, 13.3, -40.3),
    "h_A": (-75.7, -6, 0, 16.82, -104, 5.1, -255),
}
ORACLE_G = {  # C, CT, NC
    "Na": (50, 50, 20),
    "K": (40, 40, 0.9),
    "L": (0.1, 0.1, 0.07),
    "CaPQ": (0.35, 0.35, 0.21),
    "KCa": (0.5, 0.6, 0.5),
    "CaT": (0, 4, 1),
    "A": (4, 9, 0),
}
ORACLE_E = {"Na": 50, "K": -87, "L": -59, "CaPQ": 60, "CaT": 60, "KCa": -87, "A": -87}
ORACLE_EXPONENTS = {"m_Na": 3, "h_Na": 1, "m_K": 4, "m_CaPQ": 1, "m_CaT": 2, "h_CaT": 1, "m_A": 1, "h_A": 1}
# 1 / (2 F Vol) with F = 96485.33212 C/mol and Vol = 7.238e-6 pL, frozen.
FLUX = 0.7159622586776546


@pytest.mark.parametrize("variant", VARIANTS)
def test_canonical_models_match_the_channel_table(variant):
    m = build_model(variant)
    col = VARIANTS.index(variant)
    present = {c.name for c in m.channels}
    assert present == {n for n, g in ORACLE_G.items() if g[col] > 0}
    for ch in m.channels:
        assert ch.g == pytest.approx(ORACLE_G[ch.name][col])
        assert ch.E == pytest.approx(ORACLE_E[ch.name])
    for gid in m.gate_ids:
        k = m.gate(gid)
        assert (k.p_half, k.k_p, k.t0, k.t1, k.theta, k.sigma0, k.sigma1) == pytest.approx(ORACLE_GATES[gid])
        assert k.exponent == ORACLE_EXPONENTS[gid]
    assert m.channel("KCa").kca_affinity == 400
    ca = m.calcium
    assert (ca.f_Ca, ca.t_store, ca.Ca_eq, ca.Vol) == (0.025, 12.5, 100.0, 7.238e-6)
    assert ca.flux == pytest.approx(FLUX, rel=1e-12)
    assert set(m.calcium_sources) == {"CaPQ", "CaT"} & present


def test_unknown_variant_is_rejected():
    with pytest.raises(ModelError):
        build_model("XX")


def test_state_layout():
    assert build_model("NC").state_names == ("V", "m_Na", "h_Na", "m_K", "m_CaPQ", "m_CaT", "h_CaT", "Ca")
    assert build_model("C").dim == 8
    assert build_model("CT").dim == 10


def test_canonical_conductance_zero_for_absent_channel():
    assert canonical_conductance("C", "CaT") == 0.0
    assert canonical_conductance("CT", "A") == 9.0


@given(st.floats(-120, 60))
def test_gate_steady_is_a_fraction_and_half_at_midpoint(V):
    for gid, row in ORACLE_GATES.items():
        k = GateKinetics(*row[:7])
        s = gate_steady(k, V)
        assert 0.0 <= s <= 1.0
    assert gate_steady(GateKinetics(-75.7, -6, 0, 16.82, -104, 5.1, -255), -75.7) == pytest.approx(0.5)


def test_inactivation_steady_state_decreases_with_voltage():
    k = GateKinetics(*ORACLE_GATES["h_CaT"])
    V = np.linspace(-120, 40, 50)
    assert np.all(np.diff(gate_steady(k, V)) < 0)


@given(st.floats(-150, 80))
def test_hcat_tau_stays_between_its_two_time_constants(V):
    k = build_model("CT").gate("h_CaT")
    assert 100.0 <= gate_tau(k, V) <= 125.0


@given(st.floats(-150, 80))
def test_tau_respects_floor(V):
    for gid in ("m_A", "h_A", "m_Na"):
        assert gate_tau(build_model("CT").gate(gid), V) >= 0.01


def test_constant_tau_when_time_constants_coincide():
    k = build_model("CT").gate("m_CaT")
    assert gate_tau(k, np.array([-90.0, 0.0, 30.0])) == pytest.approx([10.0, 10.0, 10.0])


def test_tau_formula_hand_value():
    # m_K at V = theta: denominator 2, so tau = t0 + (t1 - t0)/2
    k = build_model("CT").gate("m_K")
    assert gate_tau(k, -38.0) == pytest.approx(0.3 + (13 - 0.3) / 2)


def test_kca_activation_quarter_power():
    assert kca_activation(400.0, 400.0) == pytest.approx(0.5)
    assert kca_activation(800.0, 400.0) == pytest.approx(16 / 17)
    with pytest.raises(ModelError):
        kca_activation(0.0, 400.0)


def test_channel_current_hand_value():
    m = build_model("NC")
    ch = m.channel("Na")
    s = {"V": -20.0, "m_Na": 0.5, "h_Na": 0.4}
    assert channel_current(ch, s) == pytest.approx(20 * 0.5**3 * 0.4 * (-20 - 50))
    kca = m.channel("KCa")
    assert channel_current(kca, {"V": -60.0, "Ca": 400.0}) == pytest.approx(0.5 * 0.5 * (-60 + 87))


def test_leak_only_voltage_derivative():
    m = build_model("NC").with_overrides({f"g_{c}": 0.0 for c in ("Na", "K", "CaPQ", "KCa", "CaT")})
    y = m.steady_state_at(-40.0)
    assert m.rhs(y, 0.0)[0] == pytest.approx(-0.07 * (-40 + 59))
    assert m.rhs(y, 1.5)[0] == pytest.approx(-0.07 * (-40 + 59) + 1.5)


def random_state(m, data):
    V = data.draw(st.floats(-100, 50))
    gates = [data.draw(st.floats(0, 1)) for _ in range(m.dim - 2)]
    ca = data.draw(st.floats(50, 600))
    return np.array([V, *gates, ca])


@pytest.mark.parametrize("variant", VARIANTS)
@given(data=st.data())
def test_jacobian_matches_central_differences(variant, data):
    m = build_model(variant)
    y = random_state(m, data)
    s = state_scale(m)
    J = m.jacobian(y) * s[None, :] / s[:, None]
    Jn = numerical_jacobian(lambda z: m.rhs(z), y, 1e-6, s) * s[None, :] / s[:, None]
    assert np.max(np.abs(J - Jn)) <= 1e-5 * max(1.0, np.max(np.abs(J)))


def test_overrides_and_round_trip(tmp_path):
    m = build_model("CT", g_CaT=2.0, **{"m_A.exponent": 3, "flux_scale": 2.0})
    assert m.channel("CaT").g == 2.0
    assert m.gate("m_A").exponent == 3
    assert m.calcium.flux == pytest.approx(2.0)
    p = tmp_path / "m.json"
    m.to_json(p)
    m2 = ModelSpec.from_json(p)
    y = m.steady_state_at(-60.0)
    np.testing.assert_array_equal(m.rhs(y, 0.3), m2.rhs(y, 0.3))
    assert json.loads(p.read_text())["variant"] == "CT"


def test_unknown_override_is_rejected():
    with pytest.raises(ModelError):
        build_model("NC", g_A=1.0)
    with pytest.raises(ModelError):
        build_model("NC", **{"m_Na.bogus": 1.0})


def test_block_zeroes_conductance():
    m = build_model("NC").block(["Na"])
    assert m.channel("Na").g == 0.0
    with pytest.raises(ModelError):
        build_model("NC").block(["A"])


def test_calcium_params_physical_flux():
    assert CalciumParams().flux == pytest.approx(FLUX)


@pytest.mark.parametrize("variant", VARIANTS)
def test_scalar_equilibria_are_equilibria(variant):
    m = build_model(variant)
    for I in (-1.0, 0.0, 0.5):
        for y in scalar_equilibria(m, I):
            assert np.max(np.abs(m.rhs(y, I) / state_scale(m))) < 1e-8
            assert m.is_valid_state(y)


def test_rest_state_is_stable():
    m = build_model("NC")
    y = rest_state(m, -0.6)
    assert np.max(np.linalg.eigvals(m.jacobian(y, -0.6)).real) < 0
