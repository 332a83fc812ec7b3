import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppnsim.model import build_model
from ppnsim.nondim import (
    CONTEXTS,
    Scales,
    classify,
    context_key,
    gap_partition,
    long_name,
    nondimensionalize,
    partition_is_separated,
    roundtrip_check,
    short_name,
)
from ppnsim.protocols import make_protocol

# Published NC/SDP row (units of 1e-3), checked against the source table.
NC_SDP = {"v": 50, "mNa": 20, "mK": 1.78, "hNa": 1.43, "mCaPQ": 1, "mCaT": 0.1, "hCaT": 0.008}


def display(rep):
    return {k: v * 1e3 for k, v in rep.normalized.items()}


def test_constant_tau_gates_by_hand():
    # tau = 1 ms and 10 ms: R = k_tau / tau, times 1e-6, shown in 1e-3 units
    d = display(classify("NC", context="SDP", preset="table"))
    assert d["mCaPQ"] == pytest.approx(1.0)
    assert d["mCaT"] == pytest.approx(0.1)
    assert d["v"] == pytest.approx(50.0)
    # h_CaT's fastest tau is the 100 ms floor of its tabulated range
    assert d["hCaT"] == pytest.approx(0.01)


def test_nc_sdp_row_within_ratio_tolerance():
    d = display(classify("NC", context="SDP", preset="table"))
    for k, ref in NC_SDP.items():
        assert 0.75 <= d[k] / ref <= 1.25 + 1e-12, k


def test_label_mapping_round_trips():
    for n in build_model("CT").state_names:
        assert long_name(short_name(n)) == n


def test_unknown_context():
    with pytest.raises(KeyError):
        context_key("C", "PIR")


@pytest.mark.parametrize("key", sorted(CONTEXTS))
def test_presets_cover_every_variable(key):
    variant, ctx = key.split(":")
    for name in CONTEXTS[key].partitions:
        rep = classify(variant, context=ctx, preset=name)
        seen = sorted(v for vs in rep.partition.values() for v in vs)
        assert seen == sorted(rep.R)
        assert "v" in rep.partition["fast"]
        assert rep.eps1 is not None and 0 < rep.eps1 < 1


def test_bad_partition_is_rejected():
    with pytest.raises(ValueError):
        classify("NC", context="SDP", partition={"fast": ("v",), "slow": ("ca",)})
    rep = classify("NC", context="SDP")
    part = dict(rep.partition)
    fast = [v for v in part["fast"] if v != "v"]
    with pytest.raises(ValueError):
        classify("NC", context="SDP", partition={"fast": tuple(fast), "slow": ("v",) + tuple(part.get("slow", ()))})


@given(st.dictionaries(st.sampled_from(list("abcdefgh")), st.floats(1e-6, 1e6), min_size=1))
def test_gap_partition_is_ordered_and_complete(R):
    part = gap_partition(R)
    seen = [v for vs in part.values() for v in vs]
    assert sorted(seen) == sorted(R)
    groups = list(part.values())
    for a, b in zip(groups[:-1], groups[1:]):
        assert min(R[k] for k in a) > max(R[k] for k in b)
        assert np.log10(min(R[k] for k in a)) - np.log10(max(R[k] for k in b)) >= 0.8 - 1e-12


def test_auto_partition_is_separated():
    rep = classify("CT", context="PIR")
    assert rep.preset is None and partition_is_separated(rep)


def test_blocked_gates_and_calcium_are_flagged():
    rep = classify("NC", context="Ramp", preset="table")
    assert set(rep.flagged) == {"ca", "mNa", "hNa"}


def test_nondim_rhs_is_scaled_dimensional_rhs():
    m = build_model("CT")
    s = Scales()
    nd = nondimensionalize(m, s)
    y = m.steady_state_at(-45.0)
    y[1:-1] = np.linspace(0.1, 0.9, m.dim - 2)
    y[-1] = 250.0
    I = 0.7
    z = nd.to_dimensionless(y)
    dz = nd.rhs(z, nd.I_bar(I))
    dy = m.rhs(y, I)
    back = nd.to_dimensional(dz) / s.k_tau
    np.testing.assert_allclose(back, dy, rtol=1e-12, atol=1e-12)


def test_roundtrip_and_negative_control():
    m = build_model("NC")
    p = make_protocol("SDP")
    s = Scales()
    assert roundtrip_check(m, s, p, duration=300.0) < 1e-6
    wrong = Scales(k_v=110.0)
    assert roundtrip_check(m, s, p, duration=300.0, map_scales=wrong) > 1e-2


def test_report_serializes(tmp_path):
    rep = classify("C", context="Delay", preset="table")
    f = tmp_path / "r.json"
    rep.to_json(f)
    assert '"preset": "table"' in f.read_text()
    assert "class" in rep.render()
