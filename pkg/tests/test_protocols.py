import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppnsim.protocols import (
    Protocol,
    ProtocolError,
    Segment,
    append_ledger,
    custom_protocol,
    make_protocol,
    normalized_isi_curve,
    run,
)


def test_ramp_matches_published_waveform():
    p = make_protocol("Ramp")
    assert p.model_variant == "NC" and p.channel_blocks == ("Na",)
    assert p.current(50.0) == 0.0
    assert p.current(100.0) == pytest.approx(0.0)
    assert p.current(400.0) == pytest.approx(0.0085 * 300)
    assert p.current(750.0) == 0.0
    assert p.breakpoints == [100.0, 700.0]


@given(st.floats(100, 699.9), st.floats(100, 699.9))
def test_ramp_is_monotone(a, b):
    p = make_protocol("Ramp")
    if a < b:
        assert p.current(a) <= p.current(b)


def test_sdp_levels():
    p = make_protocol("SDP")
    assert p.holding_current == -0.6
    assert p.current(100.0) == -0.415
    assert make_protocol("SDP", preset="fig4_caption").current(100.0) == 185.0


def test_pif_onsets_per_variant():
    nc = make_protocol("PIF", "NC")
    assert [s.t_start for s in nc.segments] == [100.0, 150.0]
    ct = make_protocol("PIF", "CT")
    assert [s.t_start for s in ct.segments] == [100.0, 250.0]
    assert [s.level for s in ct.segments] == [-2.7, 0.15]
    assert len(make_protocol("PIF", "NC", mode="inhibition").segments) == 1


def test_reversed_pif_swaps_order():
    p = make_protocol("PIF", "NC", mode="reversed")
    first, second = p.segments
    assert first.level > 0 > second.level
    assert (first.t_start, second.t_start) == (100.0, 150.0)


def test_reversed_pif_does_not_facilitate():
    r = run(make_protocol("PIF", "NC", mode="reversed"))
    assert len(r.spikes) == 0


def test_protocol_validation():
    with pytest.raises(ProtocolError):
        make_protocol("Nope")
    with pytest.raises(ProtocolError):
        make_protocol("SDP", total=0.0)
    with pytest.raises(ProtocolError):
        make_protocol("SDP", bogus=1.0)
    with pytest.raises(ProtocolError):
        make_protocol("PIF", mode="sideways")
    with pytest.raises(ProtocolError):
        make_protocol("SDP", preset="missing")
    with pytest.raises(ProtocolError):
        custom_protocol("NC", 0.0, [Segment(0, 10), Segment(5, 15)], 20)
    with pytest.raises(ProtocolError):
        Segment(5, 5)


def test_json_round_trip(tmp_path):
    p = make_protocol("Delay")
    f = tmp_path / "p.json"
    p.to_json(f)
    q = Protocol.from_json(f)
    assert q == p
    for t in (0.0, 150.0, 500.0, 700.0):
        assert q.current(t) == p.current(t)


def test_sdp_response_is_transient_and_reversible():
    r = run(make_protocol("SDP"))
    assert r.stationary_start
    assert len(r.spikes) == 2
    assert all(50 < t < 250 for t in r.spikes)
    # back at the holding level, the state returns to the settled rest
    dev = np.abs(r.trace.states[-1] - r.settled)
    assert dev[0] < 0.1


def test_subthreshold_step_without_spikes_returns_to_rest():
    r = run(make_protocol("SDP", step_level=-0.55, total=1200.0))
    assert r.spikes == []
    assert abs(r.trace.V[-1] - r.settled[0]) < 0.05


def test_normalized_isi_curve_from_peaks():
    peaks = np.cumsum([0, 40, 30, 24, 20, 18, 17])
    c = normalized_isi_curve(peaks)
    xs = [x for x, _ in c["points"]]
    assert xs[-1] == pytest.approx(1.0) and xs[0] > 0
    assert c["isis"] == [40, 30, 24, 20, 18, 17]
    assert c["fit_rms"] < 2.0
    assert normalized_isi_curve([1.0, 2.0]) is None


def test_ledger_appends_rows(tmp_path):
    r = run(make_protocol("SDP", total=300.0))
    f = tmp_path / "ledger.csv"
    append_ledger(f, r, {"g_CaT": 1.0})
    append_ledger(f, r)
    rows = f.read_text().splitlines()
    assert len(rows) == 3 and rows[0].startswith("protocol,variant")
