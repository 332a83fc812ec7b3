"""Stimulus protocols and the response metrics computed from them."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, asdict
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import curve_fit

from .integrate import (
    IntegratorConfig,
    Trace,
    detect_spikes,
    integrate,
    local_maxima,
    settle,
    spike_peaks,
    SPIKE_THRESHOLD,
    REFRACTORY,
)
from .model import ModelSpec, build_model

PROTOCOL_NAMES = ("Ramp", "SDP", "Delay", "PIR", "PIF", "Custom")
RAMP_PROMINENCE = 5.0
PIF_MODES = ("paired", "inhibition", "excitation", "reversed")


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    """Applied current on ``[t_start, t_end)``: ``level`` or ``offset + slope*(t - t_start)``."""

    t_start: float
    t_end: float
    kind: str = "step"
    level: float = 0.0
    slope: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("step", "ramp"):
            raise ProtocolError(f"unknown segment shape {self.kind!r}")
        if not self.t_end > self.t_start:
            raise ProtocolError("segment must have positive length")

    def value(self, t):
        if self.kind == "step":
            return self.level
        return self.offset + self.slope * (t - self.t_start)


@dataclass(frozen=True)
class Protocol:
    name: str
    holding_current: float
    segments: tuple[Segment, ...]
    total_duration: float
    model_variant: str
    channel_blocks: tuple[str, ...] = ()
    params: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.name not in PROTOCOL_NAMES:
            raise ProtocolError(f"unknown protocol {self.name!r}")
        if self.total_duration <= 0:
            raise ProtocolError("protocol has zero duration")
        segs = sorted(self.segments, key=lambda s: s.t_start)
        for a, b in zip(segs[:-1], segs[1:]):
            if b.t_start < a.t_end:
                raise ProtocolError("segments overlap")
        for s in segs:
            if s.t_start < 0 or s.t_end > self.total_duration + 1e-9:
                raise ProtocolError("segment outside protocol span")
        object.__setattr__(self, "segments", tuple(segs))

    def current(self, t: float) -> float:
        for s in self.segments:
            if s.t_start <= t < s.t_end:
                return s.value(t)
        return self.holding_current

    __call__ = current

    @property
    def breakpoints(self) -> list[float]:
        b = set()
        for s in self.segments:
            b.update((s.t_start, s.t_end))
        return sorted(x for x in b if 0 < x < self.total_duration)

    def model(self, base: ModelSpec | None = None, overrides: Mapping | None = None) -> ModelSpec:
        m = base if base is not None else build_model(self.model_variant)
        if overrides:
            m = m.with_overrides(overrides)
        if self.channel_blocks:
            m = m.block(self.channel_blocks)
        return m

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "holding_current": self.holding_current,
            "segments": [asdict(s) for s in self.segments],
            "total_duration": self.total_duration,
            "model_variant": self.model_variant,
            "channel_blocks": list(self.channel_blocks),
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, d) -> "Protocol":
        if "segments" not in d:
            return make_protocol(d["name"], d.get("variant"), **d.get("params", {}))
        return cls(
            name=d["name"],
            holding_current=float(d["holding_current"]),
            segments=tuple(Segment(**s) for s in d["segments"]),
            total_duration=float(d["total_duration"]),
            model_variant=d["model_variant"],
            channel_blocks=tuple(d.get("channel_blocks", ())),
            params=d.get("params", {}),
        )

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_json(cls, path) -> "Protocol":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _data(name: str) -> dict:
    txt = resources.files("ppnsim").joinpath("data", "protocols", f"{name.lower()}.json").read_text()
    return json.loads(txt)


def canonical_params(name: str, variant: str | None = None) -> tuple[str, tuple, dict, dict]:
    d = _data(name)
    variant = variant or d["variant"]
    params = dict(d["params"])
    params.update(d.get("variants", {}).get(variant, {}))
    return variant, tuple(d.get("channel_blocks", ())), params, d.get("presets", {})


def make_protocol(name: str, variant: str | None = None, preset: str | None = None, **overrides) -> Protocol:
    """Canonical protocol ``name`` with parameter overrides applied.

    Parameter names per protocol (see the JSON files under ``data/protocols``):
    Ramp: holding, slope, start, end, total. SDP: holding, step_level,
    step_start, step_duration, total. Delay: holding, inh_level, windows,
    total. PIR: holding, inh_level, inh_start, inh_duration, total. PIF:
    holding, inh_level, inh_start, inh_duration, exc_level, exc_start,
    exc_duration, total, mode (paired | inhibition | excitation | reversed).
    """
    if name not in PROTOCOL_NAMES or name == "Custom":
        raise ProtocolError(f"unknown protocol {name!r}; expected one of {PROTOCOL_NAMES[:-1]}")
    variant, blocks, p, presets = canonical_params(name, variant)
    if preset is not None:
        if preset not in presets:
            raise ProtocolError(f"protocol {name} has no preset {preset!r}")
        p.update(presets[preset])
    if "channel_blocks" in overrides:
        blocks = tuple(overrides.pop("channel_blocks"))
    unknown = set(overrides) - set(p)
    if unknown:
        raise ProtocolError(f"unknown {name} parameter(s) {sorted(unknown)}")
    p.update(overrides)
    segs = _SEGMENTS[name](p)
    return Protocol(name, float(p["holding"]), tuple(segs), float(p["total"]), variant, blocks, p)


def _ramp(p):
    if p["slope"] == 0:
        return [Segment(p["start"], p["end"], "step", level=p["holding"])]
    return [Segment(p["start"], p["end"], "ramp", slope=p["slope"], offset=p["holding"])]


def _sdp(p):
    return [Segment(p["step_start"], p["step_start"] + p["step_duration"], level=p["step_level"])]


def _delay(p):
    return [Segment(a, b, level=p["inh_level"]) for a, b in p["windows"]]


def _pir(p):
    return [Segment(p["inh_start"], p["inh_start"] + p["inh_duration"], level=p["inh_level"])]


def _pif(p):
    mode = p["mode"]
    if mode not in PIF_MODES:
        raise ProtocolError(f"PIF mode must be one of {PIF_MODES}")
    inh = (p["inh_start"], p["inh_duration"], p["inh_level"])
    exc = (p["exc_start"], p["exc_duration"], p["exc_level"])
    if mode == "reversed":
        # excitation first, inhibition after, same onsets
        inh, exc = (exc[0], inh[1], inh[2]), (inh[0], exc[1], exc[2])
    segs = []
    if mode in ("paired", "inhibition", "reversed"):
        segs.append(Segment(inh[0], inh[0] + inh[1], level=inh[2]))
    if mode in ("paired", "excitation", "reversed"):
        segs.append(Segment(exc[0], exc[0] + exc[1], level=exc[2]))
    return segs


_SEGMENTS = {"Ramp": _ramp, "SDP": _sdp, "Delay": _delay, "PIR": _pir, "PIF": _pif}


def custom_protocol(variant: str, holding: float, segments: Sequence[Segment], total: float, blocks=()) -> Protocol:
    return Protocol("Custom", float(holding), tuple(segments), float(total), variant, tuple(blocks))


# ---------------------------------------------------------------------------
# running


@dataclass
class ProtocolResult:
    protocol: Protocol
    model: ModelSpec
    trace: Trace
    settled: np.ndarray
    stationary_start: bool
    spikes: list
    isis: list
    spike_V: list
    delay_to_first_spike: float | None = None
    normalized_isis: list | None = None
    metrics: dict = field(default_factory=dict)


def run(
    protocol: Protocol,
    overrides: Mapping | None = None,
    cfg: IntegratorConfig | None = None,
    model: ModelSpec | None = None,
    threshold: float = SPIKE_THRESHOLD,
    refractory: float = REFRACTORY,
) -> ProtocolResult:
    """Settle at the holding current, apply the waveform and measure the response."""
    m = protocol.model(model, overrides)
    s = settle(m, protocol.holding_current, cfg)
    tr = integrate(m, s.state, protocol.current, (0.0, protocol.total_duration), cfg, protocol.breakpoints, threshold=threshold)
    sp = spike_peaks(tr, threshold, refractory)
    spikes = [t for t, _ in sp]
    res = ProtocolResult(
        protocol=protocol,
        model=m,
        trace=tr,
        settled=s.state,
        stationary_start=s.stationary,
        spikes=spikes,
        isis=list(np.diff(spikes)),
        spike_V=[v for _, v in sp],
    )
    res.delay_to_first_spike = _delay_after_release(protocol, spikes)
    res.metrics = _metrics(res)
    return res


def _release_time(protocol: Protocol) -> float | None:
    """Falling edge (end) of the first inhibitory segment."""
    for s in protocol.segments:
        if s.kind == "step" and s.level < protocol.holding_current:
            return s.t_end
    return None


def _delay_after_release(protocol, spikes):
    t_rel = _release_time(protocol)
    if t_rel is None:
        return None
    after = [t for t in spikes if t > t_rel]
    return float(after[0] - t_rel) if after else None


def _metrics(r: ProtocolResult) -> dict:
    p = r.protocol
    out = {"n_spikes": len(r.spikes), "stationary_start": bool(r.stationary_start)}
    if r.delay_to_first_spike is not None:
        out["delay_to_first_spike"] = r.delay_to_first_spike
    if p.name == "Ramp":
        out["onset_current"] = ramp_onset_current(r)
        curve = normalized_isi_curve(r)
        if curve is not None:
            r.normalized_isis = curve["points"]
            out["first_isi"] = curve["isis"][0]
            out["last_isi"] = curve["isis"][-1]
            out["isi_fit_residual"] = curve["fit_rms"]
    if p.name == "Delay":
        t_rel = _release_time(p)
        nxt = [s.t_start for s in p.segments if s.t_start > t_rel]
        t_end = nxt[0] if nxt else p.total_duration
        after = [t for t in r.spikes if t_rel < t < t_end]
        isi = np.diff(after)
        if len(isi) >= 2:
            out["isi_cv_after_release"] = float(np.std(isi) / np.mean(isi))
    if p.name in ("PIR", "PIF") and r.spikes:
        out["burst_duration"] = float(r.spikes[-1] - r.spikes[0])
    return out


def ramp_onset_current(r: ProtocolResult, prominence: float = RAMP_PROMINENCE) -> float | None:
    """Applied current at the first oscillation peak inside the ramp."""
    seg = [s for s in r.protocol.segments if s.kind == "ramp"]
    if not seg:
        return None
    s = seg[0]
    peaks = [t for t in local_maxima(r.trace, prominence) if s.t_start <= t < s.t_end]
    if not peaks:
        return None
    return float(s.value(peaks[0]))


def _exp_model(x, a, b, c):
    return a * np.exp(-b * x) + c


def normalized_isi_curve(r_or_peaks, window=None, prominence: float = RAMP_PROMINENCE):
    """ISIs against normalized time within the oscillatory window.

    Accepts a ProtocolResult (uses prominence-detected ramp peaks) or an
    array of peak times together with ``window``. Returns ``None`` with fewer
    than three peaks, else a dict with ``points`` [(x, isi)], ``isis``, the
    exponential fit parameters and its RMS residual.
    """
    if isinstance(r_or_peaks, ProtocolResult):
        r = r_or_peaks
        seg = [s for s in r.protocol.segments if s.kind == "ramp"]
        t0, t1 = (seg[0].t_start, seg[0].t_end) if seg else (r.trace.times[0], r.trace.times[-1])
        peaks = np.array([t for t in local_maxima(r.trace, prominence) if t0 <= t <= t1])
    else:
        peaks = np.asarray(r_or_peaks, dtype=float)
    if len(peaks) < 3:
        return None
    if window is None:
        window = (peaks[0], peaks[-1])
    w0, w1 = window
    isi = np.diff(peaks)
    x = (peaks[1:] - w0) / (w1 - w0)
    fit, rms = None, None
    try:
        if np.ptp(isi) > 1e-12 and len(isi) > 3:  # three fit parameters
            popt, _ = curve_fit(_exp_model, x, isi, p0=(isi[0] - isi[-1], 1.0, isi[-1]), maxfev=20000)
            fit = tuple(float(v) for v in popt)
            rms = float(np.sqrt(np.mean((_exp_model(x, *popt) - isi) ** 2)))
        elif np.ptp(isi) <= 1e-12:
            fit, rms = (0.0, 0.0, float(isi[0])), 0.0
    except (RuntimeError, ValueError):
        pass
    return {"points": list(zip(x.tolist(), isi.tolist())), "isis": isi.tolist(), "fit": fit, "fit_rms": rms}


def pif_verdict(
    variant: str,
    grid: Sequence[tuple[float, float]] | None = None,
    cfg: IntegratorConfig | None = None,
    overrides: Mapping | None = None,
    **protocol_overrides,
) -> dict:
    """Spike counts for inhibition only, excitation only and the pair.

    With a ``grid`` of (inh_duration, exc_duration) pairs, counts are the
    maximum over the grid for the single pulses and, for ``paired``, the
    value at the first grid entry (all paired counts are also returned).
    """
    grid = list(grid) if grid else [(None, None)]
    counts = {"inhibition_only": 0, "excitation_only": 0}
    paired = []
    for di, de in grid:
        kw = dict(protocol_overrides)
        if di is not None:
            kw.update(inh_duration=di, exc_duration=de)
        for mode, key in (("inhibition", "inhibition_only"), ("excitation", "excitation_only")):
            r = run(make_protocol("PIF", variant, mode=mode, **kw), overrides, cfg)
            counts[key] = max(counts[key], len(r.spikes))
        r = run(make_protocol("PIF", variant, mode="paired", **kw), overrides, cfg)
        paired.append(len(r.spikes))
    out = dict(counts)
    out["paired"] = paired[0]
    out["paired_grid"] = paired
    out["facilitation"] = bool(out["paired"] > 0 and out["inhibition_only"] == 0 and out["excitation_only"] == 0)
    return out


# ---------------------------------------------------------------------------
# results ledger


def overrides_hash(overrides: Mapping | None) -> str:
    blob = json.dumps(dict(overrides or {}), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def append_ledger(path, result: ProtocolResult, overrides: Mapping | None = None) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["protocol", "variant", "overrides_hash", "metrics"])
        w.writerow(
            [
                result.protocol.name,
                result.protocol.model_variant,
                overrides_hash(overrides),
                json.dumps(result.metrics, sort_keys=True),
            ]
        )
