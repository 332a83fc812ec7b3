"""Time integration of a model under a piecewise-smooth applied current."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.signal import find_peaks

from .model import ModelSpec, rest_state

SPIKE_THRESHOLD = -20.0
REFRACTORY = 2.0
SETTLE_TIME = 2000.0
SETTLE_TOL = 1e-9

CSV_COLUMNS = ("t", "V", "m_Na", "h_Na", "m_K", "m_CaPQ", "m_A", "h_A", "m_CaT", "h_CaT", "Ca", "I_app")


class IntegrationError(RuntimeError):
    """Solver failure; ``t_last`` is the last time reached with a valid state."""

    def __init__(self, msg, t_last=None, state=None):
        super().__init__(msg)
        self.t_last = t_last
        self.state = state


@dataclass(frozen=True)
class IntegratorConfig:
    """Solver settings.

    ``method`` is any ``solve_ivp`` method. LSODA switches between an Adams
    (nonstiff) and BDF (stiff) scheme on its own; ``fallback`` is used if the
    primary method fails on a segment.
    """

    rel_tol: float = 1e-8
    abs_tol: float | Sequence[float] = 1e-9
    max_step: float = 0.5
    dense_output_dt: float = 0.05
    method: str = "LSODA"
    fallback: str | None = "Radau"

    def __post_init__(self):
        if not (0 < self.rel_tol <= 1e-2):
            raise ValueError("rel_tol must lie in (0, 1e-2]")
        if self.max_step <= 0 or self.dense_output_dt <= 0:
            raise ValueError("max_step and dense_output_dt must be positive")
        if np.any(np.asarray(self.abs_tol) <= 0):
            raise ValueError("abs_tol must be positive")

    def atol_for(self, m: ModelSpec):
        a = np.asarray(self.abs_tol, dtype=float)
        if a.ndim == 0:
            # V and Ca live on ~100-unit scales, gates on ~1.
            a = float(a) * np.where(np.isin(np.arange(m.dim), (0, m.dim - 1)), 100.0, 1.0)
        elif a.shape != (m.dim,):
            raise ValueError(f"abs_tol needs {m.dim} entries")
        return a


@dataclass
class Trace:
    times: np.ndarray
    states: np.ndarray
    names: tuple[str, ...]
    I_app: np.ndarray
    events: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def var(self, name: str) -> np.ndarray:
        return self.states[:, self.names.index(name)]

    @property
    def V(self):
        return self.states[:, 0]

    def at(self, t: float) -> np.ndarray:
        """State at ``t`` by linear interpolation of the dense grid."""
        if not self.times[0] <= t <= self.times[-1]:
            raise ValueError(f"t={t} outside trace span")
        return np.array([np.interp(t, self.times, self.states[:, k]) for k in range(self.states.shape[1])])

    def window(self, t0: float, t1: float) -> "Trace":
        sel = (self.times >= t0) & (self.times <= t1)
        ev = [e for e in self.events if t0 <= e[0] <= t1]
        return Trace(self.times[sel], self.states[sel], self.names, self.I_app[sel], ev)

    # -- export ------------------------------------------------------------
    def to_csv(self, path) -> None:
        cols = [c for c in CSV_COLUMNS if c in ("t", "I_app") or c in self.names]
        idx = [self.names.index(c) for c in cols[1:-1]]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for t, y, i in zip(self.times, self.states, self.I_app):
                w.writerow([repr(float(t))] + [repr(float(y[k])) for k in idx] + [repr(float(i))])

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "t": self.times.tolist(),
            "states": self.states.tolist(),
            "I_app": self.I_app.tolist(),
            "events": [[float(t), k] for t, k in self.events],
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


def _grid(t0, t1, dt):
    n = int(np.floor((t1 - t0) / dt + 1e-9))
    g = t0 + dt * np.arange(n + 1)
    if t1 - g[-1] > 1e-9 * max(1.0, abs(t1)):
        g = np.append(g, t1)
    return g


def integrate(
    m: ModelSpec,
    y0,
    current: Callable[[float], float],
    t_span: tuple[float, float],
    cfg: IntegratorConfig | None = None,
    breakpoints: Sequence[float] = (),
    annotate: bool = True,
    threshold: float = SPIKE_THRESHOLD,
) -> Trace:
    """Integrate ``m`` from ``y0`` with applied current ``current(t)``.

    The solver is restarted at every breakpoint (discontinuity of the
    current) inside ``t_span``; output is sampled on a uniform grid of
    spacing ``cfg.dense_output_dt`` anchored at ``t_span[0]`` plus the
    breakpoints themselves.
    """
    cfg = cfg or IntegratorConfig()
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("empty time span")
    y = np.asarray(y0, dtype=float).copy()
    if y.shape != (m.dim,) or not np.all(np.isfinite(y)):
        raise ValueError("invalid initial state")
    bps = sorted({float(b) for b in breakpoints if t0 < b < t1})
    edges = [t0, *bps, t1]
    grid = _grid(t0, t1, cfg.dense_output_dt)
    grid = np.union1d(grid, np.array(bps))
    atol = cfg.atol_for(m)
    jac = m.jacobian

    ts, ys = [np.array([t0])], [y[None, :]]
    for a, b in zip(edges[:-1], edges[1:]):
        # Evaluate the current strictly inside the segment so edge values
        # never leak across a discontinuity.
        def f(t, z, _c=current, _a=a, _b=b):
            return m.rhs(z, _c(min(max(t, _a + 1e-12 * (1 + abs(_a))), _b - 1e-12 * (1 + abs(_b)))))

        seg_t = grid[(grid > a) & (grid <= b)]
        sol = _solve(f, jac, (a, b), y, seg_t, cfg, atol)
        if sol is None:
            raise IntegrationError(f"solver failed on segment [{a}, {b}]", t_last=float(ts[-1][-1]), state=ys[-1][-1])
        ts.append(sol.t)
        ys.append(sol.y.T)
        y = sol.y[:, -1].copy()
    times = np.concatenate(ts)
    states = np.concatenate(ys)
    I = np.array([current(t) for t in times])
    # At an edge, report the post-edge value.
    for b in bps:
        k = np.searchsorted(times, b)
        if k < len(times) and times[k] == b:
            I[k] = current(b + 1e-9)
    tr = Trace(times, states, tuple(m.state_names), I)
    if annotate:
        tr.events = crossing_events(tr, threshold) + [(b, "stimulus_edge") for b in bps]
        tr.events.sort(key=lambda e: e[0])
    return tr


def _solve(f, jac, span, y, t_eval, cfg, atol):
    for method in (cfg.method, cfg.fallback):
        if method is None:
            continue
        kw = dict(rtol=cfg.rel_tol, atol=atol, max_step=cfg.max_step, t_eval=t_eval)
        if method in ("LSODA", "Radau", "BDF"):
            kw["jac"] = lambda t, z: jac(z)
        try:
            sol = solve_ivp(f, span, y, method=method, **kw)
        except (ValueError, ArithmeticError):
            continue
        if sol.success and np.all(np.isfinite(sol.y)):
            return sol
    return None


def crossing_events(tr: Trace, threshold: float = SPIKE_THRESHOLD, refractory: float = REFRACTORY):
    ev = []
    V = tr.V
    above = V >= threshold
    for k in np.nonzero(~above[:-1] & above[1:])[0]:
        ev.append((_interp_cross(tr.times, V, k, threshold), "up_cross"))
    for k in np.nonzero(above[:-1] & ~above[1:])[0]:
        ev.append((_interp_cross(tr.times, V, k, threshold), "down_cross"))
    ev += [(t, "spike_peak") for t in detect_spikes(tr, threshold, refractory)]
    return sorted(ev, key=lambda e: e[0])


def _interp_cross(t, V, k, thr):
    return float(t[k] + (thr - V[k]) * (t[k + 1] - t[k]) / (V[k + 1] - V[k]))


def detect_spikes(tr: Trace, threshold: float = SPIKE_THRESHOLD, refractory: float = REFRACTORY) -> list[float]:
    """Times of the V maximum within each suprathreshold excursion.

    An excursion starts at an upward threshold crossing and ends at the next
    downward one; a peak closer than ``refractory`` to the previous one is
    merged into it.
    """
    V, t = tr.V, tr.times
    if len(V) < 2:
        return []
    above = V >= threshold
    ups = np.nonzero(~above[:-1] & above[1:])[0] + 1
    downs = np.nonzero(above[:-1] & ~above[1:])[0] + 1
    spikes: list[float] = []
    peaks_V: list[float] = []
    for u in ups:
        d = downs[downs > u]
        end = d[0] if len(d) else len(V)
        if end >= len(V) and u == len(V) - 1:
            continue
        k = u + int(np.argmax(V[u:end]))
        if end == len(V) and k == len(V) - 1:
            # still rising at the end of the trace
            continue
        tk = float(t[k])
        if spikes and tk - spikes[-1] < refractory:
            if V[k] > peaks_V[-1]:
                spikes[-1], peaks_V[-1] = tk, float(V[k])
            continue
        spikes.append(tk)
        peaks_V.append(float(V[k]))
    return spikes


def spike_peaks(tr: Trace, threshold: float = SPIKE_THRESHOLD, refractory: float = REFRACTORY):
    """(time, V) of every detected spike."""
    ts = detect_spikes(tr, threshold, refractory)
    idx = np.searchsorted(tr.times, ts)
    return [(float(tr.times[i]), float(tr.V[i])) for i in idx]


def local_maxima(tr: Trace, prominence: float = 5.0) -> np.ndarray:
    """Times of V local maxima with at least ``prominence`` mV prominence."""
    k, _ = find_peaks(tr.V, prominence=prominence)
    return tr.times[k]


@dataclass
class Settled:
    state: np.ndarray
    stationary: bool
    residual: float
    trace: Trace | None = None


def settle(
    m: ModelSpec,
    I_hold: float,
    cfg: IntegratorConfig | None = None,
    duration: float = SETTLE_TIME,
    tol: float = SETTLE_TOL,
    start=None,
    chunk: float = 250.0,
) -> Settled:
    """Hold ``m`` at ``I_hold``, starting from its resting state at zero current.

    Integration proceeds in chunks for at most ``duration`` ms; once the
    trajectory is close to an equilibrium it is polished by Newton iteration
    and accepted if the residual drops below ``tol``. Otherwise the state
    after ``duration`` ms is returned with ``stationary=False``.
    """
    from .continuation import find_equilibrium, ContinuationError

    cfg = cfg or IntegratorConfig()
    y = rest_state(m, 0.0) if start is None else np.asarray(start, dtype=float)
    t = 0.0
    const = lambda _t: I_hold  # noqa: E731
    while True:
        r = float(np.max(np.abs(m.rhs(y, I_hold))))
        if r < tol:
            return Settled(y, True, r)
        if r < 1e-3:
            try:
                z = find_equilibrium(m, I_hold, y)
            except ContinuationError:
                z = None
            if z is not None and np.max(np.abs(z - y) / _scale(m)) < 1e-2:
                ev = np.linalg.eigvals(m.jacobian(z)).real.max()
                if ev < 0:
                    return Settled(z, True, float(np.max(np.abs(m.rhs(z, I_hold)))))
        if t >= duration:
            return Settled(y, False, r)
        step = min(chunk, duration - t)
        tr = integrate(m, y, const, (t, t + step), cfg, annotate=False)
        y = tr.states[-1]
        t += step


def _scale(m):
    s = np.ones(m.dim)
    s[0] = s[-1] = 100.0
    return s
