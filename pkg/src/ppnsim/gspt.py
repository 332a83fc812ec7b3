"""Fast/slow/superslow decomposition along simulated trajectories.

The main objects are a :class:`Partition` of the state variables into
timescale classes, slices of the critical manifold M1 (equilibria of the
fast subsystem, slow and superslow variables frozen) and of the superslow
manifold M2 (equilibria of the fast-slow subsystem, superslow variables
frozen), and :func:`detect_crossings`, which finds the times at which a
trajectory passes through a bifurcation set of a frozen subsystem.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .continuation import (
    Branch,
    ContinuationError,
    CycleSummary,
    Shooting,
    branch_through,
    continue_cycles,
    continue_equilibria,
    join_branches,
    cycle_from_trace,
    eigen,
    find_equilibrium,
    solve_cycle,
    stability,
)
from .fields import Field, ReducedModel
from .integrate import Trace, local_maxima
from .model import ModelError, ModelSpec, numerical_jacobian, state_scale
from .nondim import CONTEXTS, context_key, long_name

SUBSYSTEMS = ("fast", "fast-slow", "full")
CROSSING_KINDS = ("AH", "fold", "SNIC", "SNPO")
STRIDE = 1.0
OSC_WINDOW = 50.0
OSC_PROMINENCE = 5.0
SNIC_PROBE = 5.0
STEP_JUMP = 1e-2  # pA/pF between dense samples: a current step
CYCLE_STRIDE = 5.0
CYCLE_SMOOTH = 25.0  # ms, about one spike period in the CT burst


@dataclass(frozen=True)
class Partition:
    """Timescale classes, by model state name (``V``, ``m_Na``, ..., ``Ca``)."""

    fast: tuple[str, ...]
    slow: tuple[str, ...]
    superslow: tuple[str, ...] = ()

    def __post_init__(self):
        for k in ("fast", "slow", "superslow"):
            object.__setattr__(self, k, tuple(_state_name(n) for n in getattr(self, k)))
        allv = self.fast + self.slow + self.superslow
        if len(set(allv)) != len(allv):
            raise ModelError("partition classes overlap")
        if "V" not in self.fast:
            raise ModelError("V must be in the fast class")

    @classmethod
    def from_dict(cls, d: Mapping[str, Sequence[str]]) -> "Partition":
        return cls(tuple(d.get("fast", ())), tuple(d.get("slow", ())), tuple(d.get("superslow", ())))

    @classmethod
    def for_context(cls, variant: str, context: str, preset: str | None = None) -> "Partition":
        ctx = CONTEXTS[context_key(variant, context)]
        return cls.from_dict(ctx.partitions[preset or ctx.default])

    def check(self, m: ModelSpec) -> "Partition":
        got = sorted(self.fast + self.slow + self.superslow)
        if got != sorted(m.state_names):
            raise ModelError(f"partition {got} does not cover the {m.variant} state {sorted(m.state_names)}")
        return self

    def frozen_for(self, subsystem: str) -> tuple[str, ...]:
        if subsystem == "fast":
            return self.slow + self.superslow
        if subsystem == "fast-slow":
            return self.superslow
        if subsystem == "full":
            return ()
        raise ValueError(f"subsystem must be one of {SUBSYSTEMS}")

    def to_dict(self) -> dict:
        return {"fast": list(self.fast), "slow": list(self.slow), "superslow": list(self.superslow)}


def _state_name(n: str) -> str:
    if n in ("V", "Ca") or "_" in n:
        return n
    return long_name(n)


def freeze(m: ModelSpec, p: Partition, values: Mapping[str, float], subsystem: str = "fast", I_app: float = 0.0) -> ReducedModel:
    """The ``subsystem`` of ``m`` with the remaining classes held at ``values``."""
    p.check(m)
    need = set(p.frozen_for(subsystem))
    values = {_state_name(k): float(v) for k, v in values.items()}
    if set(values) != need:
        missing, extra = sorted(need - set(values)), sorted(set(values) - need)
        raise ModelError(f"freeze map must give exactly {sorted(need)} (missing {missing}, unexpected {extra})")
    return ReducedModel(m, values, I_app)


def frozen_from_trace(trace: Trace, names: Sequence[str], t: float) -> dict[str, float]:
    """Values of ``names`` at time ``t`` (linear interpolation of the trace)."""
    y = trace.at(t)
    return {n: float(y[trace.names.index(n)]) for n in names}


def current_at(trace: Trace, t: float) -> float:
    return float(np.interp(t, trace.times, trace.I_app))


# ---------------------------------------------------------------------------
# manifold slices


def segments(br: Branch) -> list[tuple[bool, int, int]]:
    """Maximal runs of constant stability as (stable, first, last) index triples."""
    out = []
    s = br.stable
    a = 0
    for i in range(1, len(s) + 1):
        if i == len(s) or s[i] != s[a]:
            out.append((bool(s[a]), a, i - 1))
            a = i
    return out


@dataclass
class ManifoldSlice:
    kind: str  # "M1" | "M2"
    regime: str
    frozen: dict
    sweep: str
    sweep_range: tuple
    I_app: float
    branches: list
    time: float | None = None
    names: tuple = ()
    residual: float = 0.0

    @property
    def branch(self) -> Branch:
        return self.branches[0]

    def pieces(self) -> list[dict]:
        """The slice split into stable and unstable pieces."""
        out = []
        for br in self.branches:
            for st, a, b in segments(br):
                out.append({"stable": st, "params": br.params[a : b + 1], "states": br.states[a : b + 1]})
        return out

    def count(self) -> tuple[int, int]:
        """(stable, unstable) piece counts, ignoring single-point runs at folds."""
        ps = [p for p in self.pieces() if len(p["params"]) > 1]
        return sum(p["stable"] for p in ps), sum(not p["stable"] for p in ps)

    def special(self, kind: str | None = None) -> list[dict]:
        out = [s for br in self.branches for s in br.special if s["kind"] != "branch_end"]
        return [s for s in out if kind is None or s["kind"] == kind]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "regime": self.regime,
            "time": self.time,
            "I_app": self.I_app,
            "frozen": self.frozen,
            "sweep": self.sweep,
            "sweep_range": list(self.sweep_range),
            "residual": self.residual,
            "branches": [b.to_dict() for b in self.branches],
        }

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, default=float) + "\n")

    def to_csv(self, path):
        """Long-format CSV: param, stable, then the reduced state variables."""
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([self.sweep, "stable", *self.names])
            for br in self.branches:
                for p, s, x in zip(br.params, br.stable, br.states):
                    w.writerow([f"{p:.10g}", int(s), *(f"{v:.10g}" for v in x)])


def regime_of(I_app: float, baseline: float) -> str:
    if abs(I_app - baseline) < 1e-12:
        return "b"
    return "i" if I_app < baseline else "e"


def manifold_slice(
    m: ModelSpec,
    p: Partition,
    sweep: str,
    sweep_range: tuple[float, float],
    trace: Trace | None = None,
    t: float | None = None,
    kind: str = "M1",
    frozen: Mapping[str, float] | None = None,
    I_app: float | None = None,
    baseline: float | None = None,
    start=None,
    **cont_kw,
) -> ManifoldSlice:
    """Equilibria of the fast (M1) or fast-slow (M2) subsystem along ``sweep``.

    Frozen values are read from ``trace`` at time ``t`` unless given in
    ``frozen``; the sweep variable must be one of the frozen ones and is
    turned into the continuation parameter. The branch is continued in both
    directions from the equilibrium nearest the trajectory state.
    """
    sweep = _state_name(sweep)
    sub = {"M1": "fast", "M2": "fast-slow"}[kind]
    names = p.check(m).frozen_for(sub)
    if sweep not in names:
        raise ModelError(f"{sweep} is not frozen in {kind}; choose one of {list(names)}")
    vals = dict(frozen_from_trace(trace, names, t)) if trace is not None else {}
    vals.update({_state_name(k): float(v) for k, v in (frozen or {}).items()})
    if set(vals) != set(names):
        raise ModelError(f"{kind} slice needs frozen values for {sorted(names)}")
    if I_app is None:
        if trace is None:
            raise ModelError("I_app needed when no trace is given")
        I_app = current_at(trace, t)
    red = ReducedModel(m, vals, I_app)
    fld = red.field(sweep)
    if start is None:
        start = red.restrict(trace.at(t)) if trace is not None else red.steady_state_at(-60.0)
    try:
        x0 = find_equilibrium(fld, vals[sweep], start)
    except ContinuationError:
        eqs = red.equilibria()
        if not eqs:
            raise ContinuationError(f"no {kind} equilibrium at {sweep} = {vals[sweep]:.6g}") from None
        x0 = min(eqs, key=lambda e: abs(e[0] - start[0]))
    lo, hi = min(sweep_range), max(sweep_range)
    a = continue_equilibria(fld, (vals[sweep], lo), x0, sweep, direction=-1, **cont_kw) if vals[sweep] > lo else None
    b = continue_equilibria(fld, (vals[sweep], hi), x0, sweep, direction=+1, **cont_kw) if vals[sweep] < hi else None
    br = join_branches(a, b) if (a is not None and b is not None) else (a or b)
    res = max(float(np.max(np.abs(fld.f(x, q)))) for x, q in zip(br.states, br.params))
    frozen_out = {k: v for k, v in vals.items() if k != sweep}
    frozen_out[f"{sweep}@t"] = vals[sweep]
    base = baseline if baseline is not None else (float(trace.I_app[0]) if trace is not None else I_app)
    return ManifoldSlice(kind, regime_of(I_app, base), frozen_out, sweep, (lo, hi), float(I_app), [br], t, red.names, res)


def nullcline(m: ModelSpec, variable: str, V_grid, frozen: Mapping[str, float] | None = None) -> np.ndarray:
    """Points ``(V, x)`` of the ``variable``-nullcline.

    For a gate this is its steady state; for ``Ca`` it is the calcium
    equilibrium given the calcium current, with gates at ``frozen`` values
    (or their steady states).
    """
    variable = _state_name(variable)
    V = np.asarray(V_grid, dtype=float)
    if variable == "V":
        raise ModelError("the V-nullcline is not of relaxation form")
    if variable != "Ca":
        return np.column_stack([V, m.gate(variable).steady(V)])
    out = []
    for v in V:
        y = m.steady_state_at(v)
        for k, val in (frozen or {}).items():
            y[m.index(_state_name(k))] = val
        ca = m.calcium
        ica = sum(m.currents(y)[c] for c in m.calcium_sources)
        out.append(ca.Ca_eq - ca.t_store * ca.flux * ica)
    return np.column_stack([V, out])


def intersect_nullcline(sl: ManifoldSlice, m: ModelSpec) -> list[tuple[float, float]]:
    """Points ``(x, V)`` where a slice swept in gate ``x`` meets the x-nullcline."""
    k = m.gate(sl.sweep)
    out = []
    for br in sl.branches:
        V = br.V
        g = br.params - k.steady(V)
        for i in np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)[0]:
            w = g[i] / (g[i] - g[i + 1])
            out.append((float(br.params[i] + w * (br.params[i + 1] - br.params[i])), float(V[i] + w * (V[i + 1] - V[i]))))
    return out


# ---------------------------------------------------------------------------
# subsystem frozen along a trajectory


def _running_mean(times, values, at, width):
    """Mean of ``values`` over [t - width/2, t + width/2] (trapezoid rule, clipped to the trace)."""
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(times))])
    lo = np.clip(at - 0.5 * width, times[0], times[-1])
    hi = np.clip(at + 0.5 * width, times[0], times[-1])
    return (np.interp(hi, times, cum) - np.interp(lo, times, cum)) / np.maximum(hi - lo, 1e-12)


class TrajectoryField(Field):
    """A frozen subsystem whose frozen values follow a trajectory in time.

    The scalar parameter is time: the frozen variables and the applied
    current are linear interpolants of the trace sampled every ``stride`` ms.
    Equilibria of this field continued in ``t`` are the equilibria of the
    subsystem frozen at the trajectory's instantaneous slow state, so its
    folds and Hopf points are the times at which the trajectory crosses the
    corresponding bifurcation sets.

    With ``smooth > 0`` the frozen values are running means over ``smooth``
    ms of the trace, and the interpolant is a cubic spline. Cycle
    continuation needs this: during spiking the raw slow variables ripple
    at the spike period and the piecewise-linear path has kinks at every
    knot, which stalls Newton in ``t``.
    """

    def __init__(self, m: ModelSpec, p: Partition, trace: Trace, window, subsystem: str = "fast", stride: float = STRIDE, smooth: float = 0.0):
        names = p.check(m).frozen_for(subsystem)
        if not names:
            raise ModelError("nothing is frozen in the full system")
        t0, t1 = map(float, window)
        if not (trace.times[0] <= t0 < t1 <= trace.times[-1]):
            raise ModelError("window must lie inside the trace span")
        # current steps: sample after the jump, and the last sample before it
        jump = np.nonzero(np.abs(np.diff(trace.I_app)) > STEP_JUMP)[0]
        jump = jump[(trace.times[jump] > t0) & (trace.times[jump + 1] < t1)]
        self.steps = [(float(trace.times[k]), float(trace.times[k + 1])) for k in jump]
        knots = np.arange(t0, t1 + 0.5 * stride, stride)
        knots[-1] = min(knots[-1], t1)
        self.knots = np.unique(np.concatenate([knots, [v for st in self.steps for v in st]]))
        self.Y = np.array([[trace.at(t)[trace.names.index(n)] for n in names] for t in self.knots])
        self.I = np.interp(self.knots, trace.times, trace.I_app)
        self.spline = None
        if smooth > 0:
            cols = [trace.names.index(n) for n in names]
            self.Y = np.array([_running_mean(trace.times, trace.states[:, c], self.knots, smooth) for c in cols]).T
            self.I = _running_mean(trace.times, trace.I_app, self.knots, smooth)
            self.spline = CubicSpline(self.knots, np.column_stack([self.Y, self.I]))
        red = ReducedModel(m, dict(zip(names, self.Y[0])), self.I[0])
        super().__init__(red, names[0])
        self.frozen_names = names
        self.cols = np.array([m.index(n) for n in names])
        self.param = "t"
        self.window = (t0, t1)
        self.trace = trace
        self.subsystem = subsystem
        self.stride = stride
        self.clip = None  # restricts the interpolant to one continuous-current piece

    def pieces(self) -> list[tuple[float, float]]:
        """Sub-windows on which the applied current is continuous."""
        edges = [self.window[0]]
        out = []
        for before, after in self.steps:
            out.append((edges[-1], before))
            edges.append(after)
        out.append((edges[-1], self.window[1]))
        return [(a, b) for a, b in out if b > a]

    def _interp(self, t):
        lo, hi = self.clip or (self.knots[0], self.knots[-1])
        t = float(np.clip(t, lo, hi))
        if self.spline is not None:
            v, dv = self.spline(t), self.spline(t, 1)
            return v[:-1], v[-1], dv[:-1], dv[-1]
        j = min(int(np.searchsorted(self.knots, t, side="right")) - 1, len(self.knots) - 2)
        j = max(j, 0)
        h = self.knots[j + 1] - self.knots[j]
        w = (t - self.knots[j]) / h
        y = (1 - w) * self.Y[j] + w * self.Y[j + 1]
        I = (1 - w) * self.I[j] + w * self.I[j + 1]
        return y, I, (self.Y[j + 1] - self.Y[j]) / h, (self.I[j + 1] - self.I[j]) / h

    def full(self, x, t):
        y, I, _, _ = self._interp(t)
        z = np.empty(self.red.model.dim)
        z[self.cols] = y
        z[self.red.free_idx] = x
        return z, I

    @property
    def p0(self):
        return self.window[0]

    def f(self, x, t):
        z, I = self.full(x, t)
        return self.red.model.rhs(z, I)[self.red.free_idx]

    def fx(self, x, t):
        z, _ = self.full(x, t)
        J = self.red.model.jacobian(z)
        return J[np.ix_(self.red.free_idx, self.red.free_idx)]

    def fp(self, x, t):
        z, _ = self.full(x, t)
        _, _, dy, dI = self._interp(t)
        J = self.red.model.jacobian(z)
        d = J[np.ix_(self.red.free_idx, self.cols)] @ dy
        d[list(self.red.free).index("V")] += dI
        return d

    def at(self, t) -> ReducedModel:
        y, I, _, _ = self._interp(t)
        return ReducedModel(self.red.model, dict(zip(self.frozen_names, y)), I)

    def state(self, t) -> np.ndarray:
        """Trajectory restricted to the free variables at ``t``."""
        return self.red.restrict(self.trace.at(t))


@dataclass
class CrossingEvent:
    time: float
    kind: str
    subsystem: str
    location: dict
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"time": self.time, "kind": self.kind, "subsystem": self.subsystem, "location": self.location, "detail": self.detail}


def crossings_to_json(events: Sequence[CrossingEvent], path) -> None:
    Path(path).write_text(json.dumps([e.to_dict() for e in events], indent=2, default=float) + "\n")


def _attached(fld: TrajectoryField, t: float, tol_V: float = 1.0):
    """Stable subsystem equilibrium within ``tol_V`` of the trajectory at ``t``, else None."""
    x = fld.state(t)
    try:
        xe = find_equilibrium(fld, t, x)
    except ContinuationError:
        return None
    iV = list(fld.names).index("V")
    if abs(xe[iV] - x[iV]) > tol_V or not stability(eigen(fld, xe, t))[0]:
        return None
    return xe


def _escapes_to_oscillation(fld: TrajectoryField, x, t, duration: float = 1000.0) -> bool:
    """True if the subsystem frozen at ``t`` carries ``x`` onto a sustained oscillation."""
    from scipy.signal import find_peaks

    red = fld.at(t)
    iV = list(red.names).index("V")
    with np.errstate(all="ignore"):
        sol = solve_ivp(lambda _s, z: red.rhs(z), (0, duration), x, method="LSODA", jac=lambda _s, z: red.jacobian(z), rtol=1e-8, atol=1e-10, max_step=1.0)
    k, _ = find_peaks(sol.y[iV], prominence=OSC_PROMINENCE)
    return len(k) >= 3


def detect_crossings(
    trace: Trace,
    m: ModelSpec,
    p: Partition,
    kind: str | Sequence[str] = ("AH", "fold", "SNIC"),
    subsystem: str = "fast",
    window: tuple[float, float] | None = None,
    stride: float = STRIDE,
    cycle_start: float | None = None,
    ds_max: float = 1.0,
    cycle_ds_max: float = 5.0,
    cycle_smooth: float = CYCLE_SMOOTH,
) -> list[CrossingEvent]:
    """Times at which ``trace`` crosses bifurcation sets of a frozen subsystem.

    Equilibria of the subsystem frozen at the trajectory's slow state are
    followed in time from wherever the trajectory rests on them; an
    Andronov-Hopf point along this family is an AH crossing, a fold where
    the family ends is a SN crossing, labelled SNIC when the subsystem just
    past the fold carries the state onto an oscillation. SNPO crossings come
    from continuing in time the stable cycle of the subsystem found at
    ``cycle_start`` (default: the first oscillation peak in the window).
    """
    kinds = (kind,) if isinstance(kind, str) else tuple(kind)
    for k in kinds:
        if k not in CROSSING_KINDS:
            raise ValueError(f"unknown crossing kind {k!r}")
    window = window or (float(trace.times[0]), float(trace.times[-1]))
    fld = TrajectoryField(m, p, trace, window, subsystem, stride)
    t0, t1 = fld.window
    events: list[CrossingEvent] = []
    if {"AH", "fold", "SNIC"} & set(kinds):
        events += _equilibrium_crossings(fld, kinds, ds_max)
    if "SNPO" in kinds:
        cfld = TrajectoryField(m, p, trace, window, subsystem, stride, smooth=cycle_smooth)
        events += _cycle_crossings(cfld, cycle_start)
    events.sort(key=lambda e: e.time)
    return events


def _equilibrium_crossings(fld: TrajectoryField, kinds, ds_max) -> list[CrossingEvent]:
    out = []
    carry = None
    for a, b in fld.pieces():
        events, carry = _piece_crossings(fld, kinds, ds_max, a, b, carry)
        out += events
    return out


def _piece_crossings(fld: TrajectoryField, kinds, ds_max, t0, t1, carry):
    """Crossings on one continuous-current piece; returns (events, end state or None).

    ``carry`` is the stable equilibrium reached at the end of the previous
    piece. The equilibrium sheet is carried across the current step by a
    Newton solve at the new current, so tracking does not depend on the
    trajectory being at rest right after the step.
    """
    fld.clip = (t0, t1)
    try:
        return _piece_loop(fld, kinds, ds_max, t0, t1, carry)
    finally:
        fld.clip = None


def _piece_loop(fld, kinds, ds_max, t0, t1, carry):
    out = []
    t = t0
    x0 = None
    if carry is not None:
        x0 = _carry_across_step(fld, t0, carry)
    end_state = None
    while t < t1:
        if x0 is None:
            x0 = _attached(fld, t)
        if x0 is None:
            t += fld.stride
            continue
        try:
            br = continue_equilibria(fld, (t, t1), x0, "t", ds=0.1, ds_max=ds_max, direction=+1, p_scale=10.0)
        except ContinuationError:
            x0 = None
            t += fld.stride
            continue
        x0 = None
        stop_t = t1
        for sp in br.special:
            if sp["kind"] == "Hopf" and "AH" in kinds:
                out.append(_event(fld, sp, "AH"))
            if sp["kind"] == "fold":
                x = np.asarray(sp["state"])
                tf = sp["param"]
                # Just past a SNIC the period is long, so probe a few strides beyond the fold.
                k = "SNIC" if _escapes_to_oscillation(fld, x, min(tf + SNIC_PROBE, fld.window[1])) else "fold"
                if k in kinds or "fold" in kinds:
                    out.append(_event(fld, sp, k))
                stop_t = tf
                break
        else:
            # no fold: the family either reached the piece end or the
            # corrector gave up
            stop_t = float(br.params[-1]) if br.end_reason != "range" else t1
            if float(br.params[-1]) >= t1 - fld.stride and bool(br.stable[-1]):
                end_state = br.states[-1]
        if stop_t >= t1 - fld.stride:
            break
        t = _next_rest(fld, stop_t + fld.stride, t1)
        if t is None:
            break
    return out, end_state


def _carry_across_step(fld: TrajectoryField, t, x):
    """Stable equilibrium continuing ``x`` past a current step, if one is identifiable.

    Newton from the pre-step state first; failing that, the subsystem's only
    stable equilibrium after the step (the sheet the pre-step state lay on
    has vanished and the fast flow is attracted there).
    """
    try:
        xe = find_equilibrium(fld, t, x)
        if stability(eigen(fld, xe, t))[0]:
            return xe
    except ContinuationError:
        pass
    red = fld.at(t)
    stable = [xe for xe in red.equilibria() if np.max(np.linalg.eigvals(red.jacobian(xe)).real) < 0]
    return stable[0] if len(stable) == 1 else None


def _next_rest(fld: TrajectoryField, t, t1=None):
    t1 = fld.window[1] if t1 is None else t1
    while t < t1:
        if _attached(fld, t) is not None:
            return t
        t += fld.stride
    return None


def _event(fld: TrajectoryField, sp: dict, kind: str) -> CrossingEvent:
    x = np.asarray(sp["state"])
    z, I = fld.full(x, sp["param"])
    detail = {k: v for k, v in sp.items() if k in ("omega", "period", "takens_bogdanov_candidate")}
    detail["I_app"] = float(I)
    return CrossingEvent(float(sp["param"]), kind, fld.subsystem, fld.red.model.state_dict(z), detail)


def _cycle_crossings(fld: TrajectoryField, t_start, stride: float = CYCLE_STRIDE, tol: float = 0.5) -> list[CrossingEvent]:
    """SNPO: the time at which the subsystem's stable cycle ceases to exist.

    The cycle is tracked by integrating the subsystem frozen at successive
    times from the end state of the previous probe, so the stable orbit is
    followed as long as it exists. A loss is bracketed to ``tol`` ms by
    bisection and reported as SNPO when a stable equilibrium coexists with
    the last cycle and its period has not diverged (which would indicate a
    homoclinic or SNIC ending instead).
    """
    t0, t1 = fld.window
    if t_start is None:
        pk = [t for t in local_maxima(fld.trace, OSC_PROMINENCE) if t0 < t < t1]
        if not pk:
            return []
        t_start = pk[0]
    ok, x, T_first = _cycle_probe(fld, t_start, fld.state(t_start))
    if not ok:
        return []
    ta, xa, Ta = t_start, x, T_first
    tb = None
    t = t_start + stride
    while t <= t1:
        ok, x, T = _cycle_probe(fld, t, xa)
        if not ok:
            tb = t
            break
        ta, xa, Ta = t, x, T
        t += stride
    if tb is None:
        return []
    while tb - ta > tol:
        tm = 0.5 * (ta + tb)
        ok, x, T = _cycle_probe(fld, tm, xa)
        if ok:
            ta, xa, Ta = tm, x, T
        else:
            tb = tm
    red = fld.at(ta)
    stable_eq = [xe for xe in red.equilibria() if np.max(np.linalg.eigvals(red.jacobian(xe)).real) < 0]
    if not stable_eq or Ta > 2.0 * T_first:
        return []
    t_ev = 0.5 * (ta + tb)
    z, I = fld.full(xa, t_ev)
    return [CrossingEvent(float(t_ev), "SNPO", fld.subsystem, fld.red.model.state_dict(z), {"period": float(Ta), "I_app": float(I), "bracket": [float(ta), float(tb)]})]


def _cycle_probe(fld: TrajectoryField, t: float, x, duration: float = 150.0):
    """(sustained, end state, period) after integrating the subsystem frozen at ``t`` from ``x``."""
    from scipy.signal import find_peaks

    red = fld.at(t)
    iV = list(red.names).index("V")
    with np.errstate(all="ignore"):
        sol = solve_ivp(lambda _s, z: red.rhs(z), (0, duration), x, method="LSODA", jac=lambda _s, z: red.jacobian(z), rtol=1e-8, atol=1e-10, max_step=0.5)
    tail = sol.t >= 0.5 * duration
    k, _ = find_peaks(sol.y[iV][tail], prominence=OSC_PROMINENCE)
    if len(k) < 2:
        return False, sol.y[:, -1], None
    tp = sol.t[tail][k]
    # restart the next probe from the last peak to stay on the orbit
    j = np.nonzero(tail)[0][k[-1]]
    return True, sol.y[:, j], float(np.mean(np.diff(tp)))


# ---------------------------------------------------------------------------
# diagnostics


def oscillation_density(trace: Trace, t: float, width: float = OSC_WINDOW, prominence: float = OSC_PROMINENCE) -> tuple[int, int]:
    """Local maxima counted in the windows ``width`` ms before and after ``t``."""
    pk = np.array(local_maxima(trace, prominence))
    before = int(np.sum((pk >= t - width) & (pk < t)))
    after = int(np.sum((pk >= t) & (pk < t + width)))
    return before, after


def concordant(trace: Trace, ev: CrossingEvent, span: float = 15.0, width: float = OSC_WINDOW) -> bool:
    """True if the oscillation state changes within ``span`` ms of ``ev``."""
    for dt in np.arange(-span, span + 1e-9, 1.0):
        b, a = oscillation_density(trace, ev.time + dt, width)
        if (b == 0) != (a == 0):
            return True
    return False


class QuasiSteadyModel:
    """``m`` with some gates slaved to their steady states.

    The slaved gates stay in the state vector but track ``p_inf(V)``
    exactly, so traces keep the model's column layout.
    """

    def __init__(self, m: ModelSpec, gates: Sequence[str]):
        self.base = m
        self.gates = tuple(_state_name(g) for g in gates)
        self.idx = [m.index(g) for g in self.gates]
        self.kin = [m.gate(g) for g in self.gates]
        self.variant = m.variant
        self.state_names = m.state_names
        self.dim = m.dim
        self.calcium = m.calcium

    def slave(self, y):
        z = np.array(y, dtype=float)
        for i, k in zip(self.idx, self.kin):
            z[i] = k.steady(z[0])
        return z

    def rhs(self, y, I_app: float = 0.0):
        z = self.slave(y)
        f = self.base.rhs(z, I_app)
        h = 1e-6
        for i, k in zip(self.idx, self.kin):
            dinf = (k.steady(z[0] + h) - k.steady(z[0] - h)) / (2 * h)
            f[i] = dinf * f[0]
        return f

    def jacobian(self, y, I_app: float = 0.0):
        return numerical_jacobian(lambda z: self.rhs(z, I_app), self.slave(y), 1e-6, state_scale(self.base))


def quasi_steady_run(protocol, gates: Sequence[str], overrides=None, cfg=None):
    """Run ``protocol`` with ``gates`` slaved to steady state, from the same settled start."""
    from .integrate import integrate, settle, spike_peaks

    m = protocol.model(None, overrides)
    q = QuasiSteadyModel(m, gates)
    s = settle(m, protocol.holding_current, cfg)
    tr = integrate(q, q.slave(s.state), protocol.current, (0.0, protocol.total_duration), cfg, protocol.breakpoints)
    return tr, [t for t, _ in spike_peaks(tr)]
