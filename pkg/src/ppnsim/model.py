"""Conductance-based PPN neuron models (C, CT, NC variants).

State vectors are plain ``numpy`` arrays ordered as ``ModelSpec.state_names``:
``V`` first, then the gating variables present in the variant, then ``Ca``.
Conductances are per unit capacitance (nS/pF), so currents are in pA/pF and
dV/dt in mV/ms.
"""

from __future__ import annotations

import dataclasses
import functools
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.optimize import brentq

FARADAY = 96485.33212  # C/mol
TAU_FLOOR = 0.01  # ms

VARIANTS = ("C", "CT", "NC")
CHANNEL_NAMES = ("Na", "K", "L", "CaPQ", "KCa", "A", "CaT")

# Canonical ordering of gate ids in a state vector.
GATE_ORDER = ("m_Na", "h_Na", "m_K", "m_CaPQ", "m_A", "h_A", "m_CaT", "h_CaT")


class ModelError(ValueError):
    """Invalid model definition or model input."""


@dataclass(frozen=True)
class GateKinetics:
    """Steady state and relaxation time of one gating variable."""

    p_half: float
    k_p: float
    t0: float
    t1: float
    theta: float
    sigma0: float
    sigma1: float
    exponent: int = 1

    def __post_init__(self):
        if self.t0 < 0 or self.t1 < 0:
            raise ModelError("gate time constants must be nonnegative")
        if self.k_p == 0 or self.sigma0 == 0 or self.sigma1 == 0:
            raise ModelError("slopes must be nonzero")
        if int(self.exponent) != self.exponent or self.exponent < 1:
            raise ModelError("gate exponent must be a positive integer")

    def steady(self, V):
        return gate_steady(self, V)

    def tau(self, V, tau_floor: float = TAU_FLOOR, bounded: bool = True):
        return gate_tau(self, V, tau_floor, bounded)


def _exp(x):
    return np.exp(np.minimum(x, 700.0))


def gate_steady(k: GateKinetics, V):
    """Boltzmann steady state ``1/(1 + exp(-(V - p_half)/k_p))``."""
    return 1.0 / (1.0 + _exp(-(np.asarray(V, dtype=float) - k.p_half) / k.k_p))


def gate_tau(k: GateKinetics, V, tau_floor: float = TAU_FLOOR, bounded: bool = True):
    """Voltage-dependent relaxation time, clamped below at ``tau_floor``.

    With ``bounded`` the two-exponential expression is also confined to the
    interval spanned by ``t0`` and ``t1``. This only matters for gates whose
    denominator can fall below 1 (both ``sigma`` positive, as for h_CaT).
    """
    V = np.asarray(V, dtype=float)
    den = _exp((k.theta - V) / k.sigma0) + _exp((k.theta - V) / k.sigma1)
    raw = k.t0 + (k.t1 - k.t0) / den
    if bounded:
        raw = np.clip(raw, min(k.t0, k.t1), max(k.t0, k.t1))
    return np.maximum(raw, tau_floor)


def kca_activation(Ca, K):
    """Hill activation (exponent 4) of the calcium-gated potassium channel."""
    Ca = np.asarray(Ca, dtype=float)
    if np.any(Ca <= 0) or K <= 0:
        raise ModelError("calcium and affinity must be positive")
    r = (K / Ca) ** 4
    return 1.0 / (1.0 + r)


@dataclass(frozen=True)
class ChannelDef:
    name: str
    g: float
    E: float
    activation: GateKinetics | None = None
    inactivation: GateKinetics | None = None
    kca_affinity: float | None = None

    def __post_init__(self):
        if self.name not in CHANNEL_NAMES:
            raise ModelError(f"unknown channel {self.name!r}")
        if self.g < 0:
            raise ModelError(f"negative conductance for {self.name}")
        if self.name == "L" and (self.activation or self.inactivation):
            raise ModelError("leak carries no gates")
        if self.name == "KCa" and (self.activation or self.inactivation or self.kca_affinity is None):
            raise ModelError("KCa needs an affinity and no voltage gates")

    @property
    def gate_ids(self) -> tuple[str, ...]:
        out = []
        if self.activation is not None:
            out.append(f"m_{self.name}")
        if self.inactivation is not None:
            out.append(f"h_{self.name}")
        return tuple(out)


@dataclass(frozen=True)
class CalciumParams:
    """Calcium balance constants.

    ``flux_scale`` converts a per-capacitance calcium current (pA/pF) into a
    concentration rate (nM/ms); it plays the role of ``1/(2 F Vol)``. The
    default evaluates that expression with F in C/mol and Vol in pL taken as
    bare numbers, corresponding to a 1 pF reference capacitance.
    """

    f_Ca: float = 0.025
    t_store: float = 12.5
    Ca_eq: float = 100.0
    Vol: float = 7.238e-6
    Faraday: float = FARADAY
    flux_scale: float | None = None

    @property
    def flux(self) -> float:
        if self.flux_scale is not None:
            return self.flux_scale
        return 1.0 / (2.0 * self.Faraday * self.Vol)


@dataclass(frozen=True)
class ModelSpec:
    variant: str
    channels: tuple[ChannelDef, ...]
    calcium: CalciumParams = field(default_factory=CalciumParams)
    calcium_sources: tuple[str, ...] = ()
    tau_floor: float = TAU_FLOOR
    tau_bounded: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}")
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise ModelError("duplicate channel")
        for s in self.calcium_sources:
            if s not in names:
                raise ModelError(f"calcium source {s} not among channels")
        object.__setattr__(self, "_kernel", _Kernel(self))

    # -- structure -------------------------------------------------------
    @property
    def state_names(self) -> tuple[str, ...]:
        return self._kernel.names

    @property
    def gate_ids(self) -> tuple[str, ...]:
        return self._kernel.names[1:-1]

    @property
    def dim(self) -> int:
        return len(self._kernel.names)

    def index(self, name: str) -> int:
        try:
            return self._kernel.index[name]
        except KeyError:
            raise ModelError(f"{name!r} is not a state variable of {self.variant}") from None

    def channel(self, name: str) -> ChannelDef:
        for c in self.channels:
            if c.name == name:
                return c
        raise KeyError(name)

    def gate(self, gate_id: str) -> GateKinetics:
        kind, ch = gate_id.split("_", 1)
        c = self.channel(ch)
        k = c.activation if kind == "m" else c.inactivation
        if k is None:
            raise KeyError(gate_id)
        return k

    @property
    def g_max(self) -> float:
        return max(c.g for c in self.channels)

    # -- evaluation ------------------------------------------------------
    def rhs(self, y, I_app: float = 0.0):
        return self._kernel.rhs(np.asarray(y, dtype=float), float(I_app))

    def jacobian(self, y, I_app: float = 0.0):
        return self._kernel.jac(np.asarray(y, dtype=float))

    def currents(self, y) -> dict[str, float]:
        return self._kernel.currents(np.asarray(y, dtype=float))

    # -- derived models ---------------------------------------------------
    def with_overrides(self, overrides: Mapping[str, float] | None = None, **kw) -> "ModelSpec":
        """Return a copy with parameters replaced.

        Keys: ``g_<channel>``, ``E_<channel>``, ``<gate_id>.<field>`` (e.g.
        ``m_A.exponent``), ``K_KCa``, calcium fields (``f_Ca``, ``t_store``,
        ``Ca_eq``, ``Vol``, ``Faraday``, ``flux_scale``) and ``tau_floor``.
        """
        items = dict(overrides or {})
        items.update(kw)
        if not items:
            return self
        chans = {c.name: c for c in self.channels}
        calcium = self.calcium
        tau_floor = self.tau_floor
        tau_bounded = self.tau_bounded
        for key, val in items.items():
            if key.startswith("g_") and key[2:] in chans:
                chans[key[2:]] = dataclasses.replace(chans[key[2:]], g=float(val))
            elif key.startswith("E_") and key[2:] in chans:
                chans[key[2:]] = dataclasses.replace(chans[key[2:]], E=float(val))
            elif key == "E_Ca":
                for n in ("CaPQ", "CaT"):
                    if n in chans:
                        chans[n] = dataclasses.replace(chans[n], E=float(val))
            elif key == "K_KCa":
                chans["KCa"] = dataclasses.replace(chans["KCa"], kca_affinity=float(val))
            elif "." in key:
                gid, fld = key.split(".", 1)
                kind, ch = gid.split("_", 1)
                if ch not in chans or fld not in {f.name for f in dataclasses.fields(GateKinetics)}:
                    raise ModelError(f"unknown parameter {key!r}")
                attr = "activation" if kind == "m" else "inactivation"
                gk = getattr(chans[ch], attr)
                if gk is None:
                    raise ModelError(f"unknown parameter {key!r}")
                v = int(val) if fld == "exponent" else float(val)
                chans[ch] = dataclasses.replace(chans[ch], **{attr: dataclasses.replace(gk, **{fld: v})})
            elif key in {f.name for f in dataclasses.fields(CalciumParams)}:
                calcium = dataclasses.replace(calcium, **{key: float(val)})
            elif key == "tau_floor":
                tau_floor = float(val)
            elif key == "tau_bounded":
                tau_bounded = bool(val)
            else:
                raise ModelError(f"unknown parameter {key!r}")
        return ModelSpec(
            variant=self.variant,
            channels=tuple(chans[c.name] for c in self.channels),
            calcium=calcium,
            calcium_sources=self.calcium_sources,
            tau_floor=tau_floor,
            tau_bounded=tau_bounded,
        )

    def block(self, channels: Iterable[str]) -> "ModelSpec":
        names = {c.name for c in self.channels}
        over = {}
        for ch in channels:
            if ch not in names:
                raise ModelError(f"cannot block {ch}: not in variant {self.variant}")
            over[f"g_{ch}"] = 0.0
        return self.with_overrides(over)

    # -- state helpers ---------------------------------------------------
    def state_from(self, values: Mapping[str, float]):
        missing = set(self.state_names) - set(values)
        if missing:
            raise ModelError(f"state missing {sorted(missing)}")
        return np.array([float(values[n]) for n in self.state_names])

    def state_dict(self, y) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.state_names, y)}

    def steady_state_at(self, V: float):
        """State with every gate at its steady state for voltage ``V`` and
        calcium at its equilibrium for the resulting calcium current."""
        return self._kernel.steady_state_at(float(V))

    def is_valid_state(self, y, tol: float = 1e-9) -> bool:
        y = np.asarray(y)
        gates = y[1:-1]
        return bool(np.all(np.isfinite(y)) and np.all(gates >= -tol) and np.all(gates <= 1 + tol) and y[-1] > 0)

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        def gk(k):
            return None if k is None else dataclasses.asdict(k)

        return {
            "variant": self.variant,
            "tau_floor": self.tau_floor,
            "tau_bounded": self.tau_bounded,
            "calcium": dataclasses.asdict(self.calcium),
            "calcium_sources": list(self.calcium_sources),
            "channels": [
                {
                    "name": c.name,
                    "g": c.g,
                    "E": c.E,
                    "activation": gk(c.activation),
                    "inactivation": gk(c.inactivation),
                    "kca_affinity": c.kca_affinity,
                }
                for c in self.channels
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        def gk(x):
            return None if x is None else GateKinetics(**x)

        chans = tuple(
            ChannelDef(
                name=c["name"],
                g=float(c["g"]),
                E=float(c["E"]),
                activation=gk(c.get("activation")),
                inactivation=gk(c.get("inactivation")),
                kca_affinity=c.get("kca_affinity"),
            )
            for c in d["channels"]
        )
        return cls(
            variant=d["variant"],
            channels=chans,
            calcium=CalciumParams(**d.get("calcium", {})),
            calcium_sources=tuple(d.get("calcium_sources", ())),
            tau_floor=float(d.get("tau_floor", TAU_FLOOR)),
            tau_bounded=bool(d.get("tau_bounded", True)),
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_json(cls, path) -> "ModelSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


class _Kernel:
    """Flattened parameter arrays for fast rhs/jacobian evaluation."""

    def __init__(self, m: ModelSpec):
        present = {gid for c in m.channels for gid in c.gate_ids}
        gates = [g for g in GATE_ORDER if g in present]
        self.names = ("V", *gates, "Ca")
        self.index = {n: i for i, n in enumerate(self.names)}
        self.n = len(self.names)
        kin = []
        for gid in gates:
            kind, ch = gid.split("_", 1)
            c = next(c for c in m.channels if c.name == ch)
            kin.append(c.activation if kind == "m" else c.inactivation)
        self.kin = kin
        self.ph = np.array([k.p_half for k in kin])
        self.kp = np.array([k.k_p for k in kin])
        self.t0 = np.array([k.t0 for k in kin])
        self.t1 = np.array([k.t1 for k in kin])
        self.th = np.array([k.theta for k in kin])
        self.s0 = np.array([k.sigma0 for k in kin])
        self.s1 = np.array([k.sigma1 for k in kin])
        self.floor = m.tau_floor
        if m.tau_bounded:
            self.tlo = np.minimum(self.t0, self.t1)
            self.thi = np.maximum(self.t0, self.t1)
        else:
            self.tlo = np.full(len(kin), -np.inf)
            self.thi = np.full(len(kin), np.inf)
        ng = len(kin)
        self._A = np.concatenate([1.0 / self.kp, 1.0 / self.s0, 1.0 / self.s1])
        self._B = -np.concatenate([self.ph / self.kp, self.th / self.s0, self.th / self.s1])
        self._ng = ng
        self._gidx = np.arange(1, self.n - 1)
        # channel table: (name, g, E, act_idx, act_exp, inact_idx, inact_exp, is_kca, K)
        self.ch = []
        for c in m.channels:
            ai = self.index[f"m_{c.name}"] if c.activation is not None else -1
            ae = c.activation.exponent if c.activation is not None else 0
            hi = self.index[f"h_{c.name}"] if c.inactivation is not None else -1
            he = c.inactivation.exponent if c.inactivation is not None else 0
            self.ch.append((c.name, c.g, c.E, ai, ae, hi, he, c.name == "KCa", c.kca_affinity or 0.0))
        self.ca_sources = set(m.calcium_sources)
        cal = m.calcium
        self.fCa, self.tstore, self.Caeq, self.flux = cal.f_Ca, cal.t_store, cal.Ca_eq, cal.flux

    def _gate_exps(self, V):
        e = np.exp(np.minimum(-(self._A * V + self._B), 700.0))
        n = self._ng
        return e[:n], e[n : 2 * n], e[2 * n :]

    def gate_inf_tau(self, V, exps=None):
        ei, e0, e1 = self._gate_exps(V) if exps is None else exps
        inf = 1.0 / (1.0 + ei)
        den = e0 + e1
        tau = self.t0 + (self.t1 - self.t0) / den
        return inf, np.maximum(np.minimum(np.maximum(tau, self.tlo), self.thi), self.floor), den, tau

    def _factors(self, y, name, g, ai, ae, hi, he, is_kca, K):
        f = g
        if ai >= 0:
            f = f * y[ai] ** ae
        if hi >= 0:
            f = f * y[hi] ** he
        if is_kca:
            Ca = y[-1]
            f = f * (1.0 / (1.0 + (K / Ca) ** 4) if Ca > 0 else 0.0)
        return f

    def currents(self, y):
        V = y[0]
        out = {}
        for name, g, E, ai, ae, hi, he, is_kca, K in self.ch:
            out[name] = self._factors(y, name, g, ai, ae, hi, he, is_kca, K) * (V - E)
        return out

    def _gates(self, y):
        """Shared per-state terms: gate relaxation pieces and channel factors."""
        yl = y.tolist()
        V = yl[0]
        Ca = yl[-1]
        rows = []
        for name, g, E, ai, ae, hi, he, is_kca, K in self.ch:
            a = yl[ai] ** ae if ai >= 0 else 1.0
            h = yl[hi] ** he if hi >= 0 else 1.0
            if is_kca:
                r = (K / Ca) ** 4 if Ca > 0 else np.inf
                c = 1.0 / (1.0 + r)
                dc = 4.0 * r / (Ca * (1.0 + r) ** 2) if Ca > 0 else 0.0
            else:
                c, dc = 1.0, 0.0
            rows.append((name, g, E, ai, ae, hi, he, is_kca, a, h, c, dc))
        return yl, V, Ca, rows

    def rhs(self, y, I_app):
        yl, V, Ca, rows = self._gates(y)
        itot = 0.0
        ica = 0.0
        src = self.ca_sources
        for name, g, E, ai, ae, hi, he, is_kca, a, h, c, dc in rows:
            i = g * a * h * c * (V - E)
            itot += i
            if name in src:
                ica += i
        d = np.empty(self.n)
        d[0] = -itot + I_app
        inf, tau, _, _ = self.gate_inf_tau(V)
        d[1:-1] = (inf - y[1:-1]) / tau
        d[-1] = self.fCa * (-self.flux * ica - (Ca - self.Caeq) / self.tstore)
        return d

    def jac(self, y):
        n = self.n
        yl, V, Ca, rows = self._gates(y)
        r0 = [0.0] * n
        rc = [0.0] * n
        src = self.ca_sources
        for name, g, E, ai, ae, hi, he, is_kca, a, h, c, dc in rows:
            drive = V - E
            d = [0.0] * n
            d[0] = g * a * h * c
            if ai >= 0:
                d[ai] = g * ae * yl[ai] ** (ae - 1) * h * c * drive
            if hi >= 0:
                d[hi] = g * a * he * yl[hi] ** (he - 1) * c * drive
            if is_kca:
                d[n - 1] = g * a * h * dc * drive
            for k in range(n):
                r0[k] -= d[k]
            if name in src:
                for k in range(n):
                    rc[k] -= d[k]
        J = np.zeros((n, n))
        J[0] = r0
        J[n - 1] = np.asarray(rc) * (self.fCa * self.flux)
        exps = self._gate_exps(V)
        e0, e1 = exps[1], exps[2]
        inf, tau, den, raw = self.gate_inf_tau(V, exps)
        dinf = inf * (1.0 - inf) / self.kp
        dden = -e0 / self.s0 - e1 / self.s1
        active = (raw > self.floor) & (raw > self.tlo) & (raw < self.thi)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            # inactive entries may overflow; they are masked out
            dtau = np.where(active, -(self.t1 - self.t0) * dden / den**2, 0.0)
        p = y[1:-1]
        idx = self._gidx
        J[idx, 0] = dinf / tau - (inf - p) * dtau / tau**2
        J[idx, idx] = -1.0 / tau
        J[n - 1, n - 1] += -self.fCa / self.tstore
        return J

    def calcium_current_at(self, V):
        """Calcium current with every gate at steady state at ``V``."""
        ica = 0.0
        inf, _, _, _ = self.gate_inf_tau(V)
        y = np.empty(self.n)
        y[0] = V
        y[1:-1] = inf
        y[-1] = self.Caeq
        for name, g, E, ai, ae, hi, he, is_kca, K in self.ch:
            if name in self.ca_sources:
                ica += self._factors(y, name, g, ai, ae, hi, he, is_kca, K) * (V - E)
        return ica

    def steady_state_at(self, V):
        inf, _, _, _ = self.gate_inf_tau(V)
        y = np.empty(self.n)
        y[0] = V
        y[1:-1] = inf
        # The f_Ca factor cancels at equilibrium.
        y[-1] = self.Caeq - self.tstore * self.flux * self.calcium_current_at(V)
        return y


def channel_current(ch: ChannelDef, s: Mapping[str, float]) -> float:
    """Current through one channel for a named state (pA/pF)."""
    try:
        V = s["V"]
        f = ch.g
        if ch.activation is not None:
            f *= s[f"m_{ch.name}"] ** ch.activation.exponent
        if ch.inactivation is not None:
            f *= s[f"h_{ch.name}"] ** ch.inactivation.exponent
        if ch.kca_affinity is not None:
            f *= float(kca_activation(s["Ca"], ch.kca_affinity))
    except KeyError as exc:
        raise ModelError(f"state lacks {exc.args[0]!r} required by channel {ch.name}") from None
    return float(f * (V - ch.E))


def rhs(m: ModelSpec, y, I_app: float = 0.0):
    return m.rhs(y, I_app)


def jacobian(m: ModelSpec, y, I_app: float = 0.0):
    return m.jacobian(y, I_app)


def numerical_jacobian(f, y, h: float = 1e-6, scale=None):
    """Central-difference Jacobian of ``f`` at ``y``; ``h`` is relative to ``scale``."""
    y = np.asarray(y, dtype=float)
    scale = np.ones_like(y) if scale is None else np.asarray(scale, dtype=float)
    cols = []
    for k in range(len(y)):
        e = np.zeros_like(y)
        e[k] = h * scale[k]
        cols.append((f(y + e) - f(y - e)) / (2 * e[k]))
    return np.column_stack(cols)


def state_scale(m: ModelSpec):
    """Characteristic magnitudes used to scale state components (k_v, 1, k_ca)."""
    s = np.ones(m.dim)
    s[0] = 100.0
    s[-1] = 100.0
    return s


# ---------------------------------------------------------------------------
# canonical parameterizations (shipped as data/models/<variant>.json)


@functools.lru_cache(maxsize=None)
def _canonical(variant: str) -> str:
    return resources.files("ppnsim").joinpath("data", "models", f"{variant}.json").read_text()


def build_model(variant: str, calcium: CalciumParams | None = None, **overrides) -> ModelSpec:
    """Canonical parameterization of one PPN variant, with optional overrides."""
    if variant not in VARIANTS:
        raise ModelError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    m = ModelSpec.from_dict(json.loads(_canonical(variant)))
    if calcium is not None:
        m = dataclasses.replace(m, calcium=calcium)
    return m.with_overrides(overrides) if overrides else m


def conductance_of(m: ModelSpec, name: str) -> float:
    """Conductance of a channel, 0 if the variant lacks it."""
    try:
        return m.channel(name).g
    except KeyError:
        return 0.0


def canonical_conductance(variant: str, name: str) -> float:
    return conductance_of(build_model(variant), name)


def load_model(path_or_variant) -> ModelSpec:
    if str(path_or_variant) in VARIANTS:
        return build_model(str(path_or_variant))
    return ModelSpec.from_json(path_or_variant)


# ---------------------------------------------------------------------------
# scalar reduction of the equilibrium problem


def scalar_residual(m: ModelSpec, V: float, I_app: float) -> float:
    """dV/dt evaluated on the steady-state manifold at voltage ``V``."""
    return float(m.rhs(m.steady_state_at(V), I_app)[0])


def scalar_equilibria(m: ModelSpec, I_app: float, V_lo: float = -120.0, V_hi: float = 60.0, dV: float = 0.05):
    """All equilibria found as roots of the scalar reduction in V, sorted by V."""
    Vs = np.arange(V_lo, V_hi + dV, dV)
    r = np.array([scalar_residual(m, v, I_app) for v in Vs])
    out = []
    for i in np.nonzero(np.sign(r[:-1]) * np.sign(r[1:]) <= 0)[0]:
        if r[i] == 0.0:
            Vr = Vs[i]
        elif r[i + 1] == 0.0:
            continue
        else:
            Vr = brentq(lambda v: scalar_residual(m, v, I_app), Vs[i], Vs[i + 1], xtol=1e-13, rtol=1e-15)
        out.append(m.steady_state_at(Vr))
    return out


def rest_state(m: ModelSpec, I_app: float = 0.0):
    """Most hyperpolarized linearly stable equilibrium, or the lowest one if none is stable."""
    eqs = scalar_equilibria(m, I_app)
    if not eqs:
        raise ModelError(f"no equilibrium for {m.variant} at I_app={I_app}")
    for y in eqs:
        if np.max(np.linalg.eigvals(m.jacobian(y)).real) < 0:
            return y
    return eqs[0]

