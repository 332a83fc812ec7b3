"""Nondimensionalization, rate constants and timescale classification."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .model import ModelSpec, build_model, GateKinetics

R_NORMALIZATION = 1e-6
GAP_DECADES = 0.8
CLASSES = ("fast", "slow", "superslow")


def short_name(state_name: str) -> str:
    """Column label used in timescale tables: V -> v, Ca -> ca, m_Na -> mNa."""
    if state_name == "V":
        return "v"
    if state_name == "Ca":
        return "ca"
    return state_name.replace("_", "")


def long_name(label: str) -> str:
    if label == "v":
        return "V"
    if label == "ca":
        return "Ca"
    return f"{label[0]}_{label[1:]}"


@dataclass(frozen=True)
class Scales:
    k_v: float = 100.0
    k_ca: float = 100.0
    k_tau: float = 1000.0
    V_range: tuple[float, float] = (-92.0, 41.0)
    Ca_range: tuple[float, float] = (100.0, 300.0)
    dV: float = 0.1

    def __post_init__(self):
        if min(self.k_v, self.k_ca, self.k_tau) <= 0:
            raise ValueError("scales must be positive")
        if not (self.V_range[1] > self.V_range[0] and self.Ca_range[1] > self.Ca_range[0]):
            raise ValueError("ranges must be nonempty")


@dataclass(frozen=True)
class Context:
    """Protocol context for classification: voltage range and named partitions."""

    variant: str
    V_range: tuple[float, float]
    partitions: Mapping[str, Mapping[str, tuple[str, ...]]]
    default: str = "table"
    blocks: tuple[str, ...] = ()
    # Conductance scale behind R_v. The published tables list R_v = 50e-3 for
    # every variant, i.e. the CT/C sodium conductance, also for NC.
    g_ref: float = 50.0


def _p(fast, slow, superslow=()):
    d = {"fast": tuple(fast), "slow": tuple(slow)}
    if superslow:
        d["superslow"] = tuple(superslow)
    return d


CT_3 = _p(("v", "mNa", "mK", "mA", "hNa", "mCaPQ"), ("mCaT", "hA"), ("hCaT", "ca"))

CONTEXTS: dict[str, Context] = {
    "CT:PIR": Context("CT", (-92.0, 41.0), {"table": CT_3}),
    "CT:PIF": Context("CT", (-92.0, 41.0), {"table": CT_3}),
    "C:Delay": Context(
        "C",
        (-93.5, -60.0),
        {
            "table": _p(("v", "mNa", "mK", "mCaPQ"), ("hNa", "mA", "hA", "ca")),
            "appendix": _p(("v", "mNa", "mK", "mCaPQ", "hNa", "mA"), ("hA", "ca")),
        },
    ),
    "NC:Ramp": Context(
        "NC",
        (-63.5, -20.0),
        {"table": _p(("v", "mNa", "mK", "hNa", "mCaPQ", "mCaT"), ("hCaT", "ca"))},
        blocks=("Na",),
    ),
    "NC:SDP": Context("NC", (-70.0, 24.0), {"table": _p(("v", "mNa", "mK", "hNa", "mCaPQ"), ("mCaT", "hCaT", "ca"))}),
    "NC:PIF-1": Context(
        "NC",
        (-66.0, -45.0),
        {
            "table": _p(("v", "mNa", "mK", "hNa"), ("mCaPQ", "mCaT", "hCaT", "ca")),
            "three": _p(("v", "mNa", "mCaPQ"), ("hNa", "mK"), ("mCaT", "hCaT", "ca")),
        },
    ),
    "NC:PIF-2": Context(
        "NC",
        (-45.0, 14.0),
        {
            "table": _p(("v", "mNa", "mCaPQ"), ("mK", "hNa", "mCaT", "hCaT", "ca")),
            "three": _p(("v", "mNa", "mCaPQ"), ("hNa", "mK"), ("mCaT", "hCaT", "ca")),
        },
    ),
}


def context_key(variant: str, context: str) -> str:
    key = f"{variant}:{context}"
    if key not in CONTEXTS:
        raise KeyError(f"no timescale context {context!r} for variant {variant}; known: {sorted(CONTEXTS)}")
    return key


def gate_rate_constant(k: GateKinetics, scales: Scales, tau_floor: float = 0.01, bounded: bool = True) -> float:
    """``R_p = k_tau * max_{V in V_range} 1/t_p(V)`` on a grid of spacing ``scales.dV``."""
    lo, hi = scales.V_range
    n = int(round((hi - lo) / scales.dV))
    V = np.linspace(lo, hi, n + 1)
    return float(scales.k_tau * np.max(1.0 / k.tau(V, tau_floor, bounded)))


def calcium_constant(m: ModelSpec, scales: Scales) -> float:
    return nondim_A(m, scales) * scales.k_v * m.g_max


def nondim_A(m: ModelSpec, scales: Scales) -> float:
    """``A = 1/max{2 F Vol k_ca / k_tau, k_v g_max}`` (nA^-1 with Vol in pL and 1 pF)."""
    c = m.calcium
    return 1.0 / max(2.0 * c.Faraday * c.Vol * scales.k_ca / scales.k_tau, scales.k_v * m.g_max)


def rate_constants(m: ModelSpec, scales: Scales, g_max: float | None = None) -> dict[str, float]:
    """Unnormalized R for every state variable, keyed by table label."""
    gm = m.g_max if g_max is None else g_max
    R = {"v": gm * scales.k_tau}
    for gid in m.gate_ids:
        R[short_name(gid)] = gate_rate_constant(m.gate(gid), scales, m.tau_floor, m.tau_bounded)
    R["ca"] = calcium_constant(m, scales)
    return R


@dataclass
class TimescaleReport:
    variant: str
    context: str
    R: dict
    normalization: float
    partition: dict
    eps1: float | None
    eps2: float | None
    preset: str | None = None
    auto_partition: dict = field(default_factory=dict)
    V_range: tuple = ()
    flagged: tuple = ("ca",)
    degenerate: bool = False

    @property
    def normalized(self) -> dict:
        return {k: v * self.normalization for k, v in self.R.items()}

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "context": self.context,
            "V_range": list(self.V_range),
            "normalization": self.normalization,
            "R": self.R,
            "R_normalized_e3": {k: v * 1e3 for k, v in self.normalized.items()},
            "partition": {k: list(v) for k, v in self.partition.items()},
            "preset": self.preset,
            "auto_partition": {k: list(v) for k, v in self.auto_partition.items()},
            "eps1": self.eps1,
            "eps2": self.eps2,
            "flagged": list(self.flagged),
            "degenerate": self.degenerate,
        }

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def render(self) -> str:
        """Text table: one column per variable (sorted by R), values in units of 1e-3."""
        order = sorted(self.R, key=lambda k: -self.R[k])
        cls = {v: c for c, vs in self.partition.items() for v in vs}
        w = 10
        head = "".ljust(14) + "".join(k.rjust(w) for k in order)
        vals = "R_x (x1e-3)".ljust(14) + "".join(_fmt(self.normalized[k] * 1e3).rjust(w) for k in order)
        kinds = "class".ljust(14) + "".join(cls.get(k, "?").rjust(w) for k in order)
        lines = [f"{self.variant} / {self.context}  V in [{self.V_range[0]}, {self.V_range[1]}] mV", head, vals, kinds]
        lines.append(f"eps1 = {_fmt(self.eps1)}   eps2 = {_fmt(self.eps2)}   (ca flagged: excluded from ratio checks)")
        return "\n".join(lines)


def _fmt(x):
    if x is None:
        return "-"
    return f"{x:.3g}"


def gap_partition(R: Mapping[str, float], gap: float = GAP_DECADES) -> dict:
    """Split variables into classes at gaps of at least ``gap`` decades in log10 R."""
    order = sorted(R, key=lambda k: -R[k])
    logs = np.log10([R[k] for k in order])
    groups = [[order[0]]]
    for k, a, b in zip(order[1:], logs[:-1], logs[1:]):
        if a - b >= gap:
            groups.append([])
        groups[-1].append(k)
    names = list(CLASSES) + [f"class{i}" for i in range(len(CLASSES), len(groups))]
    return {names[i]: tuple(g) for i, g in enumerate(groups)}


def epsilons(Rn: Mapping[str, float], partition: Mapping[str, Sequence[str]]):
    """eps1 = max R over the slow class; eps2 = max R over the superslow class / eps1."""
    slow = partition.get("slow", ())
    sup = partition.get("superslow", ())
    eps1 = max(Rn[k] for k in slow) if slow else None
    eps2 = max(Rn[k] for k in sup) / eps1 if (sup and eps1) else None
    return eps1, eps2


def classify(
    m: ModelSpec | str,
    scales: Scales | None = None,
    context: str = "PIR",
    preset: str | None = None,
    partition: Mapping[str, Sequence[str]] | None = None,
    gap: float = GAP_DECADES,
    g_max: float | None = None,
) -> TimescaleReport:
    """Rate constants and a timescale partition for ``m`` in a protocol context.

    The reported partition is, in order of precedence: ``partition`` if
    given, the named ``preset`` of the context, otherwise the automatic gap
    partition. The automatic partition is always computed and reported as
    ``auto_partition``.
    """
    if isinstance(m, str):
        m = build_model(m)
    key = context_key(m.variant, context)
    ctx = CONTEXTS[key]
    scales = replace(scales or Scales(), V_range=ctx.V_range) if scales is None or scales.V_range == Scales().V_range else scales
    R = rate_constants(m, scales, ctx.g_ref if g_max is None else g_max)
    Rn = {k: v * R_NORMALIZATION for k, v in R.items()}
    auto = gap_partition(R, gap)
    used = None
    if partition is not None:
        part = {k: tuple(v) for k, v in partition.items()}
    elif preset is not None:
        part = dict(ctx.partitions[preset])
        used = preset
    else:
        part = auto
    _check_partition(part, R)
    eps1, eps2 = epsilons(Rn, part)
    return TimescaleReport(
        variant=m.variant,
        context=context,
        R=R,
        normalization=R_NORMALIZATION,
        partition=part,
        eps1=eps1,
        eps2=eps2,
        preset=used,
        auto_partition=auto,
        V_range=tuple(scales.V_range),
        flagged=("ca",) + tuple(short_name(g) for b in ctx.blocks for g in m.channel(b).gate_ids),
        degenerate=len([c for c in auto.values() if c]) < 2,
    )


def _check_partition(part, R):
    seen = [v for vs in part.values() for v in vs]
    if sorted(seen) != sorted(R):
        raise ValueError(f"partition must cover {sorted(R)} exactly once, got {sorted(seen)}")
    if "v" not in part.get("fast", ()):
        raise ValueError("v must be fast")


def partition_is_separated(rep: TimescaleReport) -> bool:
    """min R over each faster class exceeds max R over every slower class."""
    classes = [rep.partition[c] for c in CLASSES if rep.partition.get(c)]
    for a, b in zip(classes[:-1], classes[1:]):
        if min(rep.R[k] for k in a) <= max(rep.R[k] for k in b):
            return False
    return True


# ---------------------------------------------------------------------------
# dimensionless vector field


@dataclass
class NondimModel:
    """The model in variables ``(v, gates, ca)`` and time ``tau = t / k_tau``."""

    model: ModelSpec
    scales: Scales
    g_max: float
    g_bar: dict
    E_bar: dict
    tau_store: float
    ca_eq: float
    A: float

    def I_bar(self, I_app):
        return I_app / (self.scales.k_v * self.g_max)

    def to_dimensionless(self, y):
        z = np.array(y, dtype=float)
        z[0] /= self.scales.k_v
        z[-1] /= self.scales.k_ca
        return z

    def to_dimensional(self, z):
        y = np.array(z, dtype=float)
        y[0] *= self.scales.k_v
        y[-1] *= self.scales.k_ca
        return y

    def rhs(self, z, I_bar: float):
        """d/dtau of the dimensionless state.

        The voltage equation is written as ``R_v * (-sum g_bar * gates * (v - E_bar) + I_bar)``
        with ``R_v = g_max k_tau``; each gate as ``k_tau (p_inf - p) / t_p(k_v v)``;
        calcium as ``f_Ca k_tau (-(k_v g_max / k_ca) flux sum_Ca g_bar gates (v - E_bar) - (ca - ca_eq)/tau_store / k_tau)``.
        """
        m, s = self.model, self.scales
        v = z[0]
        V = v * s.k_v
        names = m.state_names
        gate = {n: z[i] for i, n in enumerate(names)}
        ca = z[-1]
        tot = 0.0
        tot_ca = 0.0
        for ch in m.channels:
            f = self.g_bar[ch.name]
            if ch.activation is not None:
                f *= gate[f"m_{ch.name}"] ** ch.activation.exponent
            if ch.inactivation is not None:
                f *= gate[f"h_{ch.name}"] ** ch.inactivation.exponent
            if ch.kca_affinity is not None:
                K = ch.kca_affinity / s.k_ca
                f *= ca**4 / (ca**4 + K**4)
            i = f * (v - self.E_bar[ch.name])
            tot += i
            if ch.name in m.calcium_sources:
                tot_ca += i
        out = np.empty_like(z)
        out[0] = s.k_tau * self.g_max * (-tot + I_bar)
        for i, n in enumerate(names[1:-1], start=1):
            k = m.gate(n)
            out[i] = s.k_tau * (k.steady(V) - z[i]) / k.tau(V, m.tau_floor, m.tau_bounded)
        c = m.calcium
        out[-1] = c.f_Ca * s.k_tau * (
            -(s.k_v * self.g_max / s.k_ca) * c.flux * tot_ca - (ca - self.ca_eq) / (self.tau_store * s.k_tau)
        )
        return out


def nondimensionalize(m: ModelSpec, scales: Scales | None = None, g_max: float | None = None) -> NondimModel:
    scales = scales or Scales()
    gm = m.g_max if g_max is None else g_max
    return NondimModel(
        model=m,
        scales=scales,
        g_max=gm,
        g_bar={c.name: c.g / gm for c in m.channels},
        E_bar={c.name: c.E / scales.k_v for c in m.channels},
        tau_store=m.calcium.t_store / scales.k_tau,
        ca_eq=m.calcium.Ca_eq / scales.k_ca,
        A=nondim_A(m, scales),
    )


def roundtrip_check(
    m: ModelSpec,
    scales: Scales,
    protocol,
    duration: float | None = None,
    rtol: float = 1e-11,
    map_scales: Scales | None = None,
) -> float:
    """Max deviation, in scaled units, between dimensional and dimensionless runs.

    Both systems start from the same settled state and are integrated with
    identical tolerances; the dimensionless solution is mapped back using
    ``map_scales`` (defaults to ``scales``; passing different scales is a
    negative control).
    """
    from scipy.integrate import solve_ivp

    from .integrate import settle

    nd = nondimensionalize(m, scales)
    back = map_scales or scales
    T = protocol.total_duration if duration is None else duration
    y0 = settle(m, protocol.holding_current).state
    t_eval = np.linspace(0.0, T, int(T / 0.5) + 1)
    bps = [b for b in protocol.breakpoints if b < T]
    edges = [0.0, *bps, T]
    ys = [y0[None, :]]
    y = y0
    for a, b in zip(edges[:-1], edges[1:]):
        sel = t_eval[(t_eval > a) & (t_eval <= b)]
        lo, hi = a, b
        sol = solve_ivp(
            lambda t, yy: m.rhs(yy, protocol.current(min(max(t, lo + 1e-12), hi - 1e-12))),
            (a, b),
            y,
            method="LSODA",
            rtol=rtol,
            atol=1e-13,
            t_eval=sel,
        )
        ys.append(sol.y.T)
        y = sol.y[:, -1]
    Y = np.concatenate(ys)
    k = scales.k_tau
    edges_tau = [e / k for e in edges]

    def Ibar(tau):
        return nd.I_bar(protocol.current(tau * k))

    zs = [nd.to_dimensionless(y0)[None, :]]
    z = nd.to_dimensionless(y0)
    for a, b in zip(edges_tau[:-1], edges_tau[1:]):
        sel = t_eval[(t_eval / k > a) & (t_eval / k <= b)] / k
        lo, hi = a, b
        sol = solve_ivp(
            lambda t, zz: nd.rhs(zz, Ibar(min(max(t, lo + 1e-15), hi - 1e-15))),
            (a, b),
            z,
            method="LSODA",
            rtol=rtol,
            atol=1e-13,
            t_eval=sel,
        )
        zs.append(sol.y.T)
        z = sol.y[:, -1]
    Z = np.concatenate(zs)
    nd_back = replace(nd, scales=back)
    Yb = np.array([nd_back.to_dimensional(r) for r in Z])
    sc = np.ones(m.dim)
    sc[0], sc[-1] = scales.k_v, scales.k_ca
    n = min(len(Y), len(Yb))
    return float(np.max(np.abs(Y[:n] - Yb[:n]) / sc))
