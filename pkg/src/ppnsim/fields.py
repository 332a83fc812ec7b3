"""Vector fields with some state variables frozen as parameters.

A :class:`ReducedModel` is the restriction of a :class:`ModelSpec` to its
free variables; :class:`Field` additionally singles out one scalar parameter
(the applied current or any frozen variable) for continuation.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .model import ModelError, ModelSpec, state_scale


class ReducedModel:
    """``m`` with the variables in ``frozen`` held at fixed values."""

    def __init__(self, m: ModelSpec, frozen: Mapping[str, float] | None = None, I_app: float = 0.0):
        frozen = dict(frozen or {})
        for k in frozen:
            m.index(k)
        if "V" in frozen:
            raise ModelError("V is always a fast variable and cannot be frozen")
        self.model = m
        self.frozen = {k: float(v) for k, v in frozen.items()}
        self.I_app = float(I_app)
        self.free = tuple(n for n in m.state_names if n not in self.frozen)
        self.free_idx = np.array([m.index(n) for n in self.free])
        self.frozen_idx = {k: m.index(k) for k in self.frozen}

    @property
    def dim(self) -> int:
        return len(self.free)

    @property
    def names(self):
        return self.free

    @property
    def scale(self):
        return state_scale(self.model)[self.free_idx]

    def full_state(self, x, frozen: Mapping[str, float] | None = None):
        y = np.empty(self.model.dim)
        vals = dict(self.frozen)
        if frozen:
            vals.update(frozen)
        for k, i in self.frozen_idx.items():
            y[i] = vals[k]
        y[self.free_idx] = x
        return y

    def restrict(self, y):
        return np.asarray(y, dtype=float)[self.free_idx]

    def rhs(self, x, I_app=None, frozen=None):
        I = self.I_app if I_app is None else I_app
        return self.model.rhs(self.full_state(x, frozen), I)[self.free_idx]

    def jacobian(self, x, I_app=None, frozen=None):
        J = self.model.jacobian(self.full_state(x, frozen))
        return J[np.ix_(self.free_idx, self.free_idx)]

    def param_derivative(self, x, param: str, I_app=None, frozen=None):
        if param == "I_app":
            d = np.zeros(self.dim)
            d[self.free.index("V")] = 1.0
            return d
        J = self.model.jacobian(self.full_state(x, frozen))
        return J[self.free_idx, self.frozen_idx[param]]

    def field(self, param: str = "I_app") -> "Field":
        return Field(self, param)

    def with_values(self, I_app=None, **frozen) -> "ReducedModel":
        vals = dict(self.frozen)
        vals.update(frozen)
        return ReducedModel(self.model, vals, self.I_app if I_app is None else I_app)

    def steady_state_at(self, V: float):
        """Free variables with every free gate at its steady state for ``V``.

        A free calcium variable is put at its equilibrium for the calcium
        current of the resulting full state (which does not depend on Ca).
        """
        y = self.full_state(self.restrict(self.model.steady_state_at(V)))
        iCa = self.model.dim - 1
        if "Ca" not in self.frozen:
            ca = self.model.calcium
            ica = sum(v for k, v in self.model.currents(y).items() if k in self.model.calcium_sources)
            y[iCa] = ca.Ca_eq - ca.t_store * ca.flux * ica
        return self.restrict(y)

    def voltage_residual(self, V: float, I_app=None) -> float:
        """dV/dt along the curve of states where every other free variable is at rest."""
        x = self.steady_state_at(V)
        return float(self.rhs(x, I_app)[0])

    def equilibria(self, V_lo: float = -120.0, V_hi: float = 60.0, dV: float = 0.1, I_app=None) -> list:
        """All equilibria with V in ``[V_lo, V_hi]`` by bracketing the voltage residual."""
        from scipy.optimize import brentq

        Vs = np.arange(V_lo, V_hi + dV / 2, dV)
        r = np.array([self.voltage_residual(v, I_app) for v in Vs])
        out = []
        for i in np.nonzero(np.sign(r[:-1]) * np.sign(r[1:]) < 0)[0]:
            v = brentq(lambda u: self.voltage_residual(u, I_app), Vs[i], Vs[i + 1], xtol=1e-12)
            out.append(self.steady_state_at(v))
        return out


class Field:
    """``f(x, p)`` for a reduced model with scalar parameter ``param``."""

    def __init__(self, red: ReducedModel, param: str = "I_app"):
        if param != "I_app" and param not in red.frozen:
            raise ModelError(f"parameter {param!r} is neither I_app nor a frozen variable")
        self.red = red
        self.param = param

    @property
    def dim(self):
        return self.red.dim

    @property
    def names(self):
        return self.red.names

    @property
    def scale(self):
        return self.red.scale

    @property
    def p0(self) -> float:
        return self.red.I_app if self.param == "I_app" else self.red.frozen[self.param]

    def _kw(self, p):
        if self.param == "I_app":
            return {"I_app": p}
        return {"frozen": {self.param: p}}

    def f(self, x, p):
        return self.red.rhs(x, **self._kw(p))

    def fx(self, x, p):
        return self.red.jacobian(x, **self._kw(p))

    def fp(self, x, p):
        return self.red.param_derivative(x, self.param, **self._kw(p))

    def at(self, p) -> ReducedModel:
        if self.param == "I_app":
            return self.red.with_values(I_app=p)
        return self.red.with_values(**{self.param: p})


def as_field(obj, param: str = "I_app", I_app: float = 0.0) -> Field:
    if isinstance(obj, Field):
        return obj
    if isinstance(obj, ReducedModel):
        return obj.field(param)
    if isinstance(obj, ModelSpec):
        return ReducedModel(obj, {}, I_app).field(param)
    raise TypeError(f"cannot build a vector field from {type(obj).__name__}")
