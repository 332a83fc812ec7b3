"""Equilibrium and periodic-orbit continuation with bifurcation detection.

Everything here works on a :class:`~ppnsim.fields.Field`, i.e. a vector
field ``f(x, p)`` with a scalar parameter. Plain ``ModelSpec`` objects are
accepted wherever a field is expected and are continued in ``I_app``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field as dfield
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .fields import Field, ReducedModel, as_field

MARGINAL = 1e-7
HOPF_TOL = 1e-9
HOPF_MIN_IMAG = 1e-4
TB_IMAG = 1e-3
PERIOD_BLOWUP = 50.0
SNIC_PROXIMITY = 1e-2


class ContinuationError(RuntimeError):
    def __init__(self, msg, condition=None):
        super().__init__(msg)
        self.condition = condition


# ---------------------------------------------------------------------------
# equilibria


def find_equilibrium(model, I_app=None, guess=None, tol: float = 1e-10, max_iter: int = 60, param="I_app"):
    """Damped Newton iteration for ``f(x, p) = 0``.

    ``model`` may be a ModelSpec, ReducedModel or Field; ``I_app`` is the
    parameter value (defaults to the field's own).
    """
    fld = as_field(model, param)
    p = fld.p0 if I_app is None else float(I_app)
    x = np.array(guess, dtype=float) if guess is not None else _default_guess(fld, p)
    with np.errstate(all="ignore"):
        return _newton(fld, x, p, tol, max_iter)


def _newton(fld, x, p, tol, max_iter):
    F = fld.f(x, p)
    nF = np.max(np.abs(F))
    for _ in range(max_iter):
        if nF < tol:
            return x
        J = fld.fx(x, p)
        if not np.all(np.isfinite(J)):
            raise ContinuationError("Newton iterate left the domain of the model")
        try:
            dx = np.linalg.solve(J, -F)
            c = np.linalg.cond(J)
        except np.linalg.LinAlgError:
            raise ContinuationError("singular Jacobian", condition=np.inf) from None
        if not np.isfinite(c) or c > 1e15:
            raise ContinuationError(f"singular Jacobian (cond {c:.3g})", condition=c)
        lam = 1.0
        while True:
            xn = x + lam * dx
            Fn = fld.f(xn, p)
            nn = np.max(np.abs(Fn))
            if np.isfinite(nn) and nn <= (1 - 1e-4 * lam) * nF:
                break
            lam *= 0.5
            if lam < 1e-8:
                # Accept the full step if no decrease direction is found:
                # near the solution roundoff can dominate.
                xn, Fn, nn = x + dx, fld.f(x + dx, p), np.max(np.abs(fld.f(x + dx, p)))
                break
        x, F, nF = xn, Fn, nn
    if nF < tol:
        return x
    raise ContinuationError(f"Newton did not converge (residual {nF:.3g})")


def _default_guess(fld: Field, p):
    red = fld.at(p)
    return red.steady_state_at(-60.0)


def eigen(fld: Field, x, p):
    return np.linalg.eigvals(fld.fx(x, p))


def stability(ev) -> tuple[bool, bool]:
    """(stable, marginal) from eigenvalues."""
    r = float(np.max(np.real(ev)))
    return r < -MARGINAL, abs(r) < MARGINAL


@dataclass
class Branch:
    kind: str  # "equilibrium" | "limit_cycle"
    param: str
    params: np.ndarray
    states: np.ndarray
    stable: np.ndarray
    eig: list
    special: list = dfield(default_factory=list)
    names: tuple = ()
    periods: np.ndarray | None = None
    V_min: np.ndarray | None = None
    V_max: np.ndarray | None = None
    samples: list | None = None
    end_reason: str = ""

    def __len__(self):
        return len(self.params)

    def of_kind(self, kind: str):
        return [s for s in self.special if s["kind"] == kind]

    @property
    def V(self):
        return self.states[:, list(self.names).index("V")]

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "param": self.param,
            "names": list(self.names),
            "params": np.asarray(self.params).tolist(),
            "states": np.asarray(self.states).tolist(),
            "stable": [bool(s) for s in self.stable],
            "eig_real": [np.real(e).tolist() for e in self.eig],
            "eig_imag": [np.imag(e).tolist() for e in self.eig],
            "special": [_jsonable(s) for s in self.special],
            "end_reason": self.end_reason,
        }
        if self.kind == "limit_cycle":
            d.update(period=self.periods.tolist(), V_min=self.V_min.tolist(), V_max=self.V_max.tolist())
        return d

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def to_csv(self, path):
        marks = {s["index"]: s["kind"] for s in self.special}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.kind == "equilibrium":
                w.writerow([self.param, "V", "stable", "special"])
                for i, (p, v, s) in enumerate(zip(self.params, self.V, self.stable)):
                    w.writerow([repr(float(p)), repr(float(v)), int(s), marks.get(i, "")])
            else:
                w.writerow([self.param, "V_min", "V_max", "period", "stable", "special"])
                for i in range(len(self)):
                    w.writerow(
                        [
                            repr(float(self.params[i])),
                            repr(float(self.V_min[i])),
                            repr(float(self.V_max[i])),
                            repr(float(self.periods[i])),
                            int(self.stable[i]),
                            marks.get(i, ""),
                        ]
                    )


def branch_filename(variant: str, subsystem: str, param: str) -> str:
    return f"{variant}_{subsystem}_{param}.branch.json"


def _jsonable(o):
    if isinstance(o, dict):
        return {k: _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (complex, np.complexfloating)):
        return [float(o.real), float(o.imag)]
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    return o


class _Arclength:
    """Scaled coordinates ``u = (x / sx, p / sp)`` for one field."""

    def __init__(self, fld: Field, p_scale=1.0):
        self.fld = fld
        self.sx = fld.scale
        self.sp = p_scale
        self.n = fld.dim

    def split(self, u):
        return u[:-1] * self.sx, u[-1] * self.sp

    def join(self, x, p):
        return np.append(np.asarray(x) / self.sx, p / self.sp)

    def G(self, u):
        x, p = self.split(u)
        return self.fld.f(x, p)

    def DG(self, u):
        x, p = self.split(u)
        return np.column_stack([self.fld.fx(x, p) * self.sx, self.fld.fp(x, p) * self.sp])

    def tangent(self, u, prev=None):
        A = self.DG(u)
        if prev is None:
            # null vector by SVD
            v = np.linalg.svd(A)[2][-1]
        else:
            v = np.linalg.solve(np.vstack([A, prev]), np.append(np.zeros(self.n), 1.0))
        v = v / np.linalg.norm(v)
        if prev is not None and v @ prev < 0:
            v = -v
        return v

    def correct(self, u, v, tol=1e-10, max_iter=12):
        """Moore-Penrose corrector; returns (u, v, iterations) or None."""
        for k in range(max_iter):
            A = self.DG(u)
            B = np.vstack([A, v])
            R = np.append(self.G(u), 0.0)
            try:
                du = np.linalg.solve(B, R)
                dv = np.linalg.solve(B, np.append(A @ v, 0.0))
            except np.linalg.LinAlgError:
                return None
            u = u - du
            v = v - dv
            v = v / np.linalg.norm(v)
            if not np.all(np.isfinite(u)):
                return None
            if np.linalg.norm(du) < tol and np.max(np.abs(self.G(u))) < tol:
                return u, v, k + 1
        if np.max(np.abs(self.G(u))) < tol:
            return u, v, max_iter
        return None

    def correct_on_plane(self, u_pred, normal, tol=1e-11, max_iter=20):
        """Newton on ``G(u)=0, normal.(u - u_pred)=0``."""
        u = u_pred.copy()
        for _ in range(max_iter):
            R = np.append(self.G(u), normal @ (u - u_pred))
            B = np.vstack([self.DG(u), normal])
            try:
                du = np.linalg.solve(B, R)
            except np.linalg.LinAlgError:
                return None
            u = u - du
            if np.linalg.norm(du) < tol * 1e-1 and np.max(np.abs(self.G(u))) < tol:
                break
        return u if np.max(np.abs(self.G(u))) < 1e-8 else None


def continue_equilibria(
    model,
    p_range: tuple[float, float],
    start=None,
    param: str = "I_app",
    ds: float = 1e-3,
    ds_min: float = 1e-6,
    ds_max: float = 1e-1,
    max_points: int = 20000,
    direction: int | None = None,
    p_scale: float = 1.0,
    refine: bool = True,
) -> Branch:
    """Pseudo-arclength continuation of equilibria of ``model`` in ``param``.

    ``start`` is an equilibrium (or a nearby guess) at ``p_range[0]``; the
    branch is followed until the parameter leaves ``p_range``. Folds are
    detected by a sign change of the parameter component of the tangent,
    Andronov-Hopf points by a complex pair changing half plane; both are
    refined by root finding along the branch.
    """
    fld = as_field(model, param)
    lo, hi = min(p_range), max(p_range)
    p0 = float(p_range[0])
    x0 = find_equilibrium(fld, p0, start)
    al = _Arclength(fld, p_scale)
    u = al.join(x0, p0)
    v = al.tangent(u)
    if direction is None:
        direction = 1 if p_range[1] >= p_range[0] else -1
    if np.sign(v[-1]) != direction and v[-1] != 0:
        v = -v
    us, vs = [u], [v]
    end = "max_points"
    while len(us) < max_points:
        res = None
        while ds >= ds_min:
            res = al.correct(u + ds * v, v)
            if res is not None:
                un, vn, it = res
                step = np.linalg.norm(un - u)
                if step < 3 * ds and vn @ v > 0.5:
                    break
            res = None
            ds *= 0.5
        if res is None:
            end = "step_failure"
            break
        un, vn, it = res
        if vn @ v < 0:
            vn = -vn
        u, v = un, vn
        us.append(u)
        vs.append(v)
        if it <= 3:
            ds = min(ds * 1.5, ds_max)
        elif it >= 7:
            ds = max(ds * 0.5, ds_min)
        p = u[-1] * p_scale
        if p < lo - 1e-12 or p > hi + 1e-12:
            end = "range"
            break
    U = np.array(us)
    X = U[:, :-1] * al.sx
    P = U[:, -1] * p_scale
    eig = [eigen(fld, x, p) for x, p in zip(X, P)]
    stab = np.array([stability(e)[0] for e in eig])
    br = Branch("equilibrium", param, P, X, stab, eig, names=fld.names, end_reason=end)
    _detect_equilibrium_specials(al, br, np.array(vs), refine)
    return br


def _hopf_count(ev):
    c = ev[np.abs(ev.imag) > 1e-10]
    return int(np.sum(c.real > 0))


def _nearest_pair(ev):
    c = ev[np.abs(ev.imag) > 1e-10]
    if len(c) == 0:
        return None
    return c[np.argmin(np.abs(c.real))]


def _detect_equilibrium_specials(al: _Arclength, br: Branch, V, refine: bool):
    U = np.column_stack([br.states / al.sx, br.params / al.sp])
    for i in range(len(br) - 1):
        if np.sign(V[i, -1]) != np.sign(V[i + 1, -1]) and V[i, -1] != 0:
            sp = {"index": i + 1, "kind": "fold", "param": float(br.params[i + 1]), "state": br.states[i + 1].tolist()}
            if refine:
                r = _refine(al, U[i], U[i + 1], lambda u: al.tangent(u, V[i])[-1])
                if r is not None:
                    x, p = al.split(r)
                    sp.update(param=float(p), state=x.tolist(), refined=True)
            br.special.append(sp)
        na, nb = _hopf_count(br.eig[i]), _hopf_count(br.eig[i + 1])
        if na != nb and abs(na - nb) % 2 == 0:
            sp = {"index": i + 1, "kind": "Hopf", "param": float(br.params[i + 1]), "state": br.states[i + 1].tolist()}
            if refine:

                def h(u):
                    x, p = al.split(u)
                    lam = _nearest_pair(eigen(al.fld, x, p))
                    return lam.real if lam is not None else np.nan

                r = _refine(al, U[i], U[i + 1], h)
                if r is not None:
                    x, p = al.split(r)
                    lam = _nearest_pair(eigen(al.fld, x, p))
                    sp.update(param=float(p), state=x.tolist(), refined=True, eigenvalue=complex(lam))
                    sp["omega"] = float(abs(lam.imag))
                    if abs(lam.imag) < TB_IMAG:
                        sp["takens_bogdanov_candidate"] = True
            br.special.append(sp)
    br.special.sort(key=lambda s: s["index"])


def _refine(al: _Arclength, ua, ub, fn, tol=1e-13):
    """Root of ``fn`` along the branch segment between ``ua`` and ``ub``."""
    normal = (ub - ua) / np.linalg.norm(ub - ua)
    cache = {}

    def point(s):
        if s not in cache:
            cache[s] = al.correct_on_plane(ua + s * (ub - ua), normal)
        return cache[s]

    def g(s):
        u = point(s)
        if u is None:
            raise ContinuationError("refinement corrector failed")
        return fn(u)

    try:
        ga, gb = g(0.0), g(1.0)
        if not (np.isfinite(ga) and np.isfinite(gb)) or np.sign(ga) == np.sign(gb):
            return None
        s = brentq(g, 0.0, 1.0, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=200)
    except (ContinuationError, ValueError):
        return None
    return point(s)


def branch_through(model, p_range, start=None, param="I_app", **kw) -> Branch:
    """Continue in both directions from ``start`` and join the two halves."""
    fld = as_field(model, param)
    a = continue_equilibria(fld, (p_range[0], p_range[1]), start, param, direction=-1, **kw)
    b = continue_equilibria(fld, (p_range[0], p_range[1]), start, param, direction=+1, **kw)
    return join_branches(a, b)


def join_branches(a: Branch, b: Branch) -> Branch:
    n = len(a)
    idx = slice(None, None, -1)
    spec = [dict(s, index=n - 1 - s["index"]) for s in a.special] + [dict(s, index=s["index"] + n - 1) for s in b.special]
    return Branch(
        "equilibrium",
        a.param,
        np.concatenate([a.params[idx], b.params[1:]]),
        np.concatenate([a.states[idx], b.states[1:]]),
        np.concatenate([a.stable[idx], b.stable[1:]]),
        a.eig[idx] + b.eig[1:],
        sorted(spec, key=lambda s: s["index"]),
        names=a.names,
        end_reason=f"{a.end_reason}/{b.end_reason}",
    )


# ---------------------------------------------------------------------------
# periodic orbits by single shooting


@dataclass
class CycleSummary:
    period: float
    V_min: float
    V_max: float
    x0: np.ndarray
    samples: np.ndarray
    multipliers: np.ndarray
    stable: bool
    residual: float


class Shooting:
    """Flow map and its derivatives for one field.

    The default DOP853 suits the variational system along an orbit, which
    is not stiff at the tolerances used; the implicit methods are one to
    two orders of magnitude slower here.
    """

    def __init__(self, fld: Field, rtol=1e-10, atol=1e-12, method="DOP853"):
        self.fld = fld
        self.rtol, self.atol, self.method = rtol, atol, method
        self.n = fld.dim

    def flow(self, x0, T, p, n_samples=0):
        n = self.n
        fld = self.fld

        def f(t, z):
            x = z[:n]
            J = fld.fx(x, p)
            Phi = z[n : n + n * n].reshape(n, n)
            psi = z[n + n * n :]
            return np.concatenate([fld.f(x, p), (J @ Phi).ravel(), J @ psi + fld.fp(x, p)])

        def jac(t, z):
            J = fld.fx(z[:n], p)
            return np.kron(np.eye(n + 2), J)

        z0 = np.concatenate([x0, np.eye(n).ravel(), np.zeros(n)])
        te = np.linspace(0, T, n_samples) if n_samples else None
        kw = {"jac": jac} if self.method in ("LSODA", "Radau", "BDF") else {}
        sol = solve_ivp(f, (0.0, T), z0, method=self.method, rtol=self.rtol, atol=self.atol, t_eval=te, **kw)
        if not sol.success:
            raise ContinuationError(f"flow integration failed: {sol.message}")
        zT = sol.y[:, -1]
        xT = zT[:n]
        M = zT[n : n + n * n].reshape(n, n)
        dp = zT[n + n * n :]
        samples = sol.y[:n].T if n_samples else None
        return xT, M, dp, samples

    def orbit(self, x0, T, p, n=400):
        fld = self.fld
        sol = solve_ivp(
            lambda t, x: fld.f(x, p),
            (0, T),
            x0,
            method=self.method,
            rtol=self.rtol,
            atol=self.atol,
            t_eval=np.linspace(0, T, n),
            jac=(lambda t, x: fld.fx(x, p)) if self.method in ("LSODA", "Radau", "BDF") else None,
        )
        return sol.y.T


def _summary(sh: Shooting, x0, T, p, M, residual, iV):
    mult = np.linalg.eigvals(M)
    k = np.argmin(np.abs(mult - 1.0))
    nontriv = np.delete(mult, k)
    stable = bool(np.all(np.abs(nontriv) < 1.0))
    S = sh.orbit(x0, T, p)
    return CycleSummary(float(T), float(S[:, iV].min()), float(S[:, iV].max()), x0.copy(), S, mult, stable, residual)


def solve_cycle(model, x0, T, p=None, param="I_app", tol=1e-8, max_iter=30, sh: Shooting | None = None) -> CycleSummary:
    """Periodic orbit at a fixed parameter by Newton shooting on (x0, T)."""
    fld = as_field(model, param)
    p = fld.p0 if p is None else float(p)
    sh = sh or Shooting(fld)
    n = fld.dim
    iV = list(fld.names).index("V")
    x = np.array(x0, dtype=float)
    T = float(T)
    # Phase: fix V at its starting value (a Poincare section through x0).
    for _ in range(max_iter):
        xT, M, _, _ = sh.flow(x, T, p)
        R = xT - x
        res = float(np.max(np.abs(R)))
        if res < tol:
            return _summary(sh, x, T, p, M, res, iV)
        A = np.zeros((n + 1, n + 1))
        A[:n, :n] = M - np.eye(n)
        A[:n, n] = fld.f(xT, p)
        A[n, iV] = 1.0
        try:
            d = np.linalg.solve(A, -np.append(R, 0.0))
        except np.linalg.LinAlgError:
            raise ContinuationError("singular shooting matrix") from None
        lam = 1.0
        while lam > 1e-3:
            ok = T + lam * d[n] > 0
            if ok:
                break
            lam *= 0.5
        x = x + lam * d[:n]
        T = T + lam * d[n]
    raise ContinuationError(f"shooting did not converge (residual {res:.3g})")


def cycle_from_trace(times, states, names, t_from=None):
    """(x0, period) guess from the last two V maxima of a simulated orbit."""
    from scipy.signal import find_peaks

    iV = list(names).index("V")
    V = states[:, iV]
    k, _ = find_peaks(V, prominence=1.0)
    if t_from is not None:
        k = k[times[k] >= t_from]
    if len(k) < 3:
        raise ContinuationError("trace does not contain an orbit")
    a, b = k[-2], k[-1]
    return states[a].copy(), float(times[b] - times[a])


def continue_cycles(
    model,
    p_range,
    start: CycleSummary | dict,
    param: str = "I_app",
    ds: float = 1e-2,
    ds_min: float = 1e-6,
    ds_max: float = 0.2,
    max_points: int = 400,
    direction: int = +1,
    hopf_period: float | None = None,
    folds=(),
    period_blowup: float = PERIOD_BLOWUP,
    snic_proximity: float = SNIC_PROXIMITY,
    sh: Shooting | None = None,
    newton_tol: float | None = None,
    residual_tol: float | None = None,
) -> Branch:
    """Pseudo-arclength continuation of periodic orbits.

    ``start`` is either a converged :class:`CycleSummary` at ``p_range[0]`` or
    a Hopf special point (dict with ``param``, ``state``) from which the family
    is started along the critical eigenvector. Unknowns are ``(x0, T, p)``
    with a Poincare phase condition on V. The branch stops when the parameter
    leaves ``p_range``, at period blow-up (reported as SNIC when an
    equilibrium fold in ``folds`` lies within ``snic_proximity`` of the orbit
    in scaled coordinates), or on shooting failure. ``newton_tol`` (step norm) and
    ``residual_tol`` (periodicity residual) default to 10 and 100 times the
    shooting rtol; tighter values than the integrator delivers stall the
    corrector.
    """
    fld = as_field(model, param)
    sh = sh or Shooting(fld)
    newton_tol = 10 * sh.rtol if newton_tol is None else newton_tol
    residual_tol = 100 * sh.rtol if residual_tol is None else residual_tol
    n = fld.dim
    iV = list(fld.names).index("V")
    sx = fld.scale
    lo, hi = min(p_range), max(p_range)

    if isinstance(start, dict):
        xH = np.asarray(start["state"], dtype=float)
        pH = float(start["param"])
        J = fld.fx(xH, pH)
        ev, W = np.linalg.eig(J)
        k = np.argmin(np.abs(ev.real) + 1e6 * (np.abs(ev.imag) < 1e-8))
        w = abs(ev[k].imag)
        q = W[:, k]
        # Fix the eigenvector phase so Re(q) and Im(q) are orthogonal in
        # scaled coordinates. The predictor xH + a Re(q) then lies on the
        # phase section of the first corrector, whose normal is the initial
        # velocity along Im(q) (f itself vanishes at the Hopf point).
        qs = q / sx
        u, v = np.real(qs), np.imag(qs)
        qs = qs * np.exp(0.5j * np.arctan2(-2 * (u @ v), u @ u - v @ v))
        if np.real(qs)[iV] < 0:
            qs = -qs
        qr = np.real(qs) * sx / np.linalg.norm(np.real(qs))
        phase_dir = np.imag(qs) / (np.linalg.norm(np.imag(qs)) * sx)
        T0 = 2 * np.pi / w
        hopf_period = hopf_period or T0
        # Predictor: grow the amplitude along Re(q).
        x = xH.copy()
        T = T0
        p = pH
        tang = np.concatenate([qr / sx, [0.0, 0.0]])
        amp0 = ds
        z = np.concatenate([x / sx, [T / hopf_period, p]])
        z_pred = z + amp0 * tang
        first = True
    else:
        x, T, p = start.x0.copy(), start.period, float(p_range[0])
        hopf_period = hopf_period or T
        z = np.concatenate([x / sx, [T / hopf_period, p]])
        tang = None
        first = False
        phase_dir = np.eye(n)[iV]

    Ts = hopf_period

    def unpack(z):
        return z[:n] * sx, z[n] * Ts, z[n + 1]

    def F_and_DF(z, zref, tangent):
        x, T, p = unpack(z)
        xT, M, dp, _ = sh.flow(x, T, p)
        R = xT - x
        xr = zref[:n] * sx
        fr = fld.f(xr, zref[n + 1])
        # phase condition: scaled inner product with the reference velocity
        dphase = fr / sx**2 if np.linalg.norm(fr) > 1e-12 else phase_dir
        phase = dphase @ (x - xr)
        F = np.concatenate([R, [phase]])
        D = np.zeros((n + 1, n + 2))
        D[:n, :n] = (M - np.eye(n)) * sx
        D[:n, n] = fld.f(xT, p) * Ts
        D[:n, n + 1] = dp
        D[n, :n] = dphase * sx
        return F, D, M, R

    def tangent_of(D, prev):
        if prev is None:
            t = np.linalg.svd(D)[2][-1]
        else:
            t = np.linalg.solve(np.vstack([D, prev]), np.append(np.zeros(n + 1), 1.0))
        t /= np.linalg.norm(t)
        if prev is not None and t @ prev < 0:
            t = -t
        return t

    def corrector(z_pred, zref, tangent, tol=newton_tol, it_max=15):
        z = z_pred.copy()
        for k in range(it_max):
            F, D, M, R = F_and_DF(z, zref, tangent)
            B = np.vstack([D, tangent])
            rhs = np.append(F, tangent @ (z - z_pred))
            try:
                dz = np.linalg.solve(B, rhs)
            except np.linalg.LinAlgError:
                return None
            z = z - dz
            if z[n] <= 0 or not np.all(np.isfinite(z)):
                return None
            if np.linalg.norm(dz) < tol:
                F, D, M, R = F_and_DF(z, zref, tangent)
                if np.max(np.abs(R)) < residual_tol:
                    return z, D, M, k + 1
        return None

    pts, Ms, Ds, ts = [], [], [], []
    if first:
        # first point: corrector from the Hopf predictor, plane normal = tang
        res = corrector(z_pred, z, tang)
        if res is None:
            raise ContinuationError("could not start cycle family at Hopf point")
        z, D, M, _ = res
        tang = tangent_of(D, tang)
        if np.sign(tang[n + 1]) != direction and abs(tang[n + 1]) > 1e-12:
            pass  # family direction is dictated by the Hopf side
    else:
        # polish the start with fixed p
        F, D, M, R = F_and_DF(z, z, np.zeros(n + 2))
        tang = tangent_of(D, None)
        if np.sign(tang[n + 1]) != direction and tang[n + 1] != 0:
            tang = -tang
    pts.append(z)
    Ms.append(M)
    ts.append(tang)
    end = "max_points"
    while len(pts) < max_points:
        res = None
        while ds >= ds_min:
            res = corrector(z + ds * tang, z, tang)
            if res is not None and np.linalg.norm(res[0] - z) < 3 * ds:
                break
            res = None
            ds *= 0.5
        if res is None:
            end = "shooting_failure"
            break
        zn, D, M, it = res
        tn = tangent_of(D, tang)
        z, tang = zn, tn
        pts.append(z)
        Ms.append(M)
        ts.append(tang)
        ds = min(ds * 1.4, ds_max) if it <= 4 else max(ds * 0.6, ds_min)
        _, T, p = unpack(z)
        if p < lo - 1e-12 or p > hi + 1e-12:
            end = "range"
            break
        if T > period_blowup * hopf_period:
            end = "period_blowup"
            break

    X = np.array([unpack(z)[0] for z in pts])
    T = np.array([unpack(z)[1] for z in pts])
    P = np.array([unpack(z)[2] for z in pts])
    summaries = [_summary(sh, x, t, p, M, 0.0, iV) for x, t, p, M in zip(X, T, P, Ms)]
    br = Branch(
        "limit_cycle",
        param,
        P,
        X,
        np.array([s.stable for s in summaries]),
        [s.multipliers for s in summaries],
        names=fld.names,
        periods=T,
        V_min=np.array([s.V_min for s in summaries]),
        V_max=np.array([s.V_max for s in summaries]),
        samples=[s.samples for s in summaries],
        end_reason=end,
    )
    tp = np.array(ts)[:, n + 1]
    for i in range(len(br) - 1):
        if np.sign(tp[i]) != np.sign(tp[i + 1]) and tp[i] != 0:
            br.special.append({"index": i + 1, "kind": "SNPO", "param": float(P[i + 1]), "period": float(T[i + 1])})
    if end == "period_blowup":
        kind = "branch_end"
        S = br.samples[-1]
        for fp in folds:
            xf = np.asarray(fp["state"]) / sx
            d = np.min(np.linalg.norm(S / sx - xf, axis=1))
            if d < snic_proximity:
                kind = "SNIC"
                break
        br.special.append({"index": len(br) - 1, "kind": kind, "param": float(P[-1]), "period": float(T[-1])})
    else:
        br.special.append({"index": len(br) - 1, "kind": "branch_end", "param": float(P[-1]), "reason": end})
    return br


def cycle_at(br: Branch, p_target: float, model, param="I_app") -> CycleSummary:
    """Periodic orbit of the family ``br`` at exactly ``p_target``."""
    fld = as_field(model, param)
    i = int(np.argmin(np.abs(br.params - p_target)))
    return solve_cycle(fld, br.states[i], br.periods[i], p_target, param)


def classify_hopf(model, hopf: dict, param="I_app", arc_points: int = 6, ds: float = 1e-2, eq_branch: Branch | None = None):
    """'supercritical' or 'subcritical' from the cycles born at ``hopf``.

    A short arc of the emanating family is computed; the family is
    supercritical when its cycles are stable and lie on the side where the
    equilibria are unstable, subcritical when unstable cycles coexist with
    stable equilibria.
    """
    fld = as_field(model, param)
    pH = float(hopf["param"])
    try:
        cyc = continue_cycles(fld, (-np.inf, np.inf), hopf, param, ds=ds, max_points=arc_points, ds_max=ds)
    except ContinuationError:
        return "unclassified"
    if len(cyc) < 2:
        return "unclassified"
    side = np.sign(cyc.params[-1] - pH)
    # stability of equilibria on the cycle side
    xq = find_equilibrium(fld, cyc.params[-1], np.asarray(hopf["state"]))
    eq_stable = stability(eigen(fld, xq, cyc.params[-1]))[0]
    cyc_stable = bool(np.mean(cyc.stable[1:]) > 0.5)
    if side == 0:
        return "unclassified"
    if cyc_stable and not eq_stable:
        return "supercritical"
    if not cyc_stable and eq_stable:
        return "subcritical"
    return "unclassified"


# ---------------------------------------------------------------------------
# two-parameter sets


def two_parameter_set(
    red: ReducedModel,
    detector: str,
    param1: str,
    p1_range,
    param2: str,
    grid,
    start_V: float | None = None,
    locate=None,
):
    """Curve of a codimension-one bifurcation in the (param1, param2) plane.

    For each ``param2`` value in ``grid`` the equilibria are continued in
    ``param1`` over ``p1_range`` and the first special point of kind
    ``detector`` ('Hopf' or 'fold') is recorded. ``locate`` may replace the
    per-value search with a callable ``(red_at_value) -> param1 or None``
    (used for SNIC sets). Grid values without a detection are returned as
    gaps.
    """
    pts, gaps = [], []
    for g in grid:
        r = red.with_values(**{param2: g}) if param2 != "I_app" else red.with_values(I_app=g)
        if locate is not None:
            v = locate(r)
        else:
            v = None
            try:
                fld = r.field(param1)
                if param1 == "I_app":
                    r0 = r.with_values(I_app=p1_range[0])
                else:
                    r0 = r.with_values(**{param1: p1_range[0]})
                guess = r0.steady_state_at(start_V) if start_V is not None else None
                br = continue_equilibria(fld, p1_range, guess, param1)
                hits = br.of_kind(detector)
                v = hits[0]["param"] if hits else None
            except ContinuationError:
                v = None
        if v is None:
            gaps.append(float(g))
        else:
            pts.append((float(v), float(g)))
    return np.array(pts).reshape(-1, 2), gaps
