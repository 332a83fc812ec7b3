import json

import numpy as np
import pytest

from ppnsim.continuation import (
    ContinuationError,
    Shooting,
    branch_through,
    classify_hopf,
    continue_cycles,
    continue_equilibria,
    find_equilibrium,
    solve_cycle,
)
from ppnsim.fields import Field, as_field
from ppnsim.model import build_model, scalar_equilibria, state_scale


class NormalForm(Field):
    """Planar test fields with closed-form bifurcations, parameter p."""

    def __init__(self, kind, sign=-1.0):
        self.kind, self.s, self.param = kind, sign, "p"

    dim = 2
    names = ("V", "y")
    scale = np.ones(2)
    p0 = 0.0

    def f(self, x, p):
        a, b = x
        if self.kind == "fold":
            return np.array([p - a * a, -b])
        r2 = a * a + b * b
        return np.array([p * a - b + self.s * a * r2, a + p * b + self.s * b * r2])

    def fx(self, x, p):
        a, b = x
        if self.kind == "fold":
            return np.array([[-2 * a, 0.0], [0.0, -1.0]])
        s = self.s
        return np.array(
            [[p + s * (3 * a * a + b * b), -1 + 2 * s * a * b], [1 + 2 * s * a * b, p + s * (a * a + 3 * b * b)]]
        )

    def fp(self, x, p):
        if self.kind == "fold":
            return np.array([1.0, 0.0])
        return np.array(x, dtype=float)


def test_fold_located_at_origin():
    br = continue_equilibria(NormalForm("fold"), (1.0, -1.0), start=[1.0, 0.0], param="p", ds=0.05)
    folds = br.of_kind("fold")
    assert len(folds) == 1
    assert abs(folds[0]["param"]) < 1e-9
    assert abs(folds[0]["state"][0]) < 1e-4
    # upper branch stable, lower unstable
    assert br.stable[0] and not br.stable[-1]


@pytest.mark.parametrize("sign, kind", [(-1.0, "supercritical"), (1.0, "subcritical")])
def test_hopf_located_and_classified(sign, kind):
    fld = NormalForm("hopf", sign)
    br = continue_equilibria(fld, (-0.5, 0.5), start=[0.0, 0.0], param="p", ds=0.05)
    hopfs = br.of_kind("Hopf")
    assert len(hopfs) == 1
    assert abs(hopfs[0]["param"]) < 1e-10
    assert hopfs[0]["omega"] == pytest.approx(1.0, abs=1e-8)
    assert classify_hopf(fld, hopfs[0], param="p") == kind


def test_supercritical_family_matches_closed_form():
    fld = NormalForm("hopf")
    hopf = {"param": 0.0, "state": [0.0, 0.0]}
    sh = Shooting(fld, rtol=1e-10, atol=1e-12)
    cyc = continue_cycles(fld, (0.0, 0.3), hopf, param="p", ds=0.05, ds_max=0.05, max_points=40, sh=sh)
    sel = cyc.params > 1e-3
    assert sel.sum() >= 3
    np.testing.assert_allclose(cyc.V_max[sel], np.sqrt(cyc.params[sel]), rtol=5e-3)
    np.testing.assert_allclose(cyc.periods, 2 * np.pi, rtol=1e-6)
    assert np.all(cyc.stable[sel])


def test_solve_cycle_converges_to_circle():
    fld = NormalForm("hopf")
    c = solve_cycle(fld, [0.3, 0.45], 6.0, p=0.25, param="p")
    assert c.period == pytest.approx(2 * np.pi, rel=1e-8)
    assert c.V_max == pytest.approx(0.5, rel=1e-3)
    assert c.stable
    # trivial multiplier at 1, the other exp(-2 p T)
    m = np.sort(np.abs(c.multipliers))
    assert m[0] == pytest.approx(np.exp(-2 * 0.25 * 2 * np.pi), rel=1e-5)
    assert m[1] == pytest.approx(1.0, abs=1e-6)


def test_newton_agrees_with_scalar_reduction():
    m = build_model("NC")
    for y in scalar_equilibria(m, -0.6):
        z = find_equilibrium(m, -0.6, y + 1e-3 * state_scale(m))
        assert np.max(np.abs((z - y) / state_scale(m))) < 1e-9


def test_newton_failure_is_reported():
    with pytest.raises(ContinuationError):
        find_equilibrium(NormalForm("fold"), -1.0, [0.5, 0.0])


def test_equilibrium_branch_points_are_equilibria_and_serialize(tmp_path):
    m = build_model("NC").block(["Na"])
    br = branch_through(m, (0.0, 1.0), ds=5e-2, ds_max=5e-2)
    fld = as_field(m)
    res = [np.max(np.abs(fld.f(x, p) / state_scale(m))) for x, p in zip(br.states, br.params)]
    assert max(res) < 1e-8
    br.to_json(tmp_path / "b.json")
    d = json.loads((tmp_path / "b.json").read_text())
    assert d["kind"] == "equilibrium" and len(d["params"]) == len(br)
    br.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text().startswith("I_app,V,stable,special")


def test_hopf_eigenvalue_crosses_imaginary_axis():
    m = build_model("NC").block(["Na"])
    br = continue_equilibria(m, (0.0, 2.0), ds=2e-2, ds_max=5e-2)
    h = br.of_kind("Hopf")[0]
    lam = h["eigenvalue"]
    assert abs(lam.real) < 1e-8 and abs(lam.imag) > 1e-3
