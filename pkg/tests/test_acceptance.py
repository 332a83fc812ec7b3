"""Acceptance criteria 1-8, each at its stated tolerance.

Every criterion aggregates the checks of the scenarios that carry it; the
terminal summary prints one pass/fail line per criterion followed by the
individual checks. Failures are real: nothing here is loosened to pass.
"""

import pytest

from conftest import ACCEPTANCE_LINES
from ppnsim.scenarios import SCENARIOS

CRITERIA = {
    1: ("ramp onset", ("fig2",)),
    2: ("NC full-system Hopf", ("fig3",)),
    3: ("SDP", ("fig4",)),
    4: ("C delay", ("fig5", "fig6")),
    5: ("CT PIR", ("fig7", "fig8")),
    6: ("PIF triple", ("fig9nc", "fig9ct", "fig11")),
    7: ("nondim tables", ("tables-nondim",)),
    8: ("property suites", SCENARIOS),
}


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n, scenario):
    title, sids = CRITERIA[n]
    checks, errors = [], []
    for sid in sids:
        r = scenario(sid)
        checks += [c for c in r.checks if c.criterion == n]
        if r.error:
            errors.append(f"{sid}: {r.error}")
    ok = bool(checks) and all(c.passed for c in checks)
    passed = sum(c.passed for c in checks)
    head = f"[{'PASS' if ok else 'FAIL'}] criterion {n} ({title}): {passed}/{len(checks)} checks"
    detail = "\n".join("    " + c.line() for c in checks)
    if errors:
        detail += "\n" + "\n".join("    error: " + e for e in errors)
    ACCEPTANCE_LINES.append((n, head + "\n" + detail))
    print(head)
    assert checks, f"no checks recorded for criterion {n}"
    failing = [c.line() for c in checks if not c.passed]
    assert not failing, "\n".join(failing)


def test_every_scenario_check_is_aggregated(scenario):
    for sid in SCENARIOS:
        for c in scenario(sid).checks:
            assert sid in CRITERIA[c.criterion][1], f"{sid} emits a criterion {c.criterion} check"
