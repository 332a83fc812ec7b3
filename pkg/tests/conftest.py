import warnings

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ppn", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ppn")

# Scenario results shared across test modules, keyed by scenario id.
_SCENARIO_CACHE: dict = {}
# (criterion, passed, detail) lines printed after the run.
ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def scenario():
    from ppnsim.scenarios import run_scenario

    def get(sid):
        if sid not in _SCENARIO_CACHE:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                _SCENARIO_CACHE[sid] = run_scenario(sid)
        return _SCENARIO_CACHE[sid]

    return get


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line[1])
