import re

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rcmlab.environment import constant_environment, gen_long_range_percolation

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def const_torus4():
    return constant_environment(2, 2, "torus")


@pytest.fixture(scope="session")
def const_torus32():
    return constant_environment(2, 16, "torus")


@pytest.fixture(scope="session")
def perc_torus():
    """Long-range percolation, s = 5, torus of side 32."""
    return gen_long_range_percolation(2, 5.0, 16, "torus", ell_max=8, seed=3)


@pytest.fixture(scope="session")
def perc_box():
    return gen_long_range_percolation(2, 3.0, 6, "box", ell_max=4, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


# ----------------------------------------------------------------------
# one summary line per acceptance criterion
_ACCEPTANCE = {}
_OUTCOMES = {}


@pytest.fixture
def criterion(request):
    """Record the measured values behind an acceptance criterion."""

    def record(summary):
        _ACCEPTANCE[request.node.nodeid] = summary

    return record


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _OUTCOMES.get(report.nodeid)
        if prev is None or prev == "passed":
            _OUTCOMES[report.nodeid] = report.outcome
            if report.outcome == "failed" and report.longrepr is not None:
                _ACCEPTANCE.setdefault(report.nodeid, str(report.longrepr).strip().splitlines()[-1])


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    rows = []
    for nodeid, outcome in _OUTCOMES.items():
        m = re.search(r"criterion_(\d+)", nodeid)
        if m:
            rows.append((int(m.group(1)), outcome, _ACCEPTANCE.get(nodeid, "")))
    for num, outcome, summary in sorted(rows):
        verdict = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"criterion {num:2d} {verdict}: {summary}")
