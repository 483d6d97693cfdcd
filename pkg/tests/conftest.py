import time

import pytest

from separable.simulation import enumerate_observed, two_period_dgp

# nodeid -> (label, outcome, seconds) for the acceptance summary
_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def dgp():
    return two_period_dgp()


@pytest.fixture(scope="session")
def population(dgp):
    """Observed-data law of the two-period process as a weighted dataset."""
    return enumerate_observed(dgp)


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    label = getattr(report, "acceptance_label", None)
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        prev = _ACCEPTANCE.get(report.nodeid)
        if prev is None or report.when == "call":
            _ACCEPTANCE[report.nodeid] = (label or report.nodeid.split("::")[-1], report.outcome, report.duration)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker:
        rep.acceptance_label = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for label, outcome, secs in _ACCEPTANCE.values():
        verdict = "PASS" if outcome == "passed" else "FAIL"
        tr.write_line(f"[{verdict}] {label} ({secs:.1f} s)")
    n_pass = sum(o == "passed" for _, o, _ in _ACCEPTANCE.values())
    tr.write_line(f"{n_pass}/{len(_ACCEPTANCE)} acceptance criteria met")


@pytest.fixture
def stopwatch():
    start = time.perf_counter()
    return lambda: time.perf_counter() - start
