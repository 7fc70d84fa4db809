"""Session plumbing for the acceptance suite.

Acceptance tests run after everything else so the property-suite criterion
can read the outcomes already produced in the same session. Each acceptance
check records a PASS/FAIL line that is printed in the terminal summary.
"""

import pytest

PROPERTY_SUITES = (
    "tests/test_properties.py",
    "tests/test_metrics.py",
    "tests/test_dgp.py",
    "tests/test_evaluation.py",
    "tests/test_logistic.py",
    "tests/test_clustering.py",
    "tests/test_ingest.py",
)

SESSION_OUTCOMES: dict = {}
ACCEPTANCE_LINES: list = []


def pytest_collection_modifyitems(session, config, items):
    items.sort(key=lambda item: item.nodeid.startswith("tests/test_acceptance.py"))


def pytest_runtest_logreport(report):
    if report.when == "call" or report.outcome != "passed":
        prior = SESSION_OUTCOMES.get(report.nodeid)
        if prior in (None, "passed"):
            SESSION_OUTCOMES[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def session_outcomes():
    return SESSION_OUTCOMES


@pytest.fixture(scope="session")
def acceptance_lines():
    return ACCEPTANCE_LINES
