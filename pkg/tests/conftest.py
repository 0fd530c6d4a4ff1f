import dataclasses

import pytest

from sagin.scenario import default_scenario, small_scenario


@pytest.fixture
def cfg():
    return default_scenario()


@pytest.fixture
def small():
    return small_scenario()


def replace(cfg, **kw):
    return dataclasses.replace(cfg, **kw)


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid or report.when != "call":
        return
    name = report.nodeid.split("::")[-1]
    _CRITERIA[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in sorted(_CRITERIA.items(), key=lambda kv: int(kv[0].split("_")[1][1:])):
        terminalreporter.write_line(f"{verdict}  {name}")
