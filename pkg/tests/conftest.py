import numpy as np
import pytest

from stvl.numcodec import build_vocabulary

_acceptance_results = []


@pytest.fixture(scope="session")
def vocab():
    return build_vocabulary()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    # test_c3_group_math -> "3 group math"
    label = name.removeprefix("test_c").replace("_", " ")
    verdict = "PASS" if report.passed else "FAIL"
    _acceptance_results.append(
        f"[{verdict}] criterion {label} ({report.duration:.1f}s)"
    )


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for line in _acceptance_results:
        terminalreporter.write_line(line)
