import numpy as np
import pytest

from mmimo.randcore import derive_stream


@pytest.fixture
def rng():
    return derive_stream(42, 0)


def random_psd(rng, n):
    A = rng.complex_normal((n, n))
    return A @ A.conj().T + 1e-3 * np.eye(n)


_CRITERIA = {}


def pytest_runtest_logreport(report):
    # collect one outcome per acceptance criterion for the terminal summary
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    num = int(report.nodeid.split("test_criterion_")[1].split("_")[0])
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        _CRITERIA[num] = _CRITERIA.get(num, True) and not failed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if _CRITERIA[num] else 'FAIL'}")
