import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> detail string, filled in by test_acceptance.py
ACCEPTANCE_DETAILS: dict[int, str] = {}
_OUTCOMES: dict[int, str] = {}


def _criterion(nodeid: str):
    if "test_acceptance.py::test_criterion_" not in nodeid:
        return None
    return int(nodeid.split("test_criterion_")[1][:2])


def pytest_runtest_logreport(report):
    k = _criterion(report.nodeid)
    if k is None:
        return
    if report.when == "call" or report.outcome != "passed":
        if hasattr(report, "wasxfail"):
            status = "FAIL"
            ACCEPTANCE_DETAILS.setdefault(k, "")
            ACCEPTANCE_DETAILS[k] += f" [{report.wasxfail}]"
        else:
            status = "PASS" if report.outcome == "passed" else "FAIL"
        if _OUTCOMES.get(k) != "FAIL":
            _OUTCOMES[k] = status


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_OUTCOMES):
        terminalreporter.write_line(f"criterion {k:2d}: {_OUTCOMES[k]}  {ACCEPTANCE_DETAILS.get(k, '').strip()}")
