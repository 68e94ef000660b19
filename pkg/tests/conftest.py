import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

# acceptance criterion id -> (outcome, detail); filled by the hooks below
_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "call" or rep.failed:
        detail = "; ".join(f"{k}={v}" for k, v in getattr(item, "measured", {}).items())
        _CRITERIA[marker.args[0]] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in _CRITERIA.items():
        terminalreporter.write_line(f"{status}  {name}" + (f"  ({detail})" if detail else ""))
