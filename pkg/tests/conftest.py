import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    title = getattr(getattr(item, "function", None), "criterion", None)
    if title and report.when == "call":
        report.user_properties.append(("criterion", title))


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            for name, title in getattr(rep, "user_properties", []):
                if name == "criterion":
                    lines.append((rep.nodeid, f"{'PASS' if rep.passed else 'FAIL'}  {title}  ({rep.duration:.1f} s)"))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, text in sorted(lines):
            terminalreporter.write_line(text)
