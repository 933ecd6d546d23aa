"""Prints one pass/fail line per acceptance criterion after the run."""

import re

_CRITERION = re.compile(r"test_criterion_(\d+)_")
_results: dict[int, list] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
        _results.setdefault(int(m.group(1)), []).append((report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        outcomes = _results[n]
        ok = all(o == "passed" for o, _ in outcomes)
        details = " | ".join(d for _, d in outcomes if d)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {details}".rstrip())
