"""Shared pytest hooks: a one-line-per-criterion summary for the acceptance suite."""

import re


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for report in terminalreporter.stats.get(outcome, []):
            if report.when != "call":
                continue
            match = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
            if not match:
                continue
            detail = dict(report.user_properties).get("detail", "")
            lines.append((int(match.group(1)), outcome.upper()[:4], match.group(2), detail))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, name, detail in sorted(lines):
        terminalreporter.write_line(f"criterion {number:2d} {status}  {name.replace('_', ' ')}"
                                    + (f"  [{detail}]" if detail else ""))
