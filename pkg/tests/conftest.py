"""Shared pytest plumbing.

Acceptance-style tests record one verdict line per criterion through the
`criterion` fixture; the lines are echoed in a dedicated terminal section at
the end of the run so they are visible even when everything passes.
"""

import pytest


def pytest_configure(config):
    config._criterion_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record and assert a single named pass/fail verdict."""

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{name}: {'PASS' if ok else 'FAIL'} ({detail})"
        print(line)
        request.config._criterion_lines.append(line)
        assert ok, line

    return record
