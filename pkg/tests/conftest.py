import os

import pytest

_ACCEPTANCE = []


class AcceptanceLog:
    """Collects one pass/fail line per acceptance criterion."""

    def record(self, criterion, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    def skip(self, criterion, reason):
        line = f"[SKIP] criterion {criterion}: {reason}"
        _ACCEPTANCE.append(line)
        print(line)
        pytest.skip(reason)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / "out"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE:
        terminalreporter.write_line(line)


def cpu_count():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1
