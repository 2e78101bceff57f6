"""Shared fixtures: a recorder that reports one PASS/FAIL line per acceptance criterion."""
from contextlib import contextmanager

import pytest

_RESULTS: dict[int, tuple[str, str, str]] = {}


class _Check:
    def __init__(self):
        self.detail = ""


@contextmanager
def _recording(number: int, title: str):
    check = _Check()
    try:
        yield check
    except BaseException as exc:
        reason = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        _RESULTS[number] = ("FAIL", title, f"{check.detail} {reason}".strip())
        raise
    _RESULTS[number] = ("PASS", title, check.detail)


@pytest.fixture
def criterion():
    """``with criterion(n, title) as c: ...`` records PASS, or FAIL on any exception."""
    return _recording


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        verdict, title, detail = _RESULTS[number]
        line = f"criterion {number}: {verdict} {title}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
