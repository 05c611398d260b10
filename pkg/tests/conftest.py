import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import pipeline

_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def schedule():
    """Models trained once per session by the desk-scale schedule."""
    return pipeline.train_schedule(log=lambda m: print(m, flush=True))


@pytest.fixture(scope="session")
def held_out():
    return pipeline.held_out_corpus()


@pytest.fixture()
def criterion():
    """Record an acceptance outcome, then assert it."""

    def record(number: int, ok: bool, detail: str):
        _CRITERIA[number] = (bool(ok), detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {number} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 13):
        if number in _CRITERIA:
            ok, detail = _CRITERIA[number]
            terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {number:2d}: NOT RUN  (deselected, or errored before measuring)")
