import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_SEED = 0
N_CRITERIA = 11
_results: dict[int, tuple[bool, str]] = {}
_started = False


@pytest.fixture
def criterion():
    """Record the outcome of an acceptance criterion; returns the verdict."""
    global _started
    _started = True

    def record(number: int, passed: bool, detail: str) -> bool:
        _results[number] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _started:
        return
    tr = terminalreporter
    tr.section(f"acceptance criteria (seed {ACCEPTANCE_SEED})")
    for n in range(1, N_CRITERIA + 1):
        if n in _results:
            ok, detail = _results[n]
            tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            tr.write_line(f"criterion {n:2d}: FAIL  (not run or raised before recording)")
