import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES = {}


def record_acceptance(number: int, title: str, checks):
    """Store one summary line for an acceptance criterion; ``checks`` is a list of (ok, detail)."""
    ok = all(c[0] for c in checks)
    detail = "; ".join(f"{'ok' if c[0] else 'FAILED'}: {c[1]}" for c in checks)
    ACCEPTANCE_LINES[number] = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title} :: {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
