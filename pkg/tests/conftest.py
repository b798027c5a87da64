import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def within(x, target, se, k=3.0):
    return abs(x - target) <= k * se


def report(criterion: str, ok: bool | None, detail: str) -> bool | None:
    """Record and print one acceptance line; ``ok=None`` marks an informational line."""
    tag = "INFO" if ok is None else ("PASS" if ok else "FAIL")
    line = f"[{tag}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance checks")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
