from __future__ import annotations

import numpy as np
import pytest

from dictfit import bloch, pgrid


@pytest.fixture(scope="session")
def short_schedule():
    return bloch.jiang_style_schedule(40)


@pytest.fixture(scope="session")
def ensemble16():
    return bloch.make_ensemble(16)


@pytest.fixture(scope="session")
def small_grid():
    return pgrid.paper_axes((5, 4, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def record_criterion():
    """Store one pass/fail line per acceptance criterion for the terminal summary."""
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
