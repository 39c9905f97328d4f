import time

import numpy as np
import pytest

from centermask.gradsuite import run_suite


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grad_suite():
    """The full gradient suite, run once: (name -> (report, tol, seconds, draws), wall seconds)."""
    t0 = time.perf_counter()
    out = run_suite(seed=0, log=None)
    return out, time.perf_counter() - t0


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    def record(name, ok, detail):
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
