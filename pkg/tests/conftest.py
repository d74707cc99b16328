from __future__ import annotations

import numpy as np
import pytest

from cmpstomo.cmps import generate_state
from cmpstomo.correlations import Grid1D
from cmpstomo.predict import ReconstructedModel, predict_tensor


@pytest.fixture(scope="session")
def grid():
    return Grid1D(0.0, 0.1, 30)


@pytest.fixture(scope="session")
def small_grid():
    return Grid1D(0.0, 0.15, 12)


@pytest.fixture(scope="session")
def state2():
    return generate_state(2, 0)


@pytest.fixture(scope="session")
def truth2(state2):
    return ReconstructedModel.from_state(state2)


@pytest.fixture(scope="session")
def exact_tensors(truth2, small_grid):
    return {n: predict_tensor(truth2.lam, truth2.M, n, small_grid) for n in (2, 4, 6)}


def real_state(d: int, seed: int):
    """Normalized state with real ``Q`` and ``R`` (R kept away from the negative axis)."""
    from cmpstomo.cmps import CmpsState, normalize

    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((d, d))
    R = np.eye(d) * 1.5 + 0.3 * rng.standard_normal((d, d))
    return normalize(CmpsState(Q, R))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion and return the flag."""

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} | {name} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
