import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gsmpkit import GsmpWindow, solve_iso_point, solve_potential, validate_interval_system  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def E2():
    return validate_interval_system([(-2.0, 2.0), (-1.0, 1.0)])


@pytest.fixture(scope="session")
def V2(E2):
    return solve_potential(E2)


@pytest.fixture(scope="session")
def periodic_point(V2):
    return solve_iso_point(V2, pins={"q0": 0.0})


@pytest.fixture(scope="session")
def E3():
    return validate_interval_system([(-3.0, 3.0), (-2.0, -1.0), (0.5, 1.5)])


@pytest.fixture(scope="session")
def V3(E3):
    return solve_potential(E3)


@pytest.fixture(scope="session")
def torus3(V3):
    from gsmpkit import sample_torus

    return sample_torus(V3, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def perturbed_window(point, lo, hi, noise, rng, blocks=None):
    """Constant window of ``point`` with Gaussian noise on the given blocks (all by default)."""
    W = GsmpWindow.constant(point.pair, point.V.poles, lo, hi)
    P, Q = W.P.copy(), W.Q.copy()
    rows = range(W.n_blocks) if blocks is None else [j - lo for j in blocks]
    for r in rows:
        P[r] += noise * rng.standard_normal(P.shape[1])
        Q[r] += noise * rng.standard_normal(Q.shape[1])
    P[:, -1] = np.abs(P[:, -1])
    return GsmpWindow(W.poles, lo, P, Q)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
