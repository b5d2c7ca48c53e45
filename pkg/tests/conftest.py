import numpy as np
import pytest

from mfgsplit.grid import SpaceTimeGrid
from mfgsplit.operators import LinearMaps
from mfgsplit.spectral import build_basis


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_maps(nx=8, nt=4, r=9, n_local=2, use_a=True, use_b=True):
    grid = SpaceTimeGrid(nx, nt)
    basis = build_basis(grid, r) if r else None
    return LinearMaps(grid, basis, n_local, use_a=use_a, use_b=use_b)


@pytest.fixture
def small_maps():
    return make_maps()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
