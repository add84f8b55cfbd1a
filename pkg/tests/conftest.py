"""Shared fixtures: assembled operators are cached per mesh size."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import pytest

from snse.fem import assemble_static
from snse.mesh import build_unit_square_mesh


@lru_cache(maxsize=None)
def operators(n: int):
    return assemble_static(build_unit_square_mesh(n))


@pytest.fixture
def ops4():
    return operators(4)


@pytest.fixture
def ops8():
    return operators(8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_zero_trace(ops, rng, scale=1.0):
    """Random full velocity vector with zero boundary dofs."""
    dm = ops.dofmap
    return dm.extend(scale * rng.standard_normal(dm.free_count))


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
