"""Shared fixtures: expensive solves are computed once per session."""

from __future__ import annotations

import numpy as np
import pytest

from gllab.grid import build_chart
from gllab.scenarios import solve_disk_vortex


@pytest.fixture(scope="session")
def disk_vortex():
    """Converged degree-one vortex on the unit disk, eps = 0.05, h = eps / 4."""
    f, rep = solve_disk_vortex(0.05, 4)
    assert rep.converged
    return f, rep


@pytest.fixture(scope="session")
def disk_vortex_fine():
    """Same solution at h = eps / 8."""
    f, rep = solve_disk_vortex(0.05, 8)
    assert rep.converged
    return f, rep


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(scope="session")
def small_disk():
    return build_chart("disk", 32, {"radius": 1.0})


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
