"""Shared fixtures: benchmarks and the four full comparison runs.

The full runs integrate to tau = 300 with early stopping disabled (the
reproducible, fixed-span setting) and are session-scoped because they
back several test modules plus the acceptance suite.
"""

import numpy as np
import pytest

from vem import assemble_ivp, brachistochrone, double_integrator, evolve, summarize

FULL_SNAPSHOTS = (0, 1, 2, 5, 10, 20, 30, 50, 75, 100, 125, 150, 200, 250, 300)


@pytest.fixture(scope="session")
def di():
    return double_integrator()


@pytest.fixture(scope="session")
def brach():
    return brachistochrone()


def _full_run(bench, method):
    system = assemble_ivp(bench.problem, method, bench.default_nodes, bench.gains)
    history = evolve(system, 300.0, snapshot_taus=FULL_SNAPSHOTS, early_stop=False)
    report = summarize(system, history, bench.reference)
    return system, history, report


@pytest.fixture(scope="session")
def di_third_run(di):
    return _full_run(di, "third")


@pytest.fixture(scope="session")
def di_second_run(di):
    return _full_run(di, "second")


@pytest.fixture(scope="session")
def brach_third_run(brach):
    return _full_run(brach, "third")


@pytest.fixture(scope="session")
def brach_second_run(brach):
    return _full_run(brach, "second")


def smooth_controls(grid, m, rng, scale=0.3, waves=2):
    """Band-limited random node controls (smooth enough for quadrature)."""
    t = (grid.times - grid.t0) / (grid.tf - grid.t0)
    vals = np.zeros((grid.n_nodes, m))
    for k in range(1, waves + 1):
        vals += np.sin(np.pi * k * t)[:, None] * (scale * rng.standard_normal(m))
    return vals
