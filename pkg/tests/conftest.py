"""Shared fixtures: small synthetic snapshot sets and network parameters."""

import numpy as np
import pytest

# One line per acceptance criterion, echoed at the end of the run so the
# verdicts stay visible regardless of output capturing.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from latentrom import (
    ParameterPoint,
    SnapshotSet,
    Trajectory,
    mlp_init,
)


def make_snapshots(n_traj=3, n_steps=6, n_dof=7, dt=0.1, seed=0):
    """A small smooth snapshot set with distinct parameter points."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_steps + 1) * dt
    x = np.linspace(0.0, 1.0, n_dof)
    trajs = []
    for i in range(n_traj):
        a, b = 0.5 + 0.1 * i, 1.0 + 0.05 * i
        states = (a * np.sin(np.outer(t, 2 * np.pi * x) + b)
                  + 0.01 * rng.standard_normal((n_steps + 1, n_dof)))
        trajs.append(Trajectory(states=states, dt=dt,
                                param=ParameterPoint((a, b))))
    return SnapshotSet(tuple(trajs))


@pytest.fixture
def toy_snapshots():
    return make_snapshots()


@pytest.fixture
def toy_nets():
    """Encoder/decoder pair sized for the toy snapshot set (n_dof=7, n_z=2)."""
    enc = mlp_init([7, 5, 2], activation="sigmoid", seed=0)
    dec = mlp_init([2, 5, 7], activation="sigmoid", seed=1)
    return enc, dec
