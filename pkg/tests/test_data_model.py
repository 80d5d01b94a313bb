import os
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentrom import (
    FormatError,
    ParameterPoint,
    SnapshotSet,
    Trajectory,
    append_snapshot,
    load_snapshots,
    make_parameter_grid,
    parameter_grid_csv,
    save_snapshots,
)
from conftest import make_snapshots


# ---------------------------------------------------------------------------
# parameter grids

def test_grid_21x21_has_441_points_with_uniform_spacing():
    grid = make_parameter_grid([(0.7, 0.9), (0.9, 1.1)], [21, 21])
    assert len(grid) == 441
    pts = np.array([p.values for p in grid.points])
    a = np.unique(pts[:, 0])
    w = np.unique(pts[:, 1])
    assert a.size == 21 and w.size == 21
    assert np.allclose(np.diff(a), 0.01, atol=1e-12)
    assert np.allclose(np.diff(w), 0.01, atol=1e-12)


def test_grid_single_dim_two_points_hits_both_ends():
    grid = make_parameter_grid([(0.0, 1.0)], [2])
    assert [p.values for p in grid.points] == [(0.0,), (1.0,)]


def test_grid_spacing_per_dimension():
    grid = make_parameter_grid([(1.0, 1.4), (4.0, 4.3)], [21, 21])
    pts = np.array([p.values for p in grid.points])
    assert np.allclose(np.diff(np.unique(pts[:, 0])), 0.02)
    assert np.allclose(np.diff(np.unique(pts[:, 1])), 0.015)


def test_grid_row_major_order_and_bounds():
    grid = make_parameter_grid([(0.7, 0.9), (0.9, 1.1)], [3, 5])
    pts = [p.values for p in grid.points]
    # last dimension varies fastest
    assert pts[0] == (0.7, 0.9)
    assert pts[1][0] == 0.7 and pts[1][1] > 0.9
    assert pts[5][0] > 0.7
    assert len(set(pts)) == len(pts)
    arr = np.array(pts)
    assert arr[:, 0].min() == 0.7 and arr[:, 0].max() == 0.9
    assert arr[:, 1].min() == 0.9 and arr[:, 1].max() == 1.1


@pytest.mark.parametrize("ranges,counts", [
    ([(0.0, 1.0)], [1]),
    ([(1.0, 1.0)], [3]),
    ([(2.0, 1.0)], [3]),
    ([(0.0, np.inf)], [3]),
    ([(0.0, 1.0), (0.0, 1.0)], [3]),
])
def test_grid_rejects_degenerate_input(ranges, counts):
    with pytest.raises(ValueError):
        make_parameter_grid(ranges, counts)


def test_grid_csv_header_and_rows():
    grid = make_parameter_grid([(0.0, 1.0), (2.0, 3.0)], [2, 2])
    lines = parameter_grid_csv(grid).strip().splitlines()
    assert lines[0] == "dim0,dim1"
    assert len(lines) == 5
    first = [float(v) for v in lines[1].split(",")]
    assert first == [0.0, 2.0]


# ---------------------------------------------------------------------------
# trajectories and snapshot sets

def test_trajectory_validation():
    good = np.zeros((3, 4))
    with pytest.raises(ValueError):
        Trajectory(states=good, dt=0.0, param=ParameterPoint((1.0,)))
    with pytest.raises(ValueError):
        Trajectory(states=np.zeros(4), dt=0.1, param=ParameterPoint((1.0,)))
    bad = good.copy()
    bad[1, 2] = np.nan
    with pytest.raises(ValueError):
        Trajectory(states=bad, dt=0.1, param=ParameterPoint((1.0,)))


def test_append_snapshot_grows_and_preserves():
    sset = make_snapshots(n_traj=4)
    before = [t.states.copy() for t in sset.trajectories]
    extra = Trajectory(states=np.ones((sset.n_steps + 1, sset.n_dof)),
                       dt=sset.dt, param=ParameterPoint((9.0, 9.0)))
    grown = append_snapshot(sset, extra)
    assert grown.n_traj == 5
    assert sset.n_traj == 4  # original untouched
    for old, new in zip(before, grown.trajectories):
        np.testing.assert_array_equal(old, new.states)
    np.testing.assert_array_equal(grown.trajectories[-1].states, extra.states)


def test_append_snapshot_rejects_duplicates_and_mismatch():
    sset = make_snapshots(n_traj=2)
    dup = Trajectory(states=np.zeros((sset.n_steps + 1, sset.n_dof)),
                     dt=sset.dt, param=sset.trajectories[0].param)
    with pytest.raises(ValueError):
        append_snapshot(sset, dup)
    wrong_shape = Trajectory(states=np.zeros((sset.n_steps + 1, sset.n_dof + 1)),
                             dt=sset.dt, param=ParameterPoint((9.0, 9.0)))
    with pytest.raises(ValueError):
        append_snapshot(sset, wrong_shape)
    wrong_dt = Trajectory(states=np.zeros((sset.n_steps + 1, sset.n_dof)),
                          dt=sset.dt * 2, param=ParameterPoint((9.0, 9.0)))
    with pytest.raises(ValueError):
        append_snapshot(sset, wrong_dt)


def test_tensor_and_param_matrix_shapes(toy_snapshots):
    t = toy_snapshots.tensor()
    assert t.shape == (3, 7, 7)
    pm = toy_snapshots.param_matrix()
    assert pm.shape == (3, 2)
    np.testing.assert_array_equal(pm[0], toy_snapshots.trajectories[0].param.as_array())


# ---------------------------------------------------------------------------
# binary persistence

def test_save_load_round_trip_is_bit_exact(tmp_path):
    sset = make_snapshots(n_traj=3, n_steps=5, n_dof=4, dt=0.05, seed=3)
    path = tmp_path / "snaps.lsdi"
    save_snapshots(sset, path)
    back = load_snapshots(path)
    assert back.n_traj == sset.n_traj
    assert back.dt == sset.dt
    np.testing.assert_array_equal(back.tensor(), sset.tensor())
    np.testing.assert_array_equal(back.param_matrix(), sset.param_matrix())


def test_save_load_minimal_payload(tmp_path):
    sset = SnapshotSet((Trajectory(states=np.full((2, 1), 0.5), dt=1.0,
                                   param=ParameterPoint((2.0,))),))
    path = tmp_path / "one.lsdi"
    save_snapshots(sset, path)
    back = load_snapshots(path)
    assert back.n_traj == 1 and back.n_steps == 1 and back.n_dof == 1
    np.testing.assert_array_equal(back.trajectories[0].states,
                                  np.full((2, 1), 0.5))
    assert back.trajectories[0].param.values == (2.0,)


def test_load_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.lsdi"
    path.write_bytes(b"NOPE!\n" + b"\x00" * 64)
    with pytest.raises(FormatError):
        load_snapshots(path)


def test_load_rejects_truncation(tmp_path):
    sset = make_snapshots(n_traj=2, n_steps=3, n_dof=4)
    path = tmp_path / "trunc.lsdi"
    save_snapshots(sset, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-9])
    with pytest.raises(FormatError):
        load_snapshots(path)


def test_load_rejects_trailing_bytes(tmp_path):
    sset = make_snapshots(n_traj=1, n_steps=2, n_dof=3)
    path = tmp_path / "extra.lsdi"
    save_snapshots(sset, path)
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(FormatError):
        load_snapshots(path)


def test_save_is_deterministic(tmp_path):
    sset = make_snapshots(n_traj=2, n_steps=2, n_dof=3)
    p1, p2 = tmp_path / "a.lsdi", tmp_path / "b.lsdi"
    save_snapshots(sset, p1)
    save_snapshots(sset, p2)
    assert p1.read_bytes() == p2.read_bytes()


@settings(max_examples=25, deadline=None)
@given(
    n_traj=st.integers(1, 3),
    n_steps=st.integers(1, 4),
    n_dof=st.integers(1, 5),
    seed=st.integers(0, 100),
)
def test_round_trip_identity_property(n_traj, n_steps, n_dof, seed):
    rng = np.random.default_rng(seed)
    trajs = tuple(
        Trajectory(states=rng.standard_normal((n_steps + 1, n_dof)), dt=0.25,
                   param=ParameterPoint((float(i), rng.uniform(-5, 5))))
        for i in range(n_traj)
    )
    sset = SnapshotSet(trajs)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "set.lsdi")
        save_snapshots(sset, path)
        back = load_snapshots(path)
    np.testing.assert_array_equal(back.tensor(), sset.tensor())
    np.testing.assert_array_equal(back.param_matrix(), sset.param_matrix())
    assert back.dt == sset.dt
