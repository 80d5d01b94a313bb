"""Snapshot tensors, parameter grids, and binary persistence.

All container types are immutable after construction so they can be shared
freely between threads; every mutation-style operation returns a new object.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

SNAPSHOT_MAGIC = b"LSDI1\n"


def _frozen_array(a, dtype=float, ndim=None):
    arr = np.array(a, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-dimensional array, got {arr.ndim}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ParameterPoint:
    """A point in simulation-parameter space (unitless reals)."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 1:
            raise ValueError("a parameter point needs at least one component")
        if not all(np.isfinite(vals)):
            raise ValueError(f"non-finite parameter values: {vals}")
        object.__setattr__(self, "values", vals)

    @property
    def n_dims(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    def __str__(self):
        return ";".join(repr(v) for v in self.values)


@dataclass(frozen=True)
class ParameterGrid:
    """Uniform box grid in parameter space, ordered row-major with the last
    dimension varying fastest."""

    mins: tuple[float, ...]
    maxs: tuple[float, ...]
    steps: tuple[float, ...]
    counts: tuple[int, ...]
    points: tuple[ParameterPoint, ...]

    def __post_init__(self):
        if any(s <= 0 for s in self.steps):
            raise ValueError("grid steps must be positive")
        if len(self.points) != int(np.prod(self.counts)):
            raise ValueError("point count must equal the product of per-dimension counts")

    @property
    def n_dims(self) -> int:
        return len(self.mins)

    def __len__(self):
        return len(self.points)


def make_parameter_grid(ranges, counts) -> ParameterGrid:
    """Build a uniform grid from per-dimension (min, max) ranges and counts.

    Points are generated by index arithmetic (``min + i * step``) so repeated
    construction is bit-reproducible, and ordered row-major (last dimension
    fastest).
    """
    if len(ranges) != len(counts):
        raise ValueError("ranges and counts must have the same length")
    if len(ranges) == 0:
        raise ValueError("at least one dimension is required")
    mins, maxs, steps = [], [], []
    axes = []
    for (lo, hi), cnt in zip(ranges, counts):
        lo, hi, cnt = float(lo), float(hi), int(cnt)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError(f"non-finite grid bounds ({lo}, {hi})")
        if lo >= hi:
            raise ValueError(f"grid range must satisfy min < max, got ({lo}, {hi})")
        if cnt < 2:
            raise ValueError(f"per-dimension count must be at least 2, got {cnt}")
        step = (hi - lo) / (cnt - 1)
        mins.append(lo)
        maxs.append(hi)
        steps.append(step)
        axes.append([lo + i * step for i in range(cnt)])
    points = []
    for idx in np.ndindex(*[len(ax) for ax in axes]):
        points.append(ParameterPoint(tuple(axes[d][i] for d, i in enumerate(idx))))
    return ParameterGrid(
        mins=tuple(mins),
        maxs=tuple(maxs),
        steps=tuple(steps),
        counts=tuple(int(c) for c in counts),
        points=tuple(points),
    )


def parameter_grid_csv(grid: ParameterGrid) -> str:
    """CSV rendering of a grid: header ``dim0,dim1,...``, one point per row."""
    lines = [",".join(f"dim{d}" for d in range(grid.n_dims))]
    for p in grid.points:
        lines.append(",".join(repr(v) for v in p.values))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Trajectory:
    """One simulated solution: snapshot matrix of shape (N_t+1, N_u)."""

    states: np.ndarray
    dt: float
    param: ParameterPoint

    def __post_init__(self):
        states = _frozen_array(self.states, ndim=2)
        if states.shape[0] < 2 or states.shape[1] < 1:
            raise ValueError(f"trajectory needs at least 2 snapshots and 1 dof, got {states.shape}")
        if not np.all(np.isfinite(states)):
            raise ValueError("trajectory states contain non-finite entries")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n_steps(self) -> int:
        """Number of time steps N_t (states hold N_t+1 snapshots)."""
        return self.states.shape[0] - 1

    @property
    def n_dof(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class SnapshotSet:
    """A bundle of trajectories sharing shape and time step; logically the
    third-order tensor of shape (N_mu, N_t+1, N_u)."""

    trajectories: tuple[Trajectory, ...]

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise ValueError("a snapshot set needs at least one trajectory")
        t0 = trajs[0]
        for t in trajs[1:]:
            if t.states.shape != t0.states.shape:
                raise ValueError(
                    f"trajectory shape {t.states.shape} does not match {t0.states.shape}")
            if t.dt != t0.dt:
                raise ValueError(f"trajectory dt {t.dt} does not match {t0.dt}")
        seen = set()
        for t in trajs:
            if t.param.values in seen:
                raise ValueError(f"duplicate parameter point {t.param}")
            seen.add(t.param.values)
        object.__setattr__(self, "trajectories", trajs)

    @property
    def n_traj(self) -> int:
        return len(self.trajectories)

    @property
    def n_steps(self) -> int:
        return self.trajectories[0].n_steps

    @property
    def n_dof(self) -> int:
        return self.trajectories[0].n_dof

    @property
    def dt(self) -> float:
        return self.trajectories[0].dt

    @property
    def params(self) -> tuple[ParameterPoint, ...]:
        return tuple(t.param for t in self.trajectories)

    def tensor(self) -> np.ndarray:
        """Stack trajectories into the (N_mu, N_t+1, N_u) tensor (a copy)."""
        return np.stack([t.states for t in self.trajectories])

    def param_matrix(self) -> np.ndarray:
        return np.array([p.values for p in self.params], dtype=float)


def append_snapshot(snapshots: SnapshotSet, traj: Trajectory) -> SnapshotSet:
    """Return a new set with one more trajectory; existing members are shared,
    never copied or mutated."""
    return SnapshotSet(snapshots.trajectories + (traj,))


def save_snapshots(snapshots: SnapshotSet, path) -> None:
    """Write the LSDI1 binary format (little-endian, 64-bit floats)."""
    n_mu = snapshots.n_traj
    n_rows = snapshots.n_steps + 1
    n_u = snapshots.n_dof
    n_pdims = snapshots.params[0].n_dims
    with open(path, "wb") as f:
        f.write(SNAPSHOT_MAGIC)
        f.write(struct.pack("<QQQQ", n_mu, n_rows, n_u, n_pdims))
        f.write(struct.pack("<d", snapshots.dt))
        f.write(np.ascontiguousarray(snapshots.param_matrix(), dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(snapshots.tensor(), dtype="<f8").tobytes())


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated snapshot file while reading {what}")
    return data


def load_snapshots(path) -> SnapshotSet:
    """Read a file written by :func:`save_snapshots` (bit-exact round-trip)."""
    with open(path, "rb") as f:
        magic = f.read(len(SNAPSHOT_MAGIC))
        if magic != SNAPSHOT_MAGIC:
            raise FormatError(f"bad snapshot magic {magic!r}")
        n_mu, n_rows, n_u, n_pdims = struct.unpack("<QQQQ", _read_exact(f, 32, "header"))
        (dt,) = struct.unpack("<d", _read_exact(f, 8, "dt"))
        params = np.frombuffer(
            _read_exact(f, 8 * n_mu * n_pdims, "parameters"), dtype="<f8"
        ).reshape(n_mu, n_pdims)
        tensor = np.frombuffer(
            _read_exact(f, 8 * n_mu * n_rows * n_u, "tensor"), dtype="<f8"
        ).reshape(n_mu, n_rows, n_u)
        if f.read(1):
            raise FormatError("trailing bytes after snapshot payload")
    trajs = [
        Trajectory(states=tensor[i], dt=dt, param=ParameterPoint(tuple(params[i])))
        for i in range(n_mu)
    ]
    return SnapshotSet(tuple(trajs))
