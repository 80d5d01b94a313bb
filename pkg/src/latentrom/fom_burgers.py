"""Implicit full-order solver for the 1D inviscid Burgers benchmark.

Space: first-order backward (upwind) difference of the advective form
``u * du/dx`` on a uniform periodic grid; time: backward Euler with a Newton
solve per step. The same discrete operator backs the PDE-residual estimator
used by residual-based greedy sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .data_model import ParameterGrid, ParameterPoint, SnapshotSet, Trajectory
from .errors import NumericalError


@dataclass(frozen=True)
class BurgersConfig:
    x_min: float = -3.0
    x_max: float = 3.0
    n_x: int = 201
    dt: float = 5e-3
    t_max: float = 1.0
    newton_tol: float = 1e-9
    newton_max_iter: int = 25

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be less than x_max")
        if self.n_x < 3:
            raise ValueError("n_x must be at least 3")
        if self.dt <= 0 or self.t_max <= 0:
            raise ValueError("dt and t_max must be positive")
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def n_steps(self) -> int:
        """Number of backward-Euler steps (at least one)."""
        return max(1, int(round(self.t_max / self.dt)))

    def x_grid(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_x)


def burgers_initial_condition(mu: ParameterPoint, x_grid: np.ndarray) -> np.ndarray:
    """Gaussian pulse ``a * exp(-x^2 / (2 w^2))`` for mu = {a, w}."""
    if mu.n_dims != 2:
        raise ValueError("Burgers initial condition expects a 2-component parameter {a, w}")
    a, w = mu.values
    if w == 0:
        raise ValueError("pulse width w must be nonzero")
    x = np.asarray(x_grid, dtype=float)
    return a * np.exp(-(x**2) / (2.0 * w**2))


def _upwind_dx(u: np.ndarray, dx: float) -> np.ndarray:
    """Backward difference with periodic wrap; the left neighbour of node 0 is
    node n-2 because node n-1 duplicates node 0."""
    d = np.empty_like(u)
    d[1:] = (u[1:] - u[:-1]) / dx
    d[0] = (u[0] - u[-2]) / dx
    return d


def burgers_residual(u_n, u_prev, mu: ParameterPoint, dt: float, cfg: BurgersConfig) -> float:
    """L2 norm of the backward-Euler residual ``u_n - u_prev + dt * u_n * Dx(u_n)``."""
    u_n = np.asarray(u_n, dtype=float)
    u_prev = np.asarray(u_prev, dtype=float)
    if u_n.shape != (cfg.n_x,) or u_prev.shape != (cfg.n_x,):
        raise ValueError(
            f"state length mismatch: expected {cfg.n_x}, got {u_n.shape} and {u_prev.shape}")
    r = u_n - u_prev + dt * u_n * _upwind_dx(u_n, cfg.dx)
    return float(np.linalg.norm(r))


class _ImplicitStepper:
    """Newton solver for one backward-Euler step on the periodic dofs.

    Unknowns are nodes 0..n_x-2; node n_x-1 mirrors node 0. The Jacobian is
    lower bidiagonal plus one corner entry, assembled once in CSC layout and
    refreshed in place each iteration.
    """

    def __init__(self, cfg: BurgersConfig):
        self.cfg = cfg
        n = cfg.n_x - 1
        self.n = n
        rows = []
        cols = []
        for j in range(n):
            rows.append(j)
            cols.append(j)
            rows.append(j)
            cols.append((j - 1) % n)
        coo = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        self._csc = coo.tocsc()
        # map (diag, sub) slots to positions in csc.data
        order = np.lexsort((np.array(rows), np.array(cols)))
        self._diag_idx = np.empty(n, dtype=int)
        self._sub_idx = np.empty(n, dtype=int)
        data_pos = np.empty(len(rows), dtype=int)
        data_pos[order] = np.arange(len(rows))
        for k, (j, c) in enumerate(zip(rows, cols)):
            if j == c:
                self._diag_idx[j] = data_pos[k]
            else:
                self._sub_idx[j] = data_pos[k]

    def residual_vec(self, v, v_prev):
        cfg = self.cfg
        dv = np.empty_like(v)
        dv[1:] = (v[1:] - v[:-1]) / cfg.dx
        dv[0] = (v[0] - v[-1]) / cfg.dx
        return v - v_prev + cfg.dt * v * dv, dv

    def step(self, u_prev_full: np.ndarray, step_index: int) -> np.ndarray:
        cfg = self.cfg
        n = self.n
        v_prev = u_prev_full[:n].copy()
        v = v_prev.copy()
        res_norm = np.inf
        for _ in range(cfg.newton_max_iter):
            r, dv = self.residual_vec(v, v_prev)
            res_norm = _full_norm(r)
            if res_norm <= cfg.newton_tol:
                full = np.empty(cfg.n_x)
                full[:n] = v
                full[n] = v[0]
                return full
            # J = I + dt*(diag(Dx v) + diag(v) * (I - S)/dx), S = periodic shift
            diag = 1.0 + cfg.dt * (dv + v / cfg.dx)
            sub = -cfg.dt * v / cfg.dx  # coefficient of v_{j-1} (wraps at j=0)
            self._csc.data[self._diag_idx] = diag
            self._csc.data[self._sub_idx] = sub
            try:
                delta = spla.spsolve(self._csc, r)
            except RuntimeError as exc:  # singular factorization
                raise NumericalError(
                    f"Newton linear solve failed at step {step_index}: {exc}") from exc
            if not np.all(np.isfinite(delta)):
                raise NumericalError(f"singular Newton Jacobian at step {step_index}")
            v = v - delta
        raise NumericalError(
            f"Newton did not converge at step {step_index}: "
            f"residual {res_norm:.3e} after {cfg.newton_max_iter} iterations")


def _full_norm(r_unique: np.ndarray) -> float:
    """Norm of the residual over the full grid, where the duplicated endpoint
    contributes the node-0 entry twice."""
    return float(np.sqrt(np.dot(r_unique, r_unique) + r_unique[0] ** 2))


def burgers_solve(mu: ParameterPoint, cfg: BurgersConfig) -> Trajectory:
    """Integrate the FOM from the Gaussian-pulse initial condition.

    Every accepted step satisfies the implicit residual (as measured by
    :func:`burgers_residual`) to within ``cfg.newton_tol``.
    """
    u0 = burgers_initial_condition(mu, cfg.x_grid())
    stepper = _ImplicitStepper(cfg)
    n_steps = cfg.n_steps
    states = np.empty((n_steps + 1, cfg.n_x))
    states[0] = u0
    u = u0
    for k in range(1, n_steps + 1):
        u = stepper.step(u, k)
        states[k] = u
    return Trajectory(states=states, dt=cfg.dt, param=mu)


def residual_sample_indices(n_steps: int, n_samples: int) -> np.ndarray:
    """Uniformly spaced time indices in [1, N_t], always including the final step."""
    if not 1 <= n_samples <= n_steps:
        raise ValueError(f"n_samples must lie in [1, {n_steps}], got {n_samples}")
    if n_samples == 1:
        return np.array([n_steps])
    return np.unique(np.rint(np.linspace(1, n_steps, n_samples)).astype(int))


def time_averaged_residual(states: np.ndarray, mu: ParameterPoint, n_samples: int,
                           cfg: BurgersConfig) -> float:
    """Mean PDE-residual norm over ``n_samples`` uniformly spaced steps.

    ``states`` is any (N_t+1, N_u) field (FOM or ROM prediction)."""
    states = np.asarray(states, dtype=float)
    n_steps = states.shape[0] - 1
    idx = residual_sample_indices(n_steps, n_samples)
    total = 0.0
    for n in idx:
        total += burgers_residual(states[n], states[n - 1], mu, cfg.dt, cfg)
    return total / len(idx)


def default_residual_samples(n_steps: int) -> int:
    return min(n_steps, 20)


class BurgersFom:
    """Facade bundling the solve / initial-condition / residual operations the
    greedy training loop needs."""

    def __init__(self, cfg: BurgersConfig, n_residual_samples: int | None = None):
        self.cfg = cfg
        self.n_residual_samples = (
            n_residual_samples
            if n_residual_samples is not None
            else default_residual_samples(cfg.n_steps)
        )

    def initial_state(self, mu: ParameterPoint) -> np.ndarray:
        return burgers_initial_condition(mu, self.cfg.x_grid())

    def solve(self, mu: ParameterPoint) -> Trajectory:
        return burgers_solve(mu, self.cfg)

    def score_residual(self, states: np.ndarray, mu: ParameterPoint) -> float:
        return time_averaged_residual(states, mu, self.n_residual_samples, self.cfg)


def solve_grid(grid: ParameterGrid, cfg: BurgersConfig) -> SnapshotSet:
    """Run the FOM at every grid point (points are independent solves)."""
    trajs = tuple(burgers_solve(p, cfg) for p in grid.points)
    return SnapshotSet(trajs)
