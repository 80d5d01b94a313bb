import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentrom import (
    BurgersConfig,
    BurgersFom,
    NumericalError,
    ParameterPoint,
    burgers_initial_condition,
    burgers_residual,
    burgers_solve,
    make_parameter_grid,
    residual_sample_indices,
    solve_grid,
    time_averaged_residual,
)
from latentrom.fom_burgers import _ImplicitStepper, default_residual_samples


def small_cfg(**kw):
    base = dict(x_min=-3.0, x_max=3.0, n_x=41, dt=0.02, t_max=0.2)
    base.update(kw)
    return BurgersConfig(**base)


MU = ParameterPoint((0.8, 1.0))


# ---------------------------------------------------------------------------
# initial condition

def test_initial_condition_peak_and_symmetry():
    cfg = small_cfg()
    x = cfg.x_grid()
    u0 = burgers_initial_condition(ParameterPoint((0.8, 1.0)), x)
    assert u0[np.argmin(np.abs(x))] == pytest.approx(0.8, abs=1e-15)
    assert u0.max() == pytest.approx(0.8)
    # even in x: endpoints at +/-3 agree
    np.testing.assert_allclose(u0, u0[::-1], atol=1e-15)


def test_initial_condition_known_value():
    u = burgers_initial_condition(ParameterPoint((1.0, 1.0)), np.array([1.0]))
    assert u[0] == pytest.approx(np.exp(-0.5), abs=1e-12)


def test_initial_condition_rejects_bad_parameters():
    with pytest.raises(ValueError):
        burgers_initial_condition(ParameterPoint((1.0, 0.0)), np.zeros(3))
    with pytest.raises(ValueError):
        burgers_initial_condition(ParameterPoint((1.0,)), np.zeros(3))


# ---------------------------------------------------------------------------
# time stepping

def test_constant_state_is_a_fixed_point():
    cfg = small_cfg()
    const = np.full(cfg.n_x, 0.7)
    assert burgers_residual(const, const, MU, cfg.dt, cfg) == 0.0
    stepped = _ImplicitStepper(cfg).step(const, 1)
    np.testing.assert_allclose(stepped, const, atol=cfg.newton_tol)


def test_single_step_when_dt_exceeds_t_max():
    cfg = small_cfg(dt=2.0, t_max=1.0)
    assert cfg.n_steps == 1
    traj = burgers_solve(MU, cfg)
    assert traj.states.shape == (2, cfg.n_x)


def test_step_count_rounding():
    assert small_cfg(dt=0.02, t_max=1.0).n_steps == 50
    assert small_cfg(dt=0.3, t_max=1.0).n_steps == 3


def test_solution_rows_satisfy_residual_tolerance():
    cfg = small_cfg()
    traj = burgers_solve(MU, cfg)
    for n in range(1, traj.n_steps + 1):
        r = burgers_residual(traj.states[n], traj.states[n - 1], MU, cfg.dt, cfg)
        assert r <= cfg.newton_tol


def test_periodic_endpoint_duplication():
    cfg = small_cfg()
    traj = burgers_solve(MU, cfg)
    np.testing.assert_array_equal(traj.states[:, 0], traj.states[:, -1])


def test_newton_failure_reports_step_index():
    cfg = small_cfg(dt=5.0, t_max=5.0, newton_max_iter=1)
    with pytest.raises(NumericalError, match="step 1"):
        burgers_solve(ParameterPoint((0.8, 1.0)), cfg)


# ---------------------------------------------------------------------------
# residual scoring

def test_residual_hand_stencil():
    # 5-node grid, dx = 1; node 4 duplicates node 0.
    cfg = BurgersConfig(x_min=0.0, x_max=4.0, n_x=5, dt=0.5, t_max=1.0)
    u_prev = np.array([0.0, 1.0, 2.0, 1.0, 0.0])
    u_n = np.array([0.1, 1.2, 1.9, 0.8, 0.1])
    dx = np.array([
        (u_n[0] - u_n[3]) / 1.0,  # left neighbour of node 0 is node 3
        (u_n[1] - u_n[0]) / 1.0,
        (u_n[2] - u_n[1]) / 1.0,
        (u_n[3] - u_n[2]) / 1.0,
        (u_n[4] - u_n[3]) / 1.0,
    ])
    expected = np.linalg.norm(u_n - u_prev + cfg.dt * u_n * dx)
    got = burgers_residual(u_n, u_prev, MU, cfg.dt, cfg)
    assert got == pytest.approx(expected, rel=1e-14)


def test_residual_grows_with_perturbation():
    cfg = small_cfg()
    traj = burgers_solve(MU, cfg)
    u_n, u_prev = traj.states[3], traj.states[2]
    bump = np.sin(np.linspace(0, 2 * np.pi, cfg.n_x))
    values = [burgers_residual(u_n + d * bump, u_prev, MU, cfg.dt, cfg)
              for d in (0.0, 1e-4, 1e-3, 1e-2)]
    assert values[0] <= cfg.newton_tol
    assert values[1] < values[2] < values[3]


def test_residual_shape_check():
    cfg = small_cfg()
    with pytest.raises(ValueError):
        burgers_residual(np.zeros(3), np.zeros(3), MU, cfg.dt, cfg)


def test_time_averaged_residual_on_exact_solution():
    cfg = small_cfg()
    traj = burgers_solve(MU, cfg)
    avg = time_averaged_residual(traj.states, MU, cfg.n_steps, cfg)
    assert avg <= cfg.newton_tol
    const = np.tile(traj.states[0], (cfg.n_steps + 1, 1))
    # constant-in-time states are not a solution: strictly positive score
    assert time_averaged_residual(const, MU, 5, cfg) > 1e-3


def test_time_averaged_residual_range_check():
    cfg = small_cfg()
    states = np.zeros((cfg.n_steps + 1, cfg.n_x))
    with pytest.raises(ValueError):
        time_averaged_residual(states, MU, 0, cfg)
    with pytest.raises(ValueError):
        time_averaged_residual(states, MU, cfg.n_steps + 1, cfg)


def test_residual_sample_indices_examples():
    idx = residual_sample_indices(200, 20)
    assert idx[-1] == 200
    assert idx[0] >= 1
    assert np.all(np.diff(idx) > 0)
    np.testing.assert_array_equal(residual_sample_indices(7, 1), [7])
    np.testing.assert_array_equal(residual_sample_indices(5, 5), [1, 2, 3, 4, 5])
    assert default_residual_samples(7) == 7
    assert default_residual_samples(500) == 20


@settings(max_examples=50, deadline=None)
@given(n_steps=st.integers(1, 400), frac=st.floats(0.0, 1.0))
def test_residual_sample_indices_property(n_steps, frac):
    n_samples = 1 + int(frac * (n_steps - 1))
    idx = residual_sample_indices(n_steps, n_samples)
    assert idx[-1] == n_steps
    assert idx[0] >= 1
    assert np.all(np.diff(idx) > 0)
    assert len(idx) <= n_samples


# ---------------------------------------------------------------------------
# convergence under refinement

def test_refinement_consistency_ratio():
    # halving dx and dt roughly halves the gap to a much finer reference
    mu = ParameterPoint((0.8, 1.0))
    ref_cfg = BurgersConfig(n_x=801, dt=5e-4, t_max=0.5)
    ref = burgers_solve(mu, ref_cfg).states[-1]
    gaps = []
    for n_x, dt, stride in ((101, 4e-3, 8), (201, 2e-3, 4)):
        cfg = BurgersConfig(n_x=n_x, dt=dt, t_max=0.5)
        u = burgers_solve(mu, cfg).states[-1]
        shared = ref[::stride]
        gaps.append(np.linalg.norm(u - shared) / np.linalg.norm(shared))
    ratio = gaps[0] / gaps[1]
    assert 1.5 <= ratio <= 3.0


def test_close_to_fine_reference():
    mu = ParameterPoint((0.8, 1.0))
    coarse = burgers_solve(mu, BurgersConfig(n_x=201, dt=2e-3, t_max=0.5)).states[-1]
    fine = burgers_solve(mu, BurgersConfig(n_x=401, dt=1e-3, t_max=0.5)).states[-1]
    gap = np.linalg.norm(coarse - fine[::2]) / np.linalg.norm(fine[::2])
    assert gap < 0.05


# ---------------------------------------------------------------------------
# facade and grid sweep

def test_fom_facade_and_solve_grid():
    cfg = small_cfg()
    fom = BurgersFom(cfg)
    u0 = fom.initial_state(MU)
    np.testing.assert_array_equal(u0, burgers_initial_condition(MU, cfg.x_grid()))
    traj = fom.solve(MU)
    assert fom.score_residual(traj.states, MU) <= cfg.newton_tol
    grid = make_parameter_grid([(0.7, 0.9), (0.9, 1.1)], [2, 2])
    sset = solve_grid(grid, cfg)
    assert sset.n_traj == 4
    assert sset.params == tuple(grid.points)
    assert sset.dt == cfg.dt
