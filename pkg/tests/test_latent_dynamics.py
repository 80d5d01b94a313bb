import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentrom import (
    LibrarySpec,
    NumericalError,
    build_library,
    build_test_functions,
    coefficients_csv,
    finite_difference_dz,
    sindy_loss,
    strong_fit,
    weak_fit,
    weak_sindy_loss,
    weak_system,
)
from latentrom.latent_dynamics import (
    default_weak_params,
    finite_difference_adjoint,
    library_jacobian,
    library_vjp,
)

LIN = LibrarySpec(include_constant=True, poly_degree=1)
QUAD = LibrarySpec(include_constant=True, poly_degree=2)
LIN_NOCONST = LibrarySpec(include_constant=False, poly_degree=1)


# ---------------------------------------------------------------------------
# library construction

def test_library_linear_row():
    np.testing.assert_array_equal(build_library(np.array([2.0, 3.0]), LIN),
                                  [1.0, 2.0, 3.0])


def test_library_quadratic_row():
    np.testing.assert_array_equal(build_library(np.array([2.0, 3.0]), QUAD),
                                  [1.0, 2.0, 3.0, 4.0, 6.0, 9.0])


def test_library_zero_state():
    np.testing.assert_array_equal(build_library(np.zeros(2), LIN), [1.0, 0.0, 0.0])


def test_library_batched_matches_rowwise():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((6, 3))
    theta = build_library(z, QUAD)
    assert theta.shape == (6, QUAD.n_terms(3))
    for n in range(6):
        np.testing.assert_allclose(theta[n], build_library(z[n], QUAD), atol=0)


def test_term_names_quadratic():
    names = QUAD.term_names(2)
    assert names == ["1", "z1", "z2", "z1*z1", "z1*z2", "z2*z2"]


def test_library_rejects_bad_degree():
    with pytest.raises(ValueError):
        LibrarySpec(include_constant=True, poly_degree=3)


@settings(max_examples=40, deadline=None)
@given(n_z=st.integers(1, 6), degree=st.integers(1, 2), const=st.booleans())
def test_term_count_formula(n_z, degree, const):
    spec = LibrarySpec(include_constant=const, poly_degree=degree)
    expected = int(const) + n_z + (n_z * (n_z + 1) // 2 if degree == 2 else 0)
    assert spec.n_terms(n_z) == expected
    z = np.linspace(-1, 1, n_z)
    assert build_library(z, spec).shape == (expected,)
    assert len(spec.term_names(n_z)) == expected


def test_library_jacobian_matches_finite_differences():
    rng = np.random.default_rng(1)
    z = rng.standard_normal(4)
    jac = library_jacobian(z, QUAD)
    h = 1e-6
    for d in range(4):
        zp, zm = z.copy(), z.copy()
        zp[d] += h
        zm[d] -= h
        fd = (build_library(zp, QUAD) - build_library(zm, QUAD)) / (2 * h)
        np.testing.assert_allclose(jac[:, d], fd, atol=1e-8)


def test_library_vjp_matches_jacobian():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((5, 3))
    dtheta = rng.standard_normal((5, QUAD.n_terms(3)))
    pulled = library_vjp(z, dtheta, QUAD)
    for n in range(5):
        np.testing.assert_allclose(pulled[n],
                                   dtheta[n] @ library_jacobian(z[n], QUAD),
                                   atol=1e-12)


# ---------------------------------------------------------------------------
# finite differences in time

def test_fd_exact_on_quadratic_three_points():
    dt = 0.3
    t = dt * np.arange(3)
    z = (t**2)[:, None]
    dz = finite_difference_dz(z, dt)
    np.testing.assert_allclose(dz[:, 0], [0.0, 2 * dt, 4 * dt], atol=1e-12)


def test_fd_exact_on_linear_and_constant():
    dt = 0.1
    t = dt * np.arange(9)
    z = np.column_stack([3.0 * t - 1.0, np.full(9, 2.5)])
    dz = finite_difference_dz(z, dt)
    np.testing.assert_allclose(dz[:, 0], 3.0, atol=1e-12)
    np.testing.assert_allclose(dz[:, 1], 0.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), c=st.floats(-3, 3),
       n=st.integers(3, 40))
def test_fd_exact_on_quadratics_property(a, b, c, n):
    dt = 0.05
    t = dt * np.arange(n)
    z = (a * t**2 + b * t + c)[:, None]
    dz = finite_difference_dz(z, dt)
    np.testing.assert_allclose(dz[:, 0], 2 * a * t + b, atol=1e-9)


def test_fd_input_validation():
    with pytest.raises(ValueError):
        finite_difference_dz(np.zeros((2, 1)), 0.1)
    with pytest.raises(ValueError):
        finite_difference_dz(np.zeros((4, 1)), 0.0)


def test_fd_adjoint_identity():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((11, 3))
    w = rng.standard_normal((11, 3))
    dt = 0.07
    lhs = np.sum(finite_difference_dz(z, dt) * w)
    rhs = np.sum(z * finite_difference_adjoint(w, dt))
    assert lhs == pytest.approx(rhs, rel=1e-12)


# ---------------------------------------------------------------------------
# strong-form identification

def test_sindy_loss_zero_on_exact_dynamics():
    rng = np.random.default_rng(4)
    z = rng.standard_normal((1, 8, 2))
    xi = rng.standard_normal((1, 2, LIN.n_terms(2)))
    dz = build_library(z[0], LIN) @ xi[0].T
    assert sindy_loss(z, dz[None], xi, LIN) == pytest.approx(0.0, abs=1e-28)


def test_sindy_loss_brute_force():
    rng = np.random.default_rng(5)
    z = rng.standard_normal((2, 5, 3))
    dz = rng.standard_normal((2, 5, 3))
    xi = rng.standard_normal((2, 3, LIN.n_terms(3)))
    total = 0.0
    for i in range(2):
        resid = dz[i] - build_library(z[i], LIN) @ xi[i].T
        total += np.sum(resid**2) / 3
    assert sindy_loss(z, dz, xi, LIN) == pytest.approx(total / 2, rel=1e-13)


def test_sindy_loss_with_zero_coefficients():
    rng = np.random.default_rng(6)
    z = rng.standard_normal((1, 4, 2))
    dz = rng.standard_normal((1, 4, 2))
    xi = np.zeros((1, 2, LIN.n_terms(2)))
    expected = np.sum(dz**2) / 2
    assert sindy_loss(z, dz, xi, LIN) == pytest.approx(expected, rel=1e-13)


def test_strong_fit_recovers_exponential_decay():
    dt = 1e-3
    t = dt * np.arange(1001)
    z = np.exp(-t)[:, None]
    dz = finite_difference_dz(z, dt)
    xi = strong_fit(z, dz, LIN)
    assert xi.shape == (1, 2)
    assert xi[0, 1] == pytest.approx(-1.0, abs=1e-4)
    assert abs(xi[0, 0]) < 1e-4


def test_strong_fit_zero_velocity_gives_zero_coefficients():
    rng = np.random.default_rng(7)
    z = rng.standard_normal((20, 2))
    xi = strong_fit(z, np.zeros((20, 2)), LIN)
    np.testing.assert_allclose(xi, 0.0, atol=1e-12)


def test_strong_fit_recovers_rotation():
    a_true = np.array([[0.0, 1.0], [-1.0, 0.0]])
    dt = 1e-3
    t = dt * np.arange(1001)
    z = np.column_stack([np.sin(t), np.cos(t)])
    dz = finite_difference_dz(z, dt)
    xi = strong_fit(z, dz, LIN_NOCONST)
    np.testing.assert_allclose(xi, a_true, atol=1e-3)


def test_strong_fit_rank_deficiency_raises():
    z = np.ones((10, 1))  # constant column collides with the constant term
    dz = np.zeros((10, 1))
    with pytest.raises(NumericalError, match="condition"):
        strong_fit(z, dz, LIN)
    xi = strong_fit(z, dz, LIN, ridge=1e-8)  # ridge regularization rescues it
    assert np.all(np.isfinite(xi))


# ---------------------------------------------------------------------------
# weak-form identification

def test_test_function_bank_shape_and_support():
    bank = build_test_functions(n_steps=30, dt=0.1, n_k=5, m_t=4, p=7)
    assert bank.phi.shape == (5, 31)
    assert bank.n_functions == 5
    for k, c in enumerate(bank.centers):
        row = bank.phi[k]
        assert row[c - 4] == 0.0 and row[c + 4] == 0.0
        assert np.all(row[: c - 4] == 0.0) and np.all(row[c + 5:] == 0.0)
        # peak value is dt * 1 at the centre
        assert row[c] == pytest.approx(0.1, rel=1e-12)
        assert np.sum(bank.dphi[k]) == pytest.approx(0.0, abs=1e-10)


def test_test_function_matches_closed_form_with_time_offset():
    # values depend only on t - t_a, so shifting the clock changes nothing
    dt, m_t, p = 0.05, 6, 7
    bank = build_test_functions(n_steps=20, dt=dt, n_k=1, m_t=m_t, p=p)
    c = bank.centers[0]
    offset = 5.0
    t = offset + dt * np.arange(21)
    t_a, t_b = t[c - m_t], t[c + m_t]
    window = slice(c - m_t, c + m_t + 1)
    expected = dt * ((t[window] - t_a) ** p) * ((t_b - t[window]) ** p) \
        / (m_t * dt) ** (2 * p)
    np.testing.assert_allclose(bank.phi[0, window], expected, rtol=1e-12)


def test_build_test_functions_validation():
    with pytest.raises(ValueError):
        build_test_functions(10, 0.1, n_k=2, m_t=6, p=7)  # support too wide
    with pytest.raises(ValueError):
        build_test_functions(10, 0.1, n_k=2, m_t=2, p=1)
    with pytest.raises(ValueError):
        build_test_functions(10, 0.1, n_k=0, m_t=2, p=7)


def test_default_weak_params():
    n_k, m_t = default_weak_params(201)
    assert m_t == 10
    assert n_k == 67
    n_k_small, m_t_small = default_weak_params(7)
    assert m_t_small >= 1 and 2 * m_t_small + 1 <= 7
    assert n_k_small >= 1


def test_weak_system_hand_check():
    dt = 0.1
    bank = build_test_functions(n_steps=10, dt=dt, n_k=2, m_t=3, p=2)
    rng = np.random.default_rng(8)
    z = rng.standard_normal((11, 2))
    g, b = weak_system(z, LIN, bank)
    theta = np.column_stack([np.ones(11), z])
    np.testing.assert_allclose(g, bank.phi @ theta, atol=0)
    np.testing.assert_allclose(b, -(bank.dphi @ z), atol=0)


def test_weak_system_zero_state():
    bank = build_test_functions(n_steps=12, dt=0.1, n_k=3, m_t=3, p=3)
    g, b = weak_system(np.zeros((13, 2)), LIN, bank)
    np.testing.assert_allclose(g[:, 0], np.sum(bank.phi, axis=1))
    np.testing.assert_allclose(g[:, 1:], 0.0)
    np.testing.assert_allclose(b, 0.0)


def test_weak_constant_latent_gives_zero_rhs():
    bank = build_test_functions(n_steps=20, dt=0.05, n_k=4, m_t=4, p=7)
    _, b = weak_system(np.full((21, 1), 3.0), LIN, bank)
    np.testing.assert_allclose(b, 0.0, atol=1e-10)


def test_weak_fit_recovers_exponential_decay():
    dt = 1e-3
    t = dt * np.arange(1001)
    z = np.exp(-t)[:, None]
    n_k, m_t = default_weak_params(1001)
    bank = build_test_functions(1000, dt, n_k, m_t, 7)
    g, b = weak_system(z, LIN, bank)
    xi = weak_fit(g, b)
    assert xi.shape == (1, 2)
    assert xi[0, 1] == pytest.approx(-1.0, abs=1e-3)


def test_weak_fit_zero_rhs_and_vector_rhs():
    bank = build_test_functions(n_steps=40, dt=0.02, n_k=8, m_t=5, p=7)
    rng = np.random.default_rng(9)
    z = rng.standard_normal((41, 2))
    g, b = weak_system(z, LIN, bank)
    np.testing.assert_allclose(weak_fit(g, np.zeros(8)), 0.0, atol=1e-12)
    full = weak_fit(g, b)
    col0 = weak_fit(g, b[:, 0])
    np.testing.assert_allclose(full[0], col0, atol=1e-12)


def test_weak_fit_underdetermined_raises():
    bank = build_test_functions(n_steps=40, dt=0.02, n_k=2, m_t=5, p=7)
    z = np.random.default_rng(10).standard_normal((41, 2))
    g, b = weak_system(z, LIN, bank)
    with pytest.raises(ValueError):
        weak_fit(g, b)


def test_strong_and_weak_agree_on_clean_rotation():
    a_true = np.array([[0.0, 1.0], [-1.0, 0.0]])
    dt = 1e-3
    t = dt * np.arange(1001)
    z = np.column_stack([np.sin(t), np.cos(t)])
    xi_s = strong_fit(z, finite_difference_dz(z, dt), LIN_NOCONST)
    n_k, m_t = default_weak_params(1001)
    bank = build_test_functions(1000, dt, n_k, m_t, 7)
    g, b = weak_system(z, LIN_NOCONST, bank)
    xi_w = weak_fit(g, b)
    np.testing.assert_allclose(xi_s, a_true, atol=1e-3)
    np.testing.assert_allclose(xi_w, a_true, atol=1e-3)
    np.testing.assert_allclose(xi_s, xi_w, atol=2e-3)


def test_weak_sindy_loss_zero_on_lsq_solution_of_consistent_system():
    dt = 1e-3
    t = dt * np.arange(501)
    z = np.exp(-t)[:, None]
    n_k, m_t = default_weak_params(501)
    bank = build_test_functions(500, dt, n_k, m_t, 7)
    g, b = weak_system(z, LIN, bank)
    xi = weak_fit(g, b)[None]
    loss_at_fit = weak_sindy_loss(z[None], xi, LIN, bank)
    loss_at_zero = weak_sindy_loss(z[None], np.zeros_like(xi), LIN, bank)
    assert loss_at_fit < 1e-9
    assert loss_at_zero > loss_at_fit


def test_coefficients_csv_layout():
    xi = np.arange(12, dtype=float).reshape(2, 2, 3)
    text = coefficients_csv(xi, LIN)
    lines = text.strip().splitlines()
    assert lines[0] == "trajectory,latent_dim,1,z1,z2"
    assert len(lines) == 5
    assert lines[1].startswith("0,0,")
    assert [float(v) for v in lines[-1].split(",")[2:]] == [9.0, 10.0, 11.0]
