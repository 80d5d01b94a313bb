"""Candidate-term library and latent-ODE identification.

Two identification routes are provided: a strong-form route that regresses
finite-difference time derivatives onto the library, and a weak-form route
that integrates the ODE residual against compactly supported polynomial test
functions (robust to noise because no pointwise derivative is estimated).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError


@dataclass(frozen=True)
class LibrarySpec:
    """Declarative description of the candidate terms.

    ``poly_degree`` 1 keeps linear terms only; 2 adds every quadratic monomial
    ``z_i z_j`` with ``i <= j``.
    """

    include_constant: bool = True
    poly_degree: int = 1

    def __post_init__(self):
        if self.poly_degree not in (1, 2):
            raise ValueError(f"poly_degree must be 1 or 2, got {self.poly_degree}")

    def n_terms(self, n_z: int) -> int:
        n = (1 if self.include_constant else 0) + n_z
        if self.poly_degree == 2:
            n += n_z * (n_z + 1) // 2
        return n

    def term_names(self, n_z: int) -> list[str]:
        names = ["1"] if self.include_constant else []
        names += [f"z{j + 1}" for j in range(n_z)]
        if self.poly_degree == 2:
            names += [
                f"z{a + 1}*z{b + 1}"
                for a in range(n_z)
                for b in range(a, n_z)
            ]
        return names


def build_library(z: np.ndarray, spec: LibrarySpec) -> np.ndarray:
    """Evaluate the candidate terms row-wise.

    ``z`` may be a single latent state (N_z,) or a trajectory (N_t+1, N_z);
    columns are ordered [1?, z_1..z_Nz, z_1^2, z_1 z_2, ..., z_Nz^2].
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zz = z[None, :] if single else z
    n, n_z = zz.shape
    cols = []
    if spec.include_constant:
        cols.append(np.ones((n, 1)))
    cols.append(zz)
    if spec.poly_degree == 2:
        quad = [zz[:, a : a + 1] * zz[:, b : b + 1] for a in range(n_z) for b in range(a, n_z)]
        cols.append(np.hstack(quad))
    theta = np.hstack(cols)
    return theta[0] if single else theta


def library_jacobian(z: np.ndarray, spec: LibrarySpec) -> np.ndarray:
    """d(theta)/dz for a single latent state; shape (N_l, N_z)."""
    z = np.asarray(z, dtype=float)
    n_z = z.shape[0]
    rows = []
    if spec.include_constant:
        rows.append(np.zeros((1, n_z)))
    rows.append(np.eye(n_z))
    if spec.poly_degree == 2:
        quad = np.zeros((n_z * (n_z + 1) // 2, n_z))
        k = 0
        for a in range(n_z):
            for b in range(a, n_z):
                quad[k, a] += z[b]
                quad[k, b] += z[a]
                k += 1
        rows.append(quad)
    return np.vstack(rows)


def library_vjp(z: np.ndarray, dtheta: np.ndarray, spec: LibrarySpec) -> np.ndarray:
    """Vectorized pullback of library rows: given upstream gradients on
    theta(z_n) rows, return gradients on z_n rows.

    ``z`` and the result have shape (n, N_z); ``dtheta`` has shape (n, N_l).
    """
    z = np.asarray(z, dtype=float)
    n, n_z = z.shape
    off = 1 if spec.include_constant else 0
    dz = dtheta[:, off : off + n_z].copy()
    if spec.poly_degree == 2:
        k = off + n_z
        for a in range(n_z):
            for b in range(a, n_z):
                g = dtheta[:, k]
                dz[:, a] += g * z[:, b]
                dz[:, b] += g * z[:, a]
                k += 1
    return dz


def finite_difference_dz(z: np.ndarray, dt: float) -> np.ndarray:
    """Second-order time derivatives: central interior, one-sided at the ends.

    ``z`` has shape (N_t+1, N_z) with N_t >= 2 (three points minimum)."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[0] < 3:
        raise ValueError("finite differences need at least 3 time samples")
    if dt <= 0:
        raise ValueError("dt must be positive")
    dz = np.empty_like(z)
    dz[1:-1] = (z[2:] - z[:-2]) / (2.0 * dt)
    dz[0] = (-3.0 * z[0] + 4.0 * z[1] - z[2]) / (2.0 * dt)
    dz[-1] = (3.0 * z[-1] - 4.0 * z[-2] + z[-3]) / (2.0 * dt)
    return dz


def finite_difference_adjoint(g: np.ndarray, dt: float) -> np.ndarray:
    """Adjoint of :func:`finite_difference_dz` as a linear map in z
    (used by reverse-mode differentiation of the strong-form loss)."""
    g = np.asarray(g, dtype=float)
    out = np.zeros_like(g)
    c = 1.0 / (2.0 * dt)
    # interior rows: dz[n] = (z[n+1] - z[n-1]) * c
    out[2:] += g[1:-1] * c
    out[:-2] -= g[1:-1] * c
    # first row: (-3 z0 + 4 z1 - z2) * c
    out[0] += -3.0 * c * g[0]
    out[1] += 4.0 * c * g[0]
    out[2] += -1.0 * c * g[0]
    # last row: (3 zN - 4 zN-1 + zN-2) * c
    out[-1] += 3.0 * c * g[-1]
    out[-2] += -4.0 * c * g[-1]
    out[-3] += 1.0 * c * g[-1]
    return out


def sindy_loss(z_tensor: np.ndarray, dz_tensor: np.ndarray, xi: np.ndarray,
               spec: LibrarySpec) -> float:
    """Strong-form identification loss: mean over trajectories of the mean over
    latent dimensions of the squared residual-column norms."""
    z_tensor = np.asarray(z_tensor, dtype=float)
    dz_tensor = np.asarray(dz_tensor, dtype=float)
    xi = np.asarray(xi, dtype=float)
    n_mu, _, n_z = z_tensor.shape
    total = 0.0
    for i in range(n_mu):
        theta = build_library(z_tensor[i], spec)
        resid = dz_tensor[i] - theta @ xi[i].T
        total += float(np.sum(resid**2)) / n_z
    return total / n_mu


def strong_fit(z: np.ndarray, dz: np.ndarray, spec: LibrarySpec, ridge: float = 0.0
               ) -> np.ndarray:
    """Least-squares fit of the coefficient matrix (N_z, N_l) from a latent
    trajectory and its time derivatives; optional ridge regularization."""
    z = np.asarray(z, dtype=float)
    dz = np.asarray(dz, dtype=float)
    if z.shape != dz.shape:
        raise ValueError("z and dz must have matching shapes")
    theta = build_library(z, spec)
    n_rows, n_l = theta.shape
    if n_rows < n_l:
        raise ValueError(f"need at least {n_l} samples for {n_l} library terms, got {n_rows}")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    if ridge > 0:
        a = np.vstack([theta, np.sqrt(ridge) * np.eye(n_l)])
        b = np.vstack([dz, np.zeros((n_l, dz.shape[1]))])
    else:
        a = theta
        b = dz
    sol, _, rank, sv = np.linalg.lstsq(a, b, rcond=None)
    if ridge == 0.0 and rank < n_l:
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
        raise NumericalError(
            f"rank-deficient library (rank {rank} < {n_l}, condition estimate {cond:.3e}); "
            "add a ridge term or enrich the data")
    return sol.T


@dataclass(frozen=True)
class TestFunctionBank:
    """Discretized compactly supported test functions on a uniform time grid.

    Rows of ``phi`` hold ``dt * f_k(t_n)`` and rows of ``dphi`` hold
    ``dt * f_k'(t_n)`` for polynomial bumps f_k; the dt factor embeds the
    trapezoidal quadrature weight.
    """

    phi: np.ndarray
    dphi: np.ndarray
    half_width: int
    order: int
    centers: np.ndarray

    @property
    def n_functions(self) -> int:
        return self.phi.shape[0]


def default_weak_params(n_rows: int) -> tuple[int, int]:
    """Default (N_k, m_t) for a time grid with ``n_rows`` = N_t+1 samples."""
    m_t = max(1, int(round(0.05 * n_rows)))
    m_t = min(m_t, (n_rows - 1) // 2)
    slots = n_rows - 2 * m_t
    n_k = min(int(np.ceil(n_rows / 3)), slots)
    return n_k, m_t


def build_test_functions(n_steps: int, dt: float, n_k: int, m_t: int, p: int
                         ) -> TestFunctionBank:
    """Place ``n_k`` polynomial bumps ``(t-t_a)^p (t_b-t)^p`` (peak-normalized
    to one) uniformly along the grid; each window spans ``2*m_t`` steps."""
    n_rows = n_steps + 1
    if p < 2:
        raise ValueError("test-function order p must be at least 2")
    if n_k < 1:
        raise ValueError("need at least one test function")
    if m_t < 1 or 2 * m_t + 1 > n_rows:
        raise ValueError(
            f"support width 2*{m_t}+1 does not fit a grid of {n_rows} samples")
    centers = np.rint(np.linspace(m_t, n_steps - m_t, n_k)).astype(int)
    half = m_t * dt
    scale = half ** (2 * p)
    t = dt * np.arange(n_rows)
    phi = np.zeros((n_k, n_rows))
    dphi = np.zeros((n_k, n_rows))
    for k, c in enumerate(centers):
        lo, hi = c - m_t, c + m_t
        tw = t[lo : hi + 1]
        t_a, t_b = t[lo], t[hi]
        left = tw - t_a
        right = t_b - tw
        phi[k, lo : hi + 1] = dt * (left**p) * (right**p) / scale
        dphi[k, lo : hi + 1] = (
            dt * p * (left ** (p - 1)) * (right ** (p - 1)) * (right - left) / scale
        )
    phi.flags.writeable = False
    dphi.flags.writeable = False
    return TestFunctionBank(phi=phi, dphi=dphi, half_width=m_t, order=p, centers=centers)


def weak_system(z: np.ndarray, spec: LibrarySpec, bank: TestFunctionBank
                ) -> tuple[np.ndarray, np.ndarray]:
    """Weak-form normal system for one trajectory: G = Phi @ theta(Z) and
    b with columns ``-(dPhi @ z_col)``; returns (G, b) with b of shape
    (N_k, N_z)."""
    z = np.asarray(z, dtype=float)
    if z.shape[0] != bank.phi.shape[1]:
        raise ValueError(
            f"trajectory has {z.shape[0]} samples but the bank was built for "
            f"{bank.phi.shape[1]}")
    theta = build_library(z, spec)
    g = bank.phi @ theta
    b = -(bank.dphi @ z)
    return g, b


def weak_fit(g: np.ndarray, b: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Solve the weak-form least squares for the coefficient matrix.

    ``b`` may be one column (returns one coefficient row) or (N_k, N_z)
    (returns the full (N_z, N_l) matrix)."""
    g = np.asarray(g, dtype=float)
    b = np.asarray(b, dtype=float)
    n_k, n_l = g.shape
    if n_k < n_l:
        raise ValueError(f"need at least {n_l} test functions for {n_l} terms, got {n_k}")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    rhs = b[:, None] if b.ndim == 1 else b
    if ridge > 0:
        g = np.vstack([g, np.sqrt(ridge) * np.eye(n_l)])
        rhs = np.vstack([rhs, np.zeros((n_l, rhs.shape[1]))])
    sol, _, rank, sv = np.linalg.lstsq(g, rhs, rcond=None)
    if rank < n_l:
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
        raise NumericalError(
            f"rank-deficient weak system (rank {rank} < {n_l}, "
            f"condition estimate {cond:.3e})")
    return sol[:, 0] if b.ndim == 1 else sol.T


def weak_sindy_loss(z_tensor: np.ndarray, xi: np.ndarray, spec: LibrarySpec,
                    bank: TestFunctionBank) -> float:
    """Weak-form counterpart of :func:`sindy_loss`, same double-mean layout."""
    z_tensor = np.asarray(z_tensor, dtype=float)
    xi = np.asarray(xi, dtype=float)
    n_mu, _, n_z = z_tensor.shape
    total = 0.0
    for i in range(n_mu):
        g, b = weak_system(z_tensor[i], spec, bank)
        resid = g @ xi[i].T - b
        total += float(np.sum(resid**2)) / n_z
    return total / n_mu


def coefficients_csv(xi: np.ndarray, spec: LibrarySpec) -> str:
    """CSV export of a coefficient tensor: one row per (trajectory, latent dim),
    one column per library term."""
    xi = np.asarray(xi, dtype=float)
    n_mu, n_z, _ = xi.shape
    header = ["trajectory", "latent_dim"] + spec.term_names(n_z)
    lines = [",".join(header)]
    for i in range(n_mu):
        for j in range(n_z):
            lines.append(
                ",".join([str(i), str(j)] + [repr(float(v)) for v in xi[i, j]]))
    return "\n".join(lines) + "\n"
