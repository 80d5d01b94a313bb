"""Coefficient-matrix interpolation across parameter space.

Given trained pairs (parameter point, ODE coefficient matrix), these models
estimate the coefficient matrix at unseen parameters.  Three routes: global
multiquadric RBF interpolation, inverse-square-weighted k-nearest-neighbours
under a Mahalanobis metric, and independent Gaussian-process regression per
coefficient entry (the only route that also yields predictive uncertainty).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import NumericalError
from .projection import adam_init, adam_step

_JITTER_MAX = 1e-4


def _check_pairs(params: np.ndarray, xi: np.ndarray):
    params = np.asarray(params, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if params.ndim != 2 or xi.ndim != 3 or params.shape[0] != xi.shape[0]:
        raise ValueError(
            f"expected (N, n_dims) parameters and (N, N_z, N_l) coefficients, "
            f"got {params.shape} and {xi.shape}")
    if params.shape[0] < 2:
        raise ValueError("need at least two training pairs")
    return params, xi


# ---------------------------------------------------------------------------
# multiquadric RBF

def multiquadric(d: np.ndarray, eps: float) -> np.ndarray:
    """Kernel value sqrt(d^2/eps + 1); equals 1 at d=0."""
    return np.sqrt(np.square(d) / eps + 1.0)


@dataclass(frozen=True)
class RbfModel:
    centers: np.ndarray          # (N, n_dims)
    weights: np.ndarray          # (N, N_z, N_l)
    eps: float

    @property
    def coeff_shape(self) -> tuple[int, int]:
        return self.weights.shape[1], self.weights.shape[2]


def _pairwise_distances(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.sum(diff**2, axis=-1))


def rbf_fit(params: np.ndarray, xi: np.ndarray, eps: float | None = None) -> RbfModel:
    """Solve the interpolation system so that evaluation at every center
    reproduces its stored coefficient matrix.

    ``eps`` defaults to the mean pairwise distance between centers.
    """
    params, xi = _check_pairs(params, xi)
    n = params.shape[0]
    dists = _pairwise_distances(params)
    off_diag = dists[~np.eye(n, dtype=bool)]
    if np.any(off_diag == 0.0):
        raise NumericalError("coincident interpolation centers")
    if eps is None:
        eps = float(off_diag.mean())
    if eps <= 0:
        raise ValueError("eps must be positive")
    psi = multiquadric(dists, eps)
    rhs = xi.reshape(n, -1)
    try:
        w = np.linalg.solve(psi, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular RBF interpolation matrix: {exc}") from exc
    resid = np.linalg.norm(psi @ w - rhs)
    if resid > 1e-8 * max(np.linalg.norm(rhs), 1.0):
        raise NumericalError(
            f"RBF system solved poorly (residual {resid:.3e}); centers may be "
            "nearly coincident")
    return RbfModel(centers=params.copy(), weights=w.reshape(xi.shape), eps=eps)


def rbf_eval(model: RbfModel, mu_star: np.ndarray) -> np.ndarray:
    mu_star = np.asarray(mu_star, dtype=float).ravel()
    d = np.linalg.norm(model.centers - mu_star, axis=1)
    k = multiquadric(d, model.eps)
    return np.tensordot(k, model.weights, axes=1)


# ---------------------------------------------------------------------------
# k-nearest neighbours, Mahalanobis metric, inverse-square weights

@dataclass(frozen=True)
class KnnModel:
    params: np.ndarray           # (N, n_dims)
    xi: np.ndarray               # (N, N_z, N_l)
    k: int
    metric: np.ndarray           # inverse covariance, (n_dims, n_dims)


def knn_fit(params: np.ndarray, xi: np.ndarray, k: int) -> KnnModel:
    """Store the training pairs and the inverse sample covariance of the
    parameters (regularized with 1e-10 on the diagonal) as the distance
    metric."""
    params, xi = _check_pairs(params, xi)
    if not 1 <= k <= params.shape[0]:
        raise ValueError(f"k={k} not in [1, {params.shape[0]}]")
    cov = np.atleast_2d(np.cov(params, rowvar=False))
    metric = np.linalg.inv(cov + 1e-10 * np.eye(params.shape[1]))
    metric = 0.5 * (metric + metric.T)
    return KnnModel(params=params.copy(), xi=xi.copy(), k=k, metric=metric)


def knn_eval(model: KnnModel, mu_star: np.ndarray) -> np.ndarray:
    """Inverse-square-distance average of the k nearest coefficient matrices;
    the weights are nonnegative and sum to one.  A query exactly on a training
    parameter returns that parameter's matrix (avoiding the 1/d^2
    singularity)."""
    mu_star = np.asarray(mu_star, dtype=float).ravel()
    diff = model.params - mu_star
    d2 = np.einsum("nd,de,ne->n", diff, model.metric, diff)
    hits = np.flatnonzero(d2 <= 0.0)
    if hits.size:
        return model.xi[hits[0]].copy()
    order = np.argsort(d2, kind="stable")[: model.k]
    inv = 1.0 / d2[order]
    w = inv / inv.sum()
    return np.tensordot(w, model.xi[order], axes=1)


# ---------------------------------------------------------------------------
# Gaussian processes, one per coefficient entry

@dataclass(frozen=True)
class GpModel:
    """Independent anisotropic squared-exponential GPs over each entry of the
    coefficient matrix, with standardized targets."""

    x: np.ndarray                # (N, n_dims)
    y_mean: np.ndarray           # (N_z, N_l)
    y_scale: np.ndarray          # (N_z, N_l)
    log_sf: np.ndarray           # (N_z, N_l) log output scale
    log_ell: np.ndarray          # (N_z, N_l, n_dims) log length scales
    jitter: np.ndarray           # (N_z, N_l) diagonal nugget actually used
    chol: np.ndarray             # (N_z, N_l, N, N) lower Cholesky factors
    alpha: np.ndarray            # (N_z, N_l, N) cached (K+jI)^{-1} y

    @property
    def coeff_shape(self) -> tuple[int, int]:
        return self.y_mean.shape


def _se_kernel(x1: np.ndarray, x2: np.ndarray, log_sf: float, log_ell: np.ndarray
               ) -> np.ndarray:
    ell = np.exp(log_ell)
    diff = (x1[:, None, :] - x2[None, :, :]) / ell
    return np.exp(2.0 * log_sf) * np.exp(-0.5 * np.sum(diff**2, axis=-1))


def _chol_with_jitter(k: np.ndarray, jitter: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of k + jitter*I, escalating the jitter tenfold
    (up to 1e-4) until the factorization succeeds."""
    j = jitter
    while True:
        try:
            return np.linalg.cholesky(k + j * np.eye(k.shape[0])), j
        except np.linalg.LinAlgError:
            j *= 10.0
            if j > _JITTER_MAX:
                raise NumericalError(
                    f"kernel matrix not positive definite even with jitter {_JITTER_MAX}")


def _lml_and_grad(x: np.ndarray, y: np.ndarray, log_sf: float, log_ell: np.ndarray,
                  jitter: float) -> tuple[float, np.ndarray, float]:
    """Log marginal likelihood and its gradient in (log_sf, log_ell);
    also returns the jitter actually used."""
    n = x.shape[0]
    k_se = _se_kernel(x, x, log_sf, log_ell)
    low, j_used = _chol_with_jitter(k_se, jitter)
    alpha = cho_solve((low, True), y)
    lml = (-0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(low))))
           - 0.5 * n * np.log(2.0 * np.pi))
    # dL/dtheta = 0.5 tr((alpha alpha^T - K^{-1}) dK/dtheta)
    k_inv = cho_solve((low, True), np.eye(n))
    outer = np.outer(alpha, alpha) - k_inv
    grad = np.empty(1 + x.shape[1])
    grad[0] = 0.5 * float(np.sum(outer * (2.0 * k_se)))
    ell = np.exp(log_ell)
    for d in range(x.shape[1]):
        diff2 = np.subtract.outer(x[:, d], x[:, d]) ** 2 / ell[d] ** 2
        grad[1 + d] = 0.5 * float(np.sum(outer * (k_se * diff2)))
    return lml, grad, j_used


def _fit_single_gp(x: np.ndarray, y: np.ndarray, jitter: float, restarts: int,
                   iters: int, rng: np.random.Generator, lo: np.ndarray,
                   hi: np.ndarray) -> np.ndarray:
    """Multi-start projected Adam ascent on the log marginal likelihood;
    returns the best (log_sf, log_ell...) vector."""
    n_dims = x.shape[1]
    best_theta, best_lml = None, -np.inf
    span = np.log(np.maximum(x.max(axis=0) - x.min(axis=0), 1e-3))
    for _ in range(restarts):
        theta = np.empty(1 + n_dims)
        theta[0] = rng.normal(0.0, 0.5)
        theta[1:] = span + rng.normal(-0.5, 0.8, size=n_dims)
        theta = np.clip(theta, lo, hi)
        state = adam_init(theta.size)
        for _ in range(iters):
            try:
                _, grad, _ = _lml_and_grad(x, y, theta[0], theta[1:], jitter)
            except NumericalError:
                break
            theta, state = adam_step(theta, -grad, state, lr=0.05)
            theta = np.clip(theta, lo, hi)
        try:
            lml, _, _ = _lml_and_grad(x, y, theta[0], theta[1:], jitter)
        except NumericalError:
            continue
        if lml > best_lml:
            best_lml, best_theta = lml, theta.copy()
    if best_theta is None:
        raise NumericalError("every hyperparameter start failed to factorize")
    return best_theta


def gp_fit(params: np.ndarray, xi: np.ndarray, jitter: float = 1e-8,
           restarts: int = 8, iters: int = 200, seed: int = 0) -> GpModel:
    """Fit one GP per coefficient entry.

    Targets are standardized per entry; hyperparameters (log output scale and
    per-dimension log length scales) maximize the log marginal likelihood via
    seeded multi-start gradient ascent, with length scales confined to a broad
    window around the parameter span to keep the kernel well conditioned.
    """
    params, xi = _check_pairs(params, xi)
    n, n_dims = params.shape
    n_z, n_l = xi.shape[1], xi.shape[2]
    span = np.maximum(params.max(axis=0) - params.min(axis=0), 1e-3)
    lo = np.concatenate([[-5.0], np.log(1e-3 * span)])
    hi = np.concatenate([[5.0], np.log(10.0 * span)])
    rng = np.random.default_rng(seed)

    y_mean = xi.mean(axis=0)
    y_scale = xi.std(axis=0)
    y_scale = np.where(y_scale < 1e-12, 1.0, y_scale)
    log_sf = np.empty((n_z, n_l))
    log_ell = np.empty((n_z, n_l, n_dims))
    jit_used = np.empty((n_z, n_l))
    chol = np.empty((n_z, n_l, n, n))
    alpha = np.empty((n_z, n_l, n))
    for a in range(n_z):
        for b in range(n_l):
            y = (xi[:, a, b] - y_mean[a, b]) / y_scale[a, b]
            if np.all(y == 0.0):
                # constant target: fix a benign prior instead of optimizing
                theta = np.concatenate([[0.0], np.log(span)])
            else:
                theta = _fit_single_gp(params, y, jitter, restarts, iters, rng, lo, hi)
            k_se = _se_kernel(params, params, theta[0], theta[1:])
            low, j_used = _chol_with_jitter(k_se, jitter)
            log_sf[a, b] = theta[0]
            log_ell[a, b] = theta[1:]
            jit_used[a, b] = j_used
            chol[a, b] = low
            alpha[a, b] = cho_solve((low, True), y)
    return GpModel(x=params.copy(), y_mean=y_mean, y_scale=y_scale, log_sf=log_sf,
                   log_ell=log_ell, jitter=jit_used, chol=chol, alpha=alpha)


def gp_from_hyperparams(params: np.ndarray, xi: np.ndarray, log_sf: np.ndarray,
                        log_ell: np.ndarray, jitter: np.ndarray) -> GpModel:
    """Rebuild a fitted model from stored hyperparameters without
    re-optimizing (used when loading checkpoints, which persist only the
    learned state)."""
    params, xi = _check_pairs(params, xi)
    n = params.shape[0]
    n_z, n_l = xi.shape[1], xi.shape[2]
    y_mean = xi.mean(axis=0)
    y_scale = xi.std(axis=0)
    y_scale = np.where(y_scale < 1e-12, 1.0, y_scale)
    chol = np.empty((n_z, n_l, n, n))
    alpha = np.empty((n_z, n_l, n))
    for a in range(n_z):
        for b in range(n_l):
            y = (xi[:, a, b] - y_mean[a, b]) / y_scale[a, b]
            k_se = _se_kernel(params, params, log_sf[a, b], log_ell[a, b])
            low = np.linalg.cholesky(k_se + jitter[a, b] * np.eye(n))
            chol[a, b] = low
            alpha[a, b] = cho_solve((low, True), y)
    return GpModel(x=params.copy(), y_mean=y_mean, y_scale=y_scale,
                   log_sf=np.asarray(log_sf, dtype=float).copy(),
                   log_ell=np.asarray(log_ell, dtype=float).copy(),
                   jitter=np.asarray(jitter, dtype=float).copy(),
                   chol=chol, alpha=alpha)


def gp_predict(model: GpModel, mu_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and standard deviation (both shaped like one
    coefficient matrix) at a single parameter point."""
    mu_star = np.asarray(mu_star, dtype=float).ravel()
    n_z, n_l = model.coeff_shape
    mean = np.empty((n_z, n_l))
    std = np.empty((n_z, n_l))
    xs = mu_star[None, :]
    for a in range(n_z):
        for b in range(n_l):
            k_star = _se_kernel(model.x, xs, model.log_sf[a, b], model.log_ell[a, b])[:, 0]
            m = float(k_star @ model.alpha[a, b])
            v = solve_triangular(model.chol[a, b], k_star, lower=True)
            var = float(np.exp(2.0 * model.log_sf[a, b]) - v @ v)
            mean[a, b] = model.y_mean[a, b] + model.y_scale[a, b] * m
            std[a, b] = model.y_scale[a, b] * np.sqrt(max(var, 0.0))
    return mean, std


def gp_sample(model: GpModel, mu_star: np.ndarray, n_s: int, seed: int) -> np.ndarray:
    """``n_s`` elementwise-independent draws from the predictive distribution,
    returned as an (n_s, N_z, N_l) stack; deterministic for a given seed."""
    if n_s < 1:
        raise ValueError("need at least one sample")
    mean, std = gp_predict(model, mu_star)
    rng = np.random.default_rng(seed)
    return mean + std * rng.standard_normal((n_s, *mean.shape))


# ---------------------------------------------------------------------------
# uniform front-end used by the ROM and the training loop

def fit_interpolator(kind: str, params: np.ndarray, xi: np.ndarray, *,
                     k: int = 4, eps: float | None = None, jitter: float = 1e-8,
                     restarts: int = 8, iters: int = 200, seed: int = 0):
    if kind == "rbf":
        return rbf_fit(params, xi, eps=eps)
    if kind == "knn":
        return knn_fit(params, xi, k=min(k, np.asarray(params).shape[0]))
    if kind == "gp":
        return gp_fit(params, xi, jitter=jitter, restarts=restarts, iters=iters,
                      seed=seed)
    raise ValueError(f"unknown interpolator kind {kind!r}")


def interpolate(model, mu_star: np.ndarray) -> np.ndarray:
    """Point estimate of the coefficient matrix (GP models use the predictive
    mean)."""
    if isinstance(model, RbfModel):
        return rbf_eval(model, mu_star)
    if isinstance(model, KnnModel):
        return knn_eval(model, mu_star)
    if isinstance(model, GpModel):
        return gp_predict(model, mu_star)[0]
    raise TypeError(f"not an interpolation model: {type(model).__name__}")


def interpolator_kind(model) -> str:
    if isinstance(model, RbfModel):
        return "rbf"
    if isinstance(model, KnnModel):
        return "knn"
    if isinstance(model, GpModel):
        return "gp"
    raise TypeError(f"not an interpolation model: {type(model).__name__}")
