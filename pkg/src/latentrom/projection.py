"""Projections between full-order states and latent variables.

Contains the hand-rolled MLP autoencoder (forward, reverse, and
Jacobian-vector products), the joint-training loss with exact analytic
gradients, an Adam optimizer, and a linear POD alternative.

Everything is f64: the finite-difference gradient checks used throughout the
test suite are infeasible in single precision.  Forward and backward passes
are plain numpy matmuls, so results are bit-reproducible in single-threaded
mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data_model import SnapshotSet
from .errors import NumericalError
from .latent_dynamics import (
    LibrarySpec,
    build_library,
    finite_difference_adjoint,
    finite_difference_dz,
    library_vjp,
)


# ---------------------------------------------------------------------------
# activations: value, first and second derivative (the tangent backward pass
# needs curvature)

def _sigmoid_triple(x):
    s = expit(x)
    d1 = s * (1.0 - s)
    return s, d1, d1 * (1.0 - 2.0 * s)


def _tanh_triple(x):
    t = np.tanh(x)
    d1 = 1.0 - t * t
    return t, d1, -2.0 * t * d1


def _softplus_triple(x):
    s = expit(x)
    return np.logaddexp(0.0, x), s, s * (1.0 - s)


def _relu_triple(x):
    d1 = (x > 0).astype(float)
    return np.maximum(x, 0.0), d1, np.zeros_like(x)


_ACTIVATIONS = {
    "sigmoid": _sigmoid_triple,
    "tanh": _tanh_triple,
    "softplus": _softplus_triple,
    "relu": _relu_triple,
}


@dataclass(frozen=True)
class MlpParams:
    """Weights/biases of a fully connected net; hidden layers share one
    activation, the final layer is linear."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "sigmoid"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must pair up")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {l}: bias shape {b.shape} vs weight {w.shape}")
            if l > 0 and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l}: input dim {w.shape[1]} does not chain")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def mlp_init(layer_sizes: list[int], activation: str = "sigmoid", seed: int = 0
             ) -> MlpParams:
    """Xavier-uniform weights, zero biases; one spawned PRNG stream per layer
    so layer initializations are independent of each other's sizes."""
    if len(layer_sizes) < 2 or any(int(s) < 1 for s in layer_sizes):
        raise ValueError(f"bad layer sizes {layer_sizes}")
    streams = np.random.SeedSequence(seed).spawn(len(layer_sizes) - 1)
    weights, biases = [], []
    for l, ss in enumerate(streams):
        fan_in, fan_out = layer_sizes[l], layer_sizes[l + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        rng = np.random.default_rng(ss)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights=tuple(weights), biases=tuple(biases), activation=activation)


def mlp_pack(p: MlpParams) -> np.ndarray:
    """Flatten all parameters into one f64 vector (layer order, weight then
    bias)."""
    return np.concatenate([np.concatenate([w.ravel(), b])
                           for w, b in zip(p.weights, p.biases)])


def mlp_unpack(flat: np.ndarray, layer_sizes: list[int], activation: str) -> MlpParams:
    flat = np.asarray(flat, dtype=float)
    weights, biases = [], []
    pos = 0
    for l in range(len(layer_sizes) - 1):
        n_out, n_in = layer_sizes[l + 1], layer_sizes[l]
        weights.append(flat[pos : pos + n_out * n_in].reshape(n_out, n_in).copy())
        pos += n_out * n_in
        biases.append(flat[pos : pos + n_out].copy())
        pos += n_out
    if pos != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, layout needs {pos}")
    return MlpParams(weights=tuple(weights), biases=tuple(biases), activation=activation)


# ---------------------------------------------------------------------------
# forward / reverse / tangent passes (batched over rows)

def _forward(p: MlpParams, x: np.ndarray):
    act = _ACTIVATIONS[p.activation]
    last = p.n_layers - 1
    a, pre = [x], []
    for l, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = a[-1] @ w.T + b
        pre.append(z)
        a.append(z if l == last else act(z)[0])
    return a, pre


def _backward(p: MlpParams, a, pre, dout):
    """Reverse pass; returns per-layer weight/bias gradients and the gradient
    with respect to the input rows."""
    act = _ACTIVATIONS[p.activation]
    last = p.n_layers - 1
    dws = [None] * p.n_layers
    dbs = [None] * p.n_layers
    g = dout
    for l in range(last, -1, -1):
        dp = g if l == last else g * act(pre[l])[1]
        dws[l] = dp.T @ a[l]
        dbs[l] = dp.sum(axis=0)
        g = dp @ p.weights[l]
    return dws, dbs, g


def _forward_tangent(p: MlpParams, x: np.ndarray, xdot: np.ndarray):
    """Primal + tangent forward in one sweep: rows of ``xdot`` ride along as
    directional derivatives."""
    act = _ACTIVATIONS[p.activation]
    last = p.n_layers - 1
    a, pre, t, s = [x], [], [xdot], []
    for l, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = a[-1] @ w.T + b
        sz = t[-1] @ w.T
        pre.append(z)
        s.append(sz)
        if l == last:
            a.append(z)
            t.append(sz)
        else:
            v, d1, _ = act(z)
            a.append(v)
            t.append(d1 * sz)
    return a, pre, t, s


def _backward_tangent(p: MlpParams, a, pre, t, s, da_out, dt_out):
    """Reverse pass through the combined primal/tangent forward.

    Takes adjoints on the primal output and on the tangent output; returns
    parameter gradients plus adjoints on the input rows (primal) and on the
    tangent-input rows."""
    act = _ACTIVATIONS[p.activation]
    last = p.n_layers - 1
    dws = [None] * p.n_layers
    dbs = [None] * p.n_layers
    ga, gt = da_out, dt_out
    for l in range(last, -1, -1):
        if l == last:
            dp, ds = ga, gt
        else:
            _, d1, d2 = act(pre[l])
            dp = ga * d1 + gt * d2 * s[l]
            ds = gt * d1
        dws[l] = dp.T @ a[l] + ds.T @ t[l]
        dbs[l] = dp.sum(axis=0)
        ga = dp @ p.weights[l]
        gt = ds @ p.weights[l]
    return dws, dbs, ga, gt


def _as_rows(x: np.ndarray, width: int, what: str):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    if rows.ndim != 2 or rows.shape[1] != width:
        raise ValueError(f"{what}: expected width {width}, got shape {x.shape}")
    return rows, single


def encode(p: MlpParams, u: np.ndarray) -> np.ndarray:
    """Forward pass of the compressor; accepts one state or a stack of rows."""
    rows, single = _as_rows(u, p.layer_sizes[0], "encode")
    out = _forward(p, rows)[0][-1]
    return out[0] if single else out


def decode(p: MlpParams, z: np.ndarray) -> np.ndarray:
    """Forward pass of the reconstructor; shape conventions mirror encode."""
    rows, single = _as_rows(z, p.layer_sizes[0], "decode")
    out = _forward(p, rows)[0][-1]
    return out[0] if single else out


def latent_velocity(p_e: MlpParams, u: np.ndarray, u_dot: np.ndarray) -> np.ndarray:
    """Push a state velocity through the encoder: the Jacobian-vector product
    of the encoder at ``u`` applied to ``u_dot`` (the Jacobian itself is never
    formed)."""
    rows, single = _as_rows(u, p_e.layer_sizes[0], "latent_velocity")
    drows, dsingle = _as_rows(u_dot, p_e.layer_sizes[0], "latent_velocity tangent")
    if rows.shape != drows.shape:
        raise ValueError("state and velocity shapes differ")
    out = _forward_tangent(p_e, rows, drows)[2][-1]
    return out[0] if single and dsingle else out


def decoder_velocity(p_d: MlpParams, z: np.ndarray, z_dot: np.ndarray) -> np.ndarray:
    """Jacobian-vector product of the decoder at ``z`` applied to ``z_dot``."""
    rows, single = _as_rows(z, p_d.layer_sizes[0], "decoder_velocity")
    drows, dsingle = _as_rows(z_dot, p_d.layer_sizes[0], "decoder_velocity tangent")
    if rows.shape != drows.shape:
        raise ValueError("state and velocity shapes differ")
    out = _forward_tangent(p_d, rows, drows)[2][-1]
    return out[0] if single and dsingle else out


# ---------------------------------------------------------------------------
# losses

def reconstruction_loss(p_e: MlpParams, p_d: MlpParams, sset: SnapshotSet) -> float:
    """Mean over trajectories of the mean over time samples of the squared
    reconstruction error norm."""
    total = 0.0
    for traj in sset.trajectories:
        u = traj.states
        err = u - decode(p_d, encode(p_e, u))
        total += float(np.sum(err**2)) / u.shape[0]
    return total / sset.n_traj


def velocity_loss(p_e: MlpParams, p_d: MlpParams, xi: np.ndarray, sset: SnapshotSet,
                  lib: LibrarySpec) -> float:
    """Velocity-matching loss: data velocities (finite differences of the
    snapshots) against decoder-propagated model velocities, averaged like the
    reconstruction loss.

    This composition of public operations doubles as an independent oracle for
    the fused value computed by :func:`loss_gradients`.
    """
    xi = np.asarray(xi, dtype=float)
    total = 0.0
    for i, traj in enumerate(sset.trajectories):
        u = traj.states
        u_dot = finite_difference_dz(u, sset.dt)
        z = encode(p_e, u)
        w = build_library(z, lib) @ xi[i].T
        err = u_dot - decoder_velocity(p_d, z, w)
        total += float(np.sum(err**2)) / u.shape[0]
    return total / sset.n_traj


@dataclass(frozen=True)
class LossParts:
    """Unweighted sub-losses plus the weighted total."""

    total: float
    recon: float
    dynamics: float
    velocity: float
    penalty: float


@dataclass
class LossGradients:
    enc_weights: list[np.ndarray]
    enc_biases: list[np.ndarray]
    dec_weights: list[np.ndarray]
    dec_biases: list[np.ndarray]
    xi: np.ndarray

    def flat(self) -> np.ndarray:
        """Concatenate in (encoder, decoder, xi) order — the layout used by
        the Adam training loop."""
        parts = [np.concatenate([w.ravel(), b])
                 for w, b in zip(self.enc_weights, self.enc_biases)]
        parts += [np.concatenate([w.ravel(), b])
                  for w, b in zip(self.dec_weights, self.dec_biases)]
        parts.append(self.xi.ravel())
        return np.concatenate(parts)


def _beta_tuple(weights) -> tuple[float, float, float, float]:
    try:
        return (float(weights.beta1), float(weights.beta2),
                float(weights.beta3), float(weights.beta4))
    except AttributeError:
        b1, b2, b3, b4 = weights
        return float(b1), float(b2), float(b3), float(b4)


def loss_gradients(p_e: MlpParams, p_d: MlpParams, xi: np.ndarray, sset: SnapshotSet,
                   weights, lib: LibrarySpec, mode: str = "strong", bank=None
                   ) -> tuple[LossParts, LossGradients]:
    """Joint loss and its exact analytic gradients in one fused sweep.

    ``weights`` carries the four loss weights (attributes beta1..beta4 or a
    4-sequence).  ``mode`` selects strong-form or weak-form dynamics residuals;
    weak mode requires a test-function ``bank`` matching the time grid.
    Sub-losses whose weight is zero are skipped (reported as 0.0) so that e.g.
    velocity-free configurations never pay for the tangent pass.

    Raises NumericalError when the total loss is non-finite (training has
    diverged).
    """
    b1, b2, b3, b4 = _beta_tuple(weights)
    if min(b1, b2, b3, b4) < 0:
        raise ValueError("loss weights must be nonnegative")
    if mode not in ("strong", "weak"):
        raise ValueError(f"unknown dynamics mode {mode!r}")
    if mode == "weak" and b2 > 0 and bank is None:
        raise ValueError("weak mode needs a test-function bank")
    xi = np.asarray(xi, dtype=float)
    n_mu = sset.n_traj
    n_rows = sset.n_steps + 1
    n_z = xi.shape[1]
    c_ae = 1.0 / (n_mu * n_rows)
    c_s = 1.0 / (n_mu * n_z)
    c_v = 1.0 / (n_mu * n_rows)

    enc_w = [np.zeros_like(w) for w in p_e.weights]
    enc_b = [np.zeros_like(b) for b in p_e.biases]
    dec_w = [np.zeros_like(w) for w in p_d.weights]
    dec_b = [np.zeros_like(b) for b in p_d.biases]
    d_xi = np.zeros_like(xi)
    l_recon = l_dyn = l_vel = 0.0

    need_w = (b2 > 0 and mode == "strong") or b3 > 0
    need_theta = need_w or b2 > 0
    for i, traj in enumerate(sset.trajectories):
        u = traj.states
        xi_i = xi[i]
        a_e, p_pre = _forward(p_e, u)
        z = a_e[-1]
        theta = build_library(z, lib) if need_theta else None
        w_lat = theta @ xi_i.T if need_w else None

        d_z = np.zeros_like(z)
        d_theta = np.zeros_like(theta) if need_theta else None
        d_w = np.zeros_like(w_lat) if need_w else None

        # dynamics residual
        if b2 > 0:
            if mode == "strong":
                resid = finite_difference_dz(z, sset.dt) - w_lat
                l_dyn += float(np.sum(resid**2)) / n_z
                d_resid = (2.0 * b2 * c_s) * resid
                d_z += finite_difference_adjoint(d_resid, sset.dt)
                d_w -= d_resid
            else:
                g_mat = bank.phi @ theta
                resid = g_mat @ xi_i.T + bank.dphi @ z
                l_dyn += float(np.sum(resid**2)) / n_z
                d_resid = (2.0 * b2 * c_s) * resid
                d_xi[i] += d_resid.T @ g_mat
                d_theta += bank.phi.T @ (d_resid @ xi_i)
                d_z += bank.dphi.T @ d_resid

        # decoder passes: reconstruction and/or velocity matching
        if b3 > 0:
            a_d, pre_d, t_d, s_d = _forward_tangent(p_d, z, w_lat)
            u_hat, v_hat = a_d[-1], t_d[-1]
            u_dot = finite_difference_dz(u, sset.dt)
            vel_err = v_hat - u_dot
            l_vel += float(np.sum(vel_err**2)) / n_rows
            d_vhat = (2.0 * b3 * c_v) * vel_err
            if b1 > 0:
                rec_err = u_hat - u
                l_recon += float(np.sum(rec_err**2)) / n_rows
                d_uhat = (2.0 * b1 * c_ae) * rec_err
            else:
                d_uhat = np.zeros_like(u_hat)
            dws, dbs, d_z_dec, d_w_vel = _backward_tangent(
                p_d, a_d, pre_d, t_d, s_d, d_uhat, d_vhat)
            d_z += d_z_dec
            d_w += d_w_vel
            for l in range(p_d.n_layers):
                dec_w[l] += dws[l]
                dec_b[l] += dbs[l]
        elif b1 > 0:
            a_d, pre_d = _forward(p_d, z)
            rec_err = a_d[-1] - u
            l_recon += float(np.sum(rec_err**2)) / n_rows
            d_uhat = (2.0 * b1 * c_ae) * rec_err
            dws, dbs, d_z_dec = _backward(p_d, a_d, pre_d, d_uhat)
            d_z += d_z_dec
            for l in range(p_d.n_layers):
                dec_w[l] += dws[l]
                dec_b[l] += dbs[l]

        # pull the latent-velocity adjoint back onto xi and the library
        if need_w and d_w is not None:
            d_xi[i] += d_w.T @ theta
            d_theta += d_w @ xi_i
        if need_theta:
            d_z += library_vjp(z, d_theta, lib)

        if np.any(d_z):
            dws, dbs, _ = _backward(p_e, a_e, p_pre, d_z)
            for l in range(p_e.n_layers):
                enc_w[l] += dws[l]
                enc_b[l] += dbs[l]

    l_pen = float(np.sum(xi**2))
    if b4 > 0:
        d_xi += (2.0 * b4) * xi
    l_recon /= n_mu
    l_dyn /= n_mu
    l_vel /= n_mu
    total = b1 * l_recon + b2 * l_dyn + b3 * l_vel + b4 * l_pen
    if not np.isfinite(total):
        raise NumericalError(f"non-finite training loss ({total})")
    parts = LossParts(total=total, recon=l_recon, dynamics=l_dyn,
                      velocity=l_vel, penalty=l_pen)
    grads = LossGradients(enc_weights=enc_w, enc_biases=enc_b,
                          dec_weights=dec_w, dec_biases=dec_b, xi=d_xi)
    return parts, grads


# ---------------------------------------------------------------------------
# Adam on flat parameter vectors

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_init(n: int) -> AdamState:
    return AdamState(m=np.zeros(n), v=np.zeros(n), t=0)


def adam_step(x: np.ndarray, g: np.ndarray, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
              ) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns the new point and state."""
    if x.shape != g.shape or x.shape != state.m.shape:
        raise ValueError("parameter/gradient/state shapes differ")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    x_new = x - lr * m_hat / (np.sqrt(v_hat) + eps)
    return x_new, AdamState(m=m, v=v, t=t)


# ---------------------------------------------------------------------------
# POD (linear) projection

@dataclass(frozen=True)
class PodBasis:
    """Mean vector plus an orthonormal basis of the dominant snapshot modes."""

    mean: np.ndarray
    basis: np.ndarray  # (N_u, N_z), orthonormal columns

    def __post_init__(self):
        gram = self.basis.T @ self.basis
        if not np.allclose(gram, np.eye(self.basis.shape[1]), atol=1e-10):
            raise ValueError("POD basis columns are not orthonormal")

    @property
    def n_latent(self) -> int:
        return self.basis.shape[1]


def pod_fit(sset: SnapshotSet, n_z: int) -> PodBasis:
    """Top ``n_z`` modes of the mean-centered snapshot matrix via SVD."""
    snaps = sset.tensor().reshape(-1, sset.n_dof)
    if not 1 <= n_z <= min(snaps.shape):
        raise ValueError(
            f"rank {n_z} not in [1, {min(snaps.shape)}] for {snaps.shape[0]} snapshots "
            f"of dimension {snaps.shape[1]}")
    mean = snaps.mean(axis=0)
    _, _, vt = np.linalg.svd(snaps - mean, full_matrices=False)
    return PodBasis(mean=mean, basis=vt[:n_z].T.copy())


def pod_encode(basis: PodBasis, u: np.ndarray) -> np.ndarray:
    rows, single = _as_rows(u, basis.mean.shape[0], "pod_encode")
    z = (rows - basis.mean) @ basis.basis
    return z[0] if single else z


def pod_decode(basis: PodBasis, z: np.ndarray) -> np.ndarray:
    rows, single = _as_rows(z, basis.n_latent, "pod_decode")
    u = rows @ basis.basis.T + basis.mean
    return u[0] if single else u


# ---------------------------------------------------------------------------
# optional per-dof affine normalizer

@dataclass(frozen=True)
class Normalizer:
    """Per-dof affine map applied before encoding and inverted after decoding."""

    shift: np.ndarray
    scale: np.ndarray

    def forward(self, u: np.ndarray) -> np.ndarray:
        return (np.asarray(u, dtype=float) - self.shift) / self.scale

    def inverse(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, dtype=float) * self.scale + self.shift


def fit_normalizer(sset: SnapshotSet) -> Normalizer:
    """Per-dof mean/std over every snapshot; degenerate dofs keep scale 1."""
    snaps = sset.tensor().reshape(-1, sset.n_dof)
    shift = snaps.mean(axis=0)
    scale = snaps.std(axis=0)
    scale = np.where(scale < 1e-12, 1.0, scale)
    return Normalizer(shift=shift, scale=scale)
