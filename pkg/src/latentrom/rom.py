"""End-to-end reduced-order prediction.

A trained model maps a new parameter point to a coefficient matrix (via its
interpolator), integrates the latent ODE with classical RK4, and decodes the
latent trajectory back to full-order fields.  With a Gaussian-process
interpolator the coefficient uncertainty is propagated by sampling.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from .data_model import _read_exact
from .errors import FormatError, NumericalError
from .interpolation import (
    GpModel,
    gp_from_hyperparams,
    gp_sample,
    interpolate,
    interpolator_kind,
    knn_fit,
    rbf_fit,
)
from .latent_dynamics import LibrarySpec, build_library
from .projection import (
    MlpParams,
    Normalizer,
    PodBasis,
    decode,
    encode,
    mlp_pack,
    mlp_unpack,
    pod_decode,
    pod_encode,
)

MODEL_MAGIC = b"LSDM1\n"


@dataclass
class RomModel:
    """Everything needed to predict at new parameters: the projection (MLP
    autoencoder or POD basis), the per-parameter coefficient matrices, their
    interpolator, and the time grid."""

    lib: LibrarySpec
    params: np.ndarray            # (N_mu, n_dims) training parameter points
    xi: np.ndarray                # (N_mu, N_z, N_l)
    interp: object                # fitted interpolation model
    dt: float
    n_steps: int
    encoder: MlpParams | None = None
    decoder: MlpParams | None = None
    pod: PodBasis | None = None
    normalizer: Normalizer | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        mlp = self.encoder is not None and self.decoder is not None
        if mlp == (self.pod is not None):
            raise ValueError("model needs either an encoder/decoder pair or a POD basis")
        if self.xi.ndim != 3 or self.xi.shape[0] != self.params.shape[0]:
            raise ValueError("coefficient tensor does not match parameter points")
        if self.lib.n_terms(self.n_z) != self.xi.shape[2]:
            raise ValueError("coefficient columns do not match the library")

    @property
    def n_z(self) -> int:
        return self.xi.shape[1]

    @property
    def n_dof(self) -> int:
        if self.pod is not None:
            return self.pod.mean.shape[0]
        return self.encoder.layer_sizes[0]

    def encode_state(self, u: np.ndarray) -> np.ndarray:
        if self.normalizer is not None:
            u = self.normalizer.forward(u)
        if self.pod is not None:
            return pod_encode(self.pod, u)
        return encode(self.encoder, u)

    def decode_states(self, z: np.ndarray) -> np.ndarray:
        u = pod_decode(self.pod, z) if self.pod is not None else decode(self.decoder, z)
        if self.normalizer is not None:
            u = self.normalizer.inverse(u)
        return u


@dataclass(frozen=True)
class RomPrediction:
    """Mean field over the full time grid, the latent path(s) behind it, and
    (for sampled predictions) the elementwise variance field."""

    mean: np.ndarray              # (N_t+1, N_u)
    latents: np.ndarray           # (n_paths, N_t+1, N_z)
    variance: np.ndarray | None = None
    n_failed: int = 0

    @property
    def std(self) -> np.ndarray | None:
        return None if self.variance is None else np.sqrt(self.variance)


def integrate_latent(xi_star: np.ndarray, z0: np.ndarray, dt: float, n_steps: int,
                     spec: LibrarySpec) -> np.ndarray:
    """Classical fourth-order Runge-Kutta on dz/dt = theta(z) @ xi^T over
    ``n_steps`` uniform steps; row 0 of the result is ``z0``."""
    xi_star = np.asarray(xi_star, dtype=float)
    z0 = np.asarray(z0, dtype=float).ravel()
    n_z = z0.shape[0]
    if xi_star.shape != (n_z, spec.n_terms(n_z)):
        raise ValueError(f"coefficient matrix {xi_star.shape} does not match "
                         f"{n_z} latent dims and the library")
    if dt <= 0 or n_steps < 1:
        raise ValueError("need dt > 0 and at least one step")
    if not (np.all(np.isfinite(xi_star)) and np.all(np.isfinite(z0))):
        raise ValueError("non-finite inputs")

    xi_t = xi_star.T

    if spec.poly_degree == 1:
        # Affine field: the four stages collapse to the quartic Taylor map
        # z -> M z + q with M = I + B + B^2/2 + B^3/6 + B^4/24, B = dt*A.
        off = 1 if spec.include_constant else 0
        b = dt * xi_star[:, off:]
        eye = np.eye(n_z)
        p = eye + b @ (eye / 2.0 + b @ (eye / 6.0 + b / 24.0))
        m = eye + p @ b
        q = dt * (p @ xi_star[:, 0]) if off else np.zeros(n_z)

        def step(z):
            return m @ z + q
    else:
        def rhs(z):
            return build_library(z, spec) @ xi_t

        def step(z):
            k1 = rhs(z)
            k2 = rhs(z + 0.5 * dt * k1)
            k3 = rhs(z + 0.5 * dt * k2)
            k4 = rhs(z + dt * k3)
            return z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    out = np.empty((n_steps + 1, n_z))
    out[0] = z0
    z = z0
    # divergence is detected and reported below; don't warn about the overflow
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_steps):
            z = step(z)
            if not np.all(np.isfinite(z)):
                raise NumericalError(f"latent ODE blew up at step {n + 1}")
            out[n + 1] = z
    return out


def predict(model: RomModel, mu_star: np.ndarray, u0: np.ndarray) -> RomPrediction:
    """Mean-only fast path: interpolate the coefficient matrix, encode the
    initial state, integrate, decode."""
    u0 = np.asarray(u0, dtype=float).ravel()
    if u0.shape[0] != model.n_dof:
        raise ValueError(f"initial state has {u0.shape[0]} dofs, model expects "
                         f"{model.n_dof}")
    xi_star = interpolate(model.interp, mu_star)
    z0 = model.encode_state(u0)
    z_path = integrate_latent(xi_star, z0, model.dt, model.n_steps, model.lib)
    return RomPrediction(mean=model.decode_states(z_path), latents=z_path[None])


def predict_with_uncertainty(model: RomModel, mu_star: np.ndarray, u0: np.ndarray,
                             n_s: int = 20, seed: int = 0) -> RomPrediction:
    """Propagate coefficient uncertainty: draw ``n_s`` coefficient matrices
    from the GP posterior, integrate and decode each, and report the
    elementwise mean and population variance over the retained draws.

    Draws whose latent ODE blows up are excluded (and counted); more than 25%
    failures aborts with an error.
    """
    if not isinstance(model.interp, GpModel):
        raise ValueError("uncertainty prediction requires a GP interpolator")
    if n_s < 2:
        raise ValueError("need at least two samples")
    u0 = np.asarray(u0, dtype=float).ravel()
    if u0.shape[0] != model.n_dof:
        raise ValueError(f"initial state has {u0.shape[0]} dofs, model expects "
                         f"{model.n_dof}")
    z0 = model.encode_state(u0)
    draws = gp_sample(model.interp, mu_star, n_s, seed)
    fields, paths = [], []
    n_failed = 0
    for xi_d in draws:
        try:
            z_path = integrate_latent(xi_d, z0, model.dt, model.n_steps, model.lib)
            u_path = model.decode_states(z_path)
            if not np.all(np.isfinite(u_path)):
                raise NumericalError("non-finite decoded field")
        except NumericalError:
            n_failed += 1
            continue
        fields.append(u_path)
        paths.append(z_path)
    if n_failed > 0.25 * n_s:
        raise NumericalError(
            f"{n_failed} of {n_s} coefficient draws produced unstable dynamics")
    stack = np.stack(fields)
    mean = stack.mean(axis=0)
    var = np.mean((stack - mean) ** 2, axis=0)
    return RomPrediction(mean=mean, latents=np.stack(paths), variance=var,
                         n_failed=n_failed)


def max_relative_error(u_pred: np.ndarray, u_true: np.ndarray) -> float:
    """Worst-over-time relative L2 error between two trajectories."""
    u_pred = np.asarray(u_pred, dtype=float)
    u_true = np.asarray(u_true, dtype=float)
    if u_pred.shape != u_true.shape:
        raise ValueError(f"shape mismatch {u_pred.shape} vs {u_true.shape}")
    norms = np.linalg.norm(u_true, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("reference trajectory contains a zero-norm snapshot")
    return float(np.max(np.linalg.norm(u_pred - u_true, axis=1) / norms))


# ---------------------------------------------------------------------------
# checkpoint persistence
#
# Layout: 6-byte magic, little-endian u64 header length, UTF-8 JSON header,
# then the f64 arrays listed in the header manifest, raw and in order.
# Everything numeric lives in the arrays, so round-trips are bit-exact.

def _header_and_arrays(model: RomModel) -> tuple[dict, dict[str, np.ndarray]]:
    arrays: dict[str, np.ndarray] = {
        "scalars": np.array([model.dt], dtype=float),
        "params": np.ascontiguousarray(model.params, dtype=float),
        "xi": np.ascontiguousarray(model.xi, dtype=float),
    }
    header: dict = {
        "n_steps": int(model.n_steps),
        "library": {"include_constant": bool(model.lib.include_constant),
                    "poly_degree": int(model.lib.poly_degree)},
        "meta": model.meta,
    }
    if model.pod is not None:
        header["projection"] = "pod"
        arrays["pod_mean"] = model.pod.mean
        arrays["pod_basis"] = model.pod.basis
    else:
        header["projection"] = "mlp"
        header["enc_sizes"] = model.encoder.layer_sizes
        header["dec_sizes"] = model.decoder.layer_sizes
        header["activation"] = model.encoder.activation
        arrays["enc_flat"] = mlp_pack(model.encoder)
        arrays["dec_flat"] = mlp_pack(model.decoder)
    kind = interpolator_kind(model.interp)
    header["interp"] = {"kind": kind}
    if kind == "rbf":
        arrays["interp_eps"] = np.array([model.interp.eps], dtype=float)
    elif kind == "knn":
        header["interp"]["k"] = int(model.interp.k)
    else:
        arrays["gp_log_sf"] = model.interp.log_sf
        arrays["gp_log_ell"] = model.interp.log_ell
        arrays["gp_jitter"] = model.interp.jitter
    header["normalized"] = model.normalizer is not None
    if model.normalizer is not None:
        arrays["norm_shift"] = model.normalizer.shift
        arrays["norm_scale"] = model.normalizer.scale
    header["arrays"] = [[name, list(a.shape)] for name, a in arrays.items()]
    return header, arrays


def save_model(model: RomModel, fh: BinaryIO) -> None:
    header, arrays = _header_and_arrays(model)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    fh.write(MODEL_MAGIC)
    fh.write(struct.pack("<Q", len(blob)))
    fh.write(blob)
    for name, _ in header["arrays"]:
        fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def save_model_path(model: RomModel, path) -> None:
    with open(path, "wb") as fh:
        save_model(model, fh)


def load_model(fh: BinaryIO) -> RomModel:
    magic = fh.read(len(MODEL_MAGIC))
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad model magic {magic!r}")
    (blob_len,) = struct.unpack("<Q", _read_exact(fh, 8, "header length"))
    try:
        header = json.loads(_read_exact(fh, blob_len, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt model header: {exc}") from exc
    arrays: dict[str, np.ndarray] = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = _read_exact(fh, 8 * count, f"array {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(
            float, copy=True)
    if fh.read(1):
        raise FormatError("trailing bytes after model payload")

    lib = LibrarySpec(include_constant=header["library"]["include_constant"],
                      poly_degree=header["library"]["poly_degree"])
    params = arrays["params"]
    xi = arrays["xi"]
    dt = float(arrays["scalars"][0])
    encoder = decoder = pod = None
    if header["projection"] == "pod":
        pod = PodBasis(mean=arrays["pod_mean"], basis=arrays["pod_basis"])
    else:
        encoder = mlp_unpack(arrays["enc_flat"], header["enc_sizes"],
                             header["activation"])
        decoder = mlp_unpack(arrays["dec_flat"], header["dec_sizes"],
                             header["activation"])
    kind = header["interp"]["kind"]
    if kind == "rbf":
        interp = rbf_fit(params, xi, eps=float(arrays["interp_eps"][0]))
    elif kind == "knn":
        interp = knn_fit(params, xi, k=header["interp"]["k"])
    elif kind == "gp":
        interp = gp_from_hyperparams(params, xi, arrays["gp_log_sf"],
                                     arrays["gp_log_ell"], arrays["gp_jitter"])
    else:
        raise FormatError(f"unknown interpolator kind {kind!r}")
    normalizer = None
    if header.get("normalized"):
        normalizer = Normalizer(shift=arrays["norm_shift"], scale=arrays["norm_scale"])
    return RomModel(lib=lib, params=params, xi=xi, interp=interp, dt=dt,
                    n_steps=header["n_steps"], encoder=encoder, decoder=decoder,
                    pod=pod, normalizer=normalizer, meta=header.get("meta", {}))


def load_model_path(path) -> RomModel:
    with open(path, "rb") as fh:
        return load_model(fh)
