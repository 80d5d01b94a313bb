"""Joint training with optional greedy data acquisition.

The loop runs full-batch Adam on the combined loss (reconstruction + latent
dynamics + optional velocity matching + coefficient penalty).  Every ``n_up``
epochs, while budget remains, it scores a candidate parameter grid — by the
time-averaged PDE residual of mean predictions, or by the maximum sampled
prediction variance — solves the full-order model at the winner, and appends
the new trajectory to the training set.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .data_model import ParameterPoint, SnapshotSet, append_snapshot
from .errors import ConfigError, NumericalError
from .fom_burgers import BurgersFom
from .interpolation import fit_interpolator
from .latent_dynamics import (
    LibrarySpec,
    build_library,
    build_test_functions,
    default_weak_params,
    finite_difference_dz,
    sindy_loss,
    strong_fit,
    weak_fit,
    weak_sindy_loss,
    weak_system,
)
from .projection import (
    LossParts,
    MlpParams,
    adam_init,
    adam_step,
    encode,
    fit_normalizer,
    loss_gradients,
    mlp_init,
    mlp_pack,
    mlp_unpack,
    pod_decode,
    pod_encode,
    pod_fit,
    reconstruction_loss,
    velocity_loss,
)
from .rom import RomModel, predict, predict_with_uncertainty, save_model_path


@dataclass(frozen=True)
class LossWeights:
    """The four combined-loss weights (reconstruction, dynamics, velocity,
    coefficient penalty)."""

    beta1: float = 1.0
    beta2: float = 0.1
    beta3: float = 0.0
    beta4: float = 1e-6

    def __post_init__(self):
        betas = (self.beta1, self.beta2, self.beta3, self.beta4)
        if not all(np.isfinite(b) and b >= 0 for b in betas):
            raise ValueError(f"loss weights must be finite and nonnegative: {betas}")
        if all(b == 0 for b in betas):
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class TrainConfig:
    n_epochs: int
    n_up: int
    lr: float = 1e-3
    seed: int = 0
    weights: LossWeights = LossWeights()
    lib: LibrarySpec = LibrarySpec()
    mode: str = "strong"                 # strong | weak
    sampler: str = "none"                # none | residual | variance
    budget: int = 0
    n_var_samples: int = 20              # draws per candidate for the variance sampler
    projection: str = "mlp"              # mlp | pod
    hidden: tuple[int, ...] = (100,)
    n_z: int = 5
    activation: str = "sigmoid"
    normalize: bool = False
    interp_kind: str = "gp"              # rbf | knn | gp
    interp_k: int = 4
    interp_eps: float | None = None
    gp_jitter: float = 1e-8
    gp_restarts: int = 8
    gp_iters: int = 200
    weak_n_k: int | None = None
    weak_m_t: int | None = None
    weak_p: int = 7
    candidates: tuple[ParameterPoint, ...] = ()
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.n_epochs < 1 or self.n_up < 1:
            raise ConfigError("n_epochs and n_up must be positive")
        if self.n_up > self.n_epochs:
            raise ConfigError(f"n_up ({self.n_up}) must not exceed n_epochs "
                              f"({self.n_epochs})")
        if self.budget < 0:
            raise ConfigError("budget must be nonnegative")
        if self.mode not in ("strong", "weak"):
            raise ConfigError(f"unknown dynamics mode {self.mode!r}")
        if self.sampler not in ("none", "residual", "variance"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if self.projection not in ("mlp", "pod"):
            raise ConfigError(f"unknown projection {self.projection!r}")
        if self.sampler != "none" and self.budget > 0 and not self.candidates:
            raise ConfigError("greedy sampling needs a candidate grid")
        if self.sampler == "variance" and self.interp_kind != "gp":
            raise ConfigError("the variance sampler requires the GP interpolator")
        if self.projection == "pod" and self.sampler != "none":
            raise ConfigError("POD projection supports sampler 'none' only")


@dataclass(frozen=True)
class AcquisitionRecord:
    epoch: int
    param: ParameterPoint
    score: float
    sampler: str
    candidate_values: np.ndarray     # (n_cand, n_dims)
    candidate_scores: np.ndarray     # NaN where excluded (already trained / failed)
    seed: int | None = None          # base seed of the variance sampler, if used


@dataclass
class TrainLog:
    epochs: list[int] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    recon: list[float] = field(default_factory=list)
    dynamics: list[float] = field(default_factory=list)
    velocity: list[float] = field(default_factory=list)
    penalty: list[float] = field(default_factory=list)
    acquisitions: list[AcquisitionRecord] = field(default_factory=list)

    def record(self, epoch: int, parts) -> None:
        self.epochs.append(epoch)
        self.total.append(parts.total)
        self.recon.append(parts.recon)
        self.dynamics.append(parts.dynamics)
        self.velocity.append(parts.velocity)
        self.penalty.append(parts.penalty)

    def to_csv(self) -> str:
        acquired = {rec.epoch: rec.param for rec in self.acquisitions}
        lines = ["epoch,loss_total,loss_ae,loss_dyn,loss_vel,penalty,acquired_param"]
        for k, e in enumerate(self.epochs):
            mu = acquired.get(e)
            lines.append(",".join([
                str(e), repr(self.total[k]), repr(self.recon[k]),
                repr(self.dynamics[k]), repr(self.velocity[k]),
                repr(self.penalty[k]), "" if mu is None else str(mu),
            ]))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# combined loss via public sub-operations (independent of the fused engine)

def total_loss(p_e: MlpParams, p_d: MlpParams, xi: np.ndarray, sset: SnapshotSet,
               weights: LossWeights, mode: str = "strong",
               lib: LibrarySpec = LibrarySpec(), bank=None) -> float:
    """Weighted sum of the four sub-losses, each computed by its own public
    operation.  Serves as the reference value for the fused
    gradient-engine computation."""
    xi = np.asarray(xi, dtype=float)
    val = 0.0
    if weights.beta1 > 0:
        val += weights.beta1 * reconstruction_loss(p_e, p_d, sset)
    if weights.beta2 > 0:
        z_tensor = np.stack([encode(p_e, t.states) for t in sset.trajectories])
        if mode == "strong":
            dz = np.stack([finite_difference_dz(z, sset.dt) for z in z_tensor])
            val += weights.beta2 * sindy_loss(z_tensor, dz, xi, lib)
        else:
            val += weights.beta2 * weak_sindy_loss(z_tensor, xi, lib, bank)
    if weights.beta3 > 0:
        val += weights.beta3 * velocity_loss(p_e, p_d, xi, sset, lib)
    if weights.beta4 > 0:
        val += weights.beta4 * float(np.sum(xi**2))
    return val


# ---------------------------------------------------------------------------
# acquisition scoring

def _untrained_mask(candidates, training_params) -> np.ndarray:
    trained = {p.values for p in training_params}
    return np.array([c.values not in trained for c in candidates], dtype=bool)


def residual_scores(model: RomModel, candidates, training_params,
                    fom: BurgersFom) -> np.ndarray:
    """Time-averaged PDE residual of the mean ROM prediction per candidate;
    NaN marks candidates that are already trained or failed to integrate."""
    mask = _untrained_mask(candidates, training_params)
    scores = np.full(len(candidates), np.nan)
    for idx, mu in enumerate(candidates):
        if not mask[idx]:
            continue
        try:
            pred = predict(model, mu.as_array(), fom.initial_state(mu))
            scores[idx] = fom.score_residual(pred.mean, mu)
        except NumericalError:
            continue
    return scores


def variance_scores(model: RomModel, candidates, training_params, ic,
                    n_s: int, seed: int) -> np.ndarray:
    """Maximum over space-time of the sampled prediction variance per
    candidate (``ic`` maps a parameter point to its initial state).  Each
    candidate draws from an independent stream derived from ``seed`` and its
    grid index, so scores do not depend on which candidates are trained."""
    mask = _untrained_mask(candidates, training_params)
    scores = np.full(len(candidates), np.nan)
    for idx, mu in enumerate(candidates):
        if not mask[idx]:
            continue
        sub_seed = int(np.random.SeedSequence([seed, idx]).generate_state(1)[0])
        try:
            pred = predict_with_uncertainty(model, mu.as_array(), ic(mu),
                                            n_s=n_s, seed=sub_seed)
            scores[idx] = float(np.max(pred.variance))
        except NumericalError:
            continue
    return scores


def _argmax_candidate(candidates, scores: np.ndarray) -> tuple[ParameterPoint, float]:
    if np.all(np.isnan(scores)):
        raise ValueError("no scorable candidates (all trained or all failed)")
    best = int(np.nanargmax(scores))  # first maximum: smallest grid index wins ties
    return candidates[best], float(scores[best])


def select_next_residual(model: RomModel, candidates, training_params,
                         fom: BurgersFom) -> ParameterPoint:
    """Untrained candidate whose mean prediction violates the PDE most."""
    scores = residual_scores(model, candidates, training_params, fom)
    return _argmax_candidate(candidates, scores)[0]


def select_next_variance(model: RomModel, candidates, training_params, ic,
                         n_s: int = 20, seed: int = 0) -> ParameterPoint:
    """Untrained candidate with the largest sampled prediction variance."""
    scores = variance_scores(model, candidates, training_params, ic, n_s, seed)
    return _argmax_candidate(candidates, scores)[0]


# ---------------------------------------------------------------------------
# the training loop

def _pack(p_e: MlpParams, p_d: MlpParams, xi: np.ndarray) -> np.ndarray:
    return np.concatenate([mlp_pack(p_e), mlp_pack(p_d), xi.ravel()])


# Relative weight of the ridge term in warm-start coefficient fits.  The
# ridge is scaled to the design matrix: a near-exact fit on unsettled latents
# can produce coefficients orders of magnitude above their final values, with
# strongly unstable linear parts that derail both the joint optimization and
# any interpolation between trajectories.
_WARMSTART_RIDGE = 1e-3


def _fit_traj_coeffs(z: np.ndarray, dt: float, lib: LibrarySpec, mode: str,
                     bank) -> np.ndarray:
    if mode == "strong":
        theta = build_library(z, lib)
        ridge = _WARMSTART_RIDGE * theta.shape[0] * float(np.mean(theta**2))
        return strong_fit(z, finite_difference_dz(z, dt), lib, ridge=ridge)
    g, b = weak_system(z, lib, bank)
    ridge = _WARMSTART_RIDGE * g.shape[0] * float(np.mean(g**2))
    return weak_fit(g, b, ridge=ridge)


def _make_bank(cfg: TrainConfig, n_steps: int, dt: float):
    if cfg.mode != "weak":
        return None
    n_k, m_t = default_weak_params(n_steps + 1)
    return build_test_functions(n_steps, dt,
                                cfg.weak_n_k if cfg.weak_n_k is not None else n_k,
                                cfg.weak_m_t if cfg.weak_m_t is not None else m_t,
                                cfg.weak_p)


def _fit_interp(cfg: TrainConfig, params_mat: np.ndarray, xi: np.ndarray):
    return fit_interpolator(cfg.interp_kind, params_mat, xi, k=cfg.interp_k,
                            eps=cfg.interp_eps, jitter=cfg.gp_jitter,
                            restarts=cfg.gp_restarts, iters=cfg.gp_iters,
                            seed=cfg.seed)


def _train_pod(cfg: TrainConfig, sset: SnapshotSet) -> tuple[RomModel, TrainLog]:
    """Decoupled linear path: fit the basis once, identify each trajectory's
    latent ODE directly, interpolate.  No gradient descent is involved."""
    basis = pod_fit(sset, cfg.n_z)
    bank = _make_bank(cfg, sset.n_steps, sset.dt)
    lats = np.stack([pod_encode(basis, t.states) for t in sset.trajectories])
    xi = np.stack([_fit_traj_coeffs(z, sset.dt, cfg.lib, cfg.mode, bank)
                   for z in lats])
    interp = _fit_interp(cfg, sset.param_matrix(), xi)
    model = RomModel(lib=cfg.lib, params=sset.param_matrix(), xi=xi, interp=interp,
                     dt=sset.dt, n_steps=sset.n_steps, pod=basis,
                     meta={"mode": cfg.mode, "seed": cfg.seed, "projection": "pod"})
    log = TrainLog()
    recon = sum(float(np.sum((t.states - pod_decode(basis, pod_encode(basis, t.states)))**2))
                / (sset.n_steps + 1) for t in sset.trajectories) / sset.n_traj
    if cfg.mode == "strong":
        dz = np.stack([finite_difference_dz(z, sset.dt) for z in lats])
        dyn = sindy_loss(lats, dz, xi, cfg.lib)
    else:
        dyn = weak_sindy_loss(lats, xi, cfg.lib, bank)
    pen = float(np.sum(xi**2))
    w = cfg.weights
    log.record(0, LossParts(total=w.beta1 * recon + w.beta2 * dyn + w.beta4 * pen,
                            recon=recon, dynamics=dyn, velocity=0.0, penalty=pen))
    return model, log


def train(cfg: TrainConfig, initial_set: SnapshotSet, fom: BurgersFom | None = None
          ) -> tuple[RomModel, TrainLog]:
    """Run the joint training loop and return the trained model plus its log.

    Acquisitions happen at epochs e with e % n_up == 0, 0 < e < n_epochs,
    while budget remains: the configured sampler scores every untrained
    candidate, the winner's trajectory is simulated and appended, its
    coefficient matrix is initialized by a direct fit on the encoded latents,
    and the interpolator is refit.  A checkpoint of the pre-acquisition model
    is written whenever ``checkpoint_dir`` is set.

    Epoch rows in the log hold the loss evaluated before that epoch's update;
    one extra row (epoch = n_epochs) holds the final loss.  Sub-losses whose
    weight is zero are logged as 0.
    """
    if cfg.sampler != "none" and cfg.budget > 0 and fom is None:
        raise ConfigError("greedy sampling needs a full-order solver")
    if cfg.projection == "pod":
        return _train_pod(cfg, initial_set)

    sset = initial_set
    norm = fit_normalizer(sset) if cfg.normalize else None

    def training_view(s: SnapshotSet) -> SnapshotSet:
        if norm is None:
            return s
        return SnapshotSet(trajectories=tuple(
            replace(t, states=norm.forward(t.states)) for t in s.trajectories))

    work = training_view(sset)
    n_u = work.n_dof
    enc_sizes = [n_u, *cfg.hidden, cfg.n_z]
    dec_sizes = [cfg.n_z, *reversed(cfg.hidden), n_u]
    p_e = mlp_init(enc_sizes, cfg.activation, seed=cfg.seed)
    p_d = mlp_init(dec_sizes, cfg.activation, seed=cfg.seed + 1)
    bank = _make_bank(cfg, work.n_steps, work.dt)
    n_l = cfg.lib.n_terms(cfg.n_z)
    xi = np.stack([_fit_traj_coeffs(encode(p_e, t.states), work.dt, cfg.lib,
                                    cfg.mode, bank) for t in work.trajectories])

    flat = _pack(p_e, p_d, xi)
    state = adam_init(flat.size)
    log = TrainLog()
    budget_left = cfg.budget

    def unpack(vec: np.ndarray):
        n_e = p_e.n_params
        n_d = p_d.n_params
        enc = mlp_unpack(vec[:n_e], enc_sizes, cfg.activation)
        dec = mlp_unpack(vec[n_e:n_e + n_d], dec_sizes, cfg.activation)
        coeffs = vec[n_e + n_d:].reshape(-1, cfg.n_z, n_l).copy()
        return enc, dec, coeffs

    def build_model(enc, dec, coeffs) -> RomModel:
        interp = _fit_interp(cfg, sset.param_matrix(), coeffs)
        return RomModel(lib=cfg.lib, params=sset.param_matrix(), xi=coeffs,
                        interp=interp, dt=sset.dt, n_steps=sset.n_steps,
                        encoder=enc, decoder=dec, normalizer=norm,
                        meta={"mode": cfg.mode, "seed": cfg.seed,
                              "projection": "mlp"})

    for e in range(cfg.n_epochs):
        if e > 0 and e % cfg.n_up == 0 and budget_left > 0:
            p_e, p_d, xi = unpack(flat)
            model = build_model(p_e, p_d, xi)
            if cfg.checkpoint_dir is not None:
                os.makedirs(cfg.checkpoint_dir, exist_ok=True)
                save_model_path(model, os.path.join(
                    cfg.checkpoint_dir, f"checkpoint_epoch{e:06d}.lsdm"))
            acq_index = len(log.acquisitions)
            if cfg.sampler == "residual":
                scores = residual_scores(model, cfg.candidates, sset.params, fom)
                seed_used = None
            else:
                seed_used = cfg.seed + 7919 * (acq_index + 1)
                scores = variance_scores(model, cfg.candidates, sset.params,
                                         fom.initial_state, cfg.n_var_samples,
                                         seed_used)
            mu_new, score = _argmax_candidate(cfg.candidates, scores)
            try:
                traj = fom.solve(mu_new)
            except NumericalError as exc:
                exc.log = log
                raise NumericalError(
                    f"full-order solve failed during acquisition at epoch {e} "
                    f"({mu_new}): {exc}") from exc
            sset = append_snapshot(sset, traj)
            work = training_view(sset)
            z_new = encode(p_e, work.trajectories[-1].states)
            xi_new = _fit_traj_coeffs(z_new, work.dt, cfg.lib, cfg.mode, bank)
            xi = np.concatenate([xi, xi_new[None]], axis=0)
            flat = _pack(p_e, p_d, xi)
            pad = xi_new.size
            state.m = np.concatenate([state.m, np.zeros(pad)])
            state.v = np.concatenate([state.v, np.zeros(pad)])
            budget_left -= 1
            log.acquisitions.append(AcquisitionRecord(
                epoch=e, param=mu_new, score=score, sampler=cfg.sampler,
                candidate_values=np.array([c.values for c in cfg.candidates]),
                candidate_scores=scores, seed=seed_used))

        p_e, p_d, xi = unpack(flat)
        parts, grads = loss_gradients(p_e, p_d, xi, work, cfg.weights, cfg.lib,
                                      mode=cfg.mode, bank=bank)
        log.record(e, parts)
        flat, state = adam_step(flat, grads.flat(), state, lr=cfg.lr)

    p_e, p_d, xi = unpack(flat)
    parts, _ = loss_gradients(p_e, p_d, xi, work, cfg.weights, cfg.lib,
                              mode=cfg.mode, bank=bank)
    log.record(cfg.n_epochs, parts)
    model = build_model(p_e, p_d, xi)
    model.meta["epochs_trained"] = cfg.n_epochs
    return model, log
