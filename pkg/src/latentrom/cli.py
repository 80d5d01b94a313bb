"""Command-line front end.

Subcommands: ``fom-run`` (generate snapshot data), ``train`` (joint training,
optionally greedy), ``predict`` (single-parameter prediction), ``heatmap``
(per-grid-point error/uncertainty CSV), ``benchmark`` (FOM vs ROM wall-clock).

All behaviour is driven by a flat ``key = value`` config document with
documented defaults; ``--set key=value`` overrides individual entries and
``--seed`` is the single source of randomness.  Exit codes: 0 success,
2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import (
    ParameterGrid,
    ParameterPoint,
    SnapshotSet,
    Trajectory,
    load_snapshots,
    make_parameter_grid,
    save_snapshots,
)
from .errors import ConfigError, FormatError, NumericalError
from .fom_burgers import BurgersConfig, BurgersFom, burgers_initial_condition, solve_grid
from .greedy_training import LossWeights, TrainConfig, train
from .interpolation import GpModel
from .latent_dynamics import LibrarySpec
from .rom import (
    load_model_path,
    max_relative_error,
    predict,
    predict_with_uncertainty,
    save_model_path,
)

_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_float_list(s: str) -> tuple[float, ...]:
    return tuple(float(p) for p in s.split(","))


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in s.split(","))


@dataclass(frozen=True)
class _Field:
    parse: object
    default: object
    check: object = None          # value -> error string or None
    choices: tuple | None = None


def _nonneg(v):
    return None if v >= 0 else "must be nonnegative"


def _positive(v):
    return None if v > 0 else "must be positive"


def _at_least(n):
    return lambda v: None if v >= n else f"must be at least {n}"


def _all_at_least(n):
    return lambda v: None if all(x >= n for x in v) else f"entries must be at least {n}"


_SCHEMA: dict[str, _Field] = {
    "fom.x_min": _Field(float, -3.0),
    "fom.x_max": _Field(float, 3.0),
    "fom.n_x": _Field(int, 201, _at_least(3)),
    "fom.dt": _Field(float, 5e-3, _positive),
    "fom.t_max": _Field(float, 1.0, _positive),
    "fom.newton_tol": _Field(float, 1e-9, _positive),
    "fom.newton_max_iter": _Field(int, 25, _at_least(1)),
    "fom.residual_samples": _Field(int, 0, _nonneg),      # 0 = automatic
    "space.mins": _Field(_parse_float_list, (0.7, 0.9)),
    "space.maxs": _Field(_parse_float_list, (0.9, 1.1)),
    "space.train_counts": _Field(_parse_int_list, (2, 2), _all_at_least(2)),
    "space.test_counts": _Field(_parse_int_list, (5, 5), _all_at_least(2)),
    "space.candidate_counts": _Field(_parse_int_list, (21, 21), _all_at_least(2)),
    "ae.hidden": _Field(_parse_int_list, (100,), _all_at_least(1)),
    "ae.n_z": _Field(int, 5, _at_least(1)),
    "ae.activation": _Field(str, "sigmoid",
                            choices=("sigmoid", "softplus", "relu", "tanh")),
    "ae.projection": _Field(str, "mlp", choices=("mlp", "pod")),
    "ae.normalize": _Field(_parse_bool, False),
    "loss.beta1": _Field(float, 1.0, _nonneg),
    "loss.beta2": _Field(float, 0.1, _nonneg),
    "loss.beta3": _Field(float, 0.0, _nonneg),
    "loss.beta4": _Field(float, 1e-6, _nonneg),
    "dynamics.mode": _Field(str, "strong", choices=("strong", "weak")),
    "dynamics.include_constant": _Field(_parse_bool, True),
    "dynamics.poly_degree": _Field(int, 1, lambda v: None if v in (1, 2)
                                   else "must be 1 or 2"),
    "dynamics.weak_n_k": _Field(int, 0, _nonneg),          # 0 = automatic
    "dynamics.weak_m_t": _Field(int, 0, _nonneg),          # 0 = automatic
    "dynamics.weak_p": _Field(int, 7, _at_least(2)),
    "interp.kind": _Field(str, "gp", choices=("rbf", "knn", "gp")),
    "interp.k": _Field(int, 4, _at_least(1)),
    "interp.epsilon": _Field(float, 0.0, _nonneg),         # 0 = automatic
    "gp.jitter": _Field(float, 1e-8, _positive),
    "gp.restarts": _Field(int, 8, _at_least(1)),
    "gp.iters": _Field(int, 200, _at_least(1)),
    "greedy.sampler": _Field(str, "none", choices=("none", "residual", "variance")),
    "greedy.n_up": _Field(int, 2000, _at_least(1)),
    "greedy.budget": _Field(int, 0, _nonneg),
    "greedy.n_samples": _Field(int, 20, _at_least(2)),
    "train.n_epochs": _Field(int, 20000, _at_least(1)),
    "train.lr": _Field(float, 1e-3, _positive),
    "paths.out_dir": _Field(str, "."),
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; attribute names are the schema keys with dots
    replaced by underscores."""

    values: dict

    def __getattr__(self, name: str):
        key = name.replace("_", ".", 1)
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(name) from None

    def burgers_config(self) -> BurgersConfig:
        return BurgersConfig(x_min=self.values["fom.x_min"],
                             x_max=self.values["fom.x_max"],
                             n_x=self.values["fom.n_x"],
                             dt=self.values["fom.dt"],
                             t_max=self.values["fom.t_max"],
                             newton_tol=self.values["fom.newton_tol"],
                             newton_max_iter=self.values["fom.newton_max_iter"])

    def library(self) -> LibrarySpec:
        return LibrarySpec(include_constant=self.values["dynamics.include_constant"],
                           poly_degree=self.values["dynamics.poly_degree"])

    def loss_weights(self) -> LossWeights:
        return LossWeights(beta1=self.values["loss.beta1"],
                           beta2=self.values["loss.beta2"],
                           beta3=self.values["loss.beta3"],
                           beta4=self.values["loss.beta4"])

    def _grid(self, counts_key: str) -> ParameterGrid:
        mins, maxs = self.values["space.mins"], self.values["space.maxs"]
        counts = self.values[counts_key]
        if not len(mins) == len(maxs) == len(counts):
            raise ConfigError(
                f"space.mins/space.maxs/{counts_key} must share one length")
        return make_parameter_grid(list(zip(mins, maxs)), counts)

    def train_grid(self) -> ParameterGrid:
        return self._grid("space.train_counts")

    def test_grid(self) -> ParameterGrid:
        return self._grid("space.test_counts")

    def candidate_grid(self) -> ParameterGrid:
        return self._grid("space.candidate_counts")

    def train_config(self, seed: int, checkpoint_dir: str | None = None) -> TrainConfig:
        v = self.values
        candidates = ()
        if v["greedy.sampler"] != "none" and v["greedy.budget"] > 0:
            candidates = self.candidate_grid().points
        return TrainConfig(
            n_epochs=v["train.n_epochs"], n_up=v["greedy.n_up"], lr=v["train.lr"],
            seed=seed, weights=self.loss_weights(), lib=self.library(),
            mode=v["dynamics.mode"], sampler=v["greedy.sampler"],
            budget=v["greedy.budget"], n_var_samples=v["greedy.n_samples"],
            projection=v["ae.projection"], hidden=v["ae.hidden"], n_z=v["ae.n_z"],
            activation=v["ae.activation"], normalize=v["ae.normalize"],
            interp_kind=v["interp.kind"], interp_k=v["interp.k"],
            interp_eps=v["interp.epsilon"] or None, gp_jitter=v["gp.jitter"],
            gp_restarts=v["gp.restarts"], gp_iters=v["gp.iters"],
            weak_n_k=v["dynamics.weak_n_k"] or None,
            weak_m_t=v["dynamics.weak_m_t"] or None,
            weak_p=v["dynamics.weak_p"], candidates=candidates,
            checkpoint_dir=checkpoint_dir)


def parse_config(text: str, overrides: list[str] | None = None) -> RunConfig:
    """Parse and validate a ``key = value`` document (``#`` starts a comment).

    Every schema key has a default; unknown keys, type errors, and constraint
    violations raise ConfigError naming the key and line.  ``overrides`` are
    extra ``key=value`` strings applied on top (e.g. from ``--set`` flags).
    """
    raw: dict[str, tuple[str, str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, val = body.partition("=")
        raw[key.strip()] = (val.strip(), f"line {lineno}")
    for ov in overrides or []:
        if "=" not in ov:
            raise ConfigError(f"--set needs key=value, got {ov!r}")
        key, _, val = ov.partition("=")
        raw[key.strip()] = (val.strip(), "command line")

    values = {}
    for key, (val, where) in raw.items():
        if key not in _SCHEMA:
            raise ConfigError(f"{where}: unknown key {key!r}")
        fld = _SCHEMA[key]
        try:
            parsed = fld.parse(val)
        except ValueError:
            raise ConfigError(
                f"{where}: bad value for {key!r}: {val!r}") from None
        if fld.choices is not None and parsed not in fld.choices:
            raise ConfigError(
                f"{where}: {key!r} must be one of {fld.choices}, got {parsed!r}")
        if fld.check is not None:
            msg = fld.check(parsed)
            if msg:
                raise ConfigError(f"{where}: {key!r} {msg}")
        values[key] = parsed
    for key, fld in _SCHEMA.items():
        values.setdefault(key, fld.default)

    if values["fom.x_min"] >= values["fom.x_max"]:
        raise ConfigError("'fom.x_min' must be below 'fom.x_max'")
    if len(values["space.mins"]) != len(values["space.maxs"]):
        raise ConfigError("'space.mins' and 'space.maxs' must share one length")
    if any(lo >= hi for lo, hi in zip(values["space.mins"], values["space.maxs"])):
        raise ConfigError("'space.mins' entries must be below 'space.maxs'")
    return RunConfig(values=values)


def render_config(cfg: RunConfig) -> str:
    """Serialize a config back to the document format (round-trips through
    parse_config)."""
    lines = []
    for key in _SCHEMA:
        v = cfg.values[key]
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def _load_config(args) -> RunConfig:
    text = ""
    if args.config is not None:
        text = Path(args.config).read_text(encoding="utf-8")
    cfg = parse_config(text, overrides=args.set or [])
    out_dir = Path(cfg.values["paths.out_dir"])
    if not out_dir.is_dir():
        raise ConfigError(f"'paths.out_dir' does not exist: {out_dir}")
    return cfg


def _out_path(cfg: RunConfig, flag_value, default_name: str) -> Path:
    if flag_value is not None:
        return Path(flag_value)
    return Path(cfg.values["paths.out_dir"]) / default_name


def _parse_mu(s: str) -> ParameterPoint:
    return ParameterPoint(tuple(float(p) for p in s.split(",")))


def _make_fom(cfg: RunConfig) -> BurgersFom:
    n_rs = cfg.values["fom.residual_samples"] or None
    return BurgersFom(cfg.burgers_config(), n_residual_samples=n_rs)


# ---------------------------------------------------------------------------
# subcommands

def cmd_fom_run(cfg: RunConfig, args) -> int:
    grid = {"train": cfg.train_grid, "test": cfg.test_grid,
            "candidate": cfg.candidate_grid}[args.grid]()
    sset = solve_grid(grid, cfg.burgers_config())
    out = _out_path(cfg, args.out, f"snapshots_{args.grid}.lsdi")
    save_snapshots(sset, out)
    print(f"wrote {sset.n_traj} trajectories "
          f"({sset.n_steps + 1} x {sset.n_dof} each) to {out}")
    return 0


def cmd_train(cfg: RunConfig, args, seed: int) -> int:
    if args.data is not None:
        sset = load_snapshots(args.data)
    else:
        sset = solve_grid(cfg.train_grid(), cfg.burgers_config())
    tcfg = cfg.train_config(seed=seed, checkpoint_dir=args.checkpoint_dir)
    model, log = train(tcfg, sset, _make_fom(cfg))
    out = _out_path(cfg, args.out, "model.lsdm")
    save_model_path(model, out)
    log_path = _out_path(cfg, args.log, "train_log.csv")
    log_path.write_text(log.to_csv(), encoding="utf-8")
    print(f"trained {tcfg.n_epochs} epochs on {model.params.shape[0]} trajectories; "
          f"final loss {log.total[-1]:.6e}")
    print(f"model -> {out}")
    print(f"log   -> {log_path}")
    return 0


def _predict_once(cfg: RunConfig, model, mu: ParameterPoint, n_samples: int,
                  seed: int):
    u0 = burgers_initial_condition(mu, cfg.burgers_config().x_grid())
    if n_samples > 0:
        if not isinstance(model.interp, GpModel):
            raise ConfigError("sampled prediction requires a model trained with "
                              "interp.kind = gp")
        return predict_with_uncertainty(model, mu.as_array(), u0,
                                        n_s=n_samples, seed=seed)
    return predict(model, mu.as_array(), u0)


def cmd_predict(cfg: RunConfig, args, seed: int) -> int:
    model = load_model_path(args.model)
    mu = _parse_mu(args.mu)
    pred = _predict_once(cfg, model, mu, args.samples, seed)
    out = _out_path(cfg, args.out, "prediction.lsdi")
    save_snapshots(SnapshotSet((Trajectory(states=pred.mean, dt=model.dt,
                                           param=mu),)), out)
    print(f"mean field -> {out}")
    if pred.std is not None:
        std_out = _out_path(cfg, args.std_out, "prediction_std.lsdi")
        save_snapshots(SnapshotSet((Trajectory(states=pred.std, dt=model.dt,
                                               param=mu),)), std_out)
        print(f"std field  -> {std_out}")
    if args.truth is not None:
        truth = load_snapshots(args.truth)
        match = [t for t in truth.trajectories if t.param.values == mu.values]
        if not match:
            raise ConfigError(f"truth file has no trajectory at {mu}")
        u_true = match[0].states
        if u_true.shape != pred.mean.shape:
            raise ConfigError("truth trajectory shape does not match the prediction")
        norms = np.linalg.norm(u_true, axis=1)
        rel = np.linalg.norm(pred.mean - u_true, axis=1) / norms
        err_path = _out_path(cfg, args.errors_out, "prediction_errors.csv")
        rows = ["time_index,rel_error"] + [f"{n},{repr(float(r))}"
                                           for n, r in enumerate(rel)]
        err_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        print(f"errors     -> {err_path}")
        print(f"max relative error: {float(rel.max()):.6e}")
    return 0


def cmd_heatmap(cfg: RunConfig, args, seed: int) -> int:
    model = load_model_path(args.model)
    truth = load_snapshots(args.truth)
    by_param = {t.param.values: t for t in truth.trajectories}
    grid = cfg.test_grid()
    with_std = args.samples > 0
    header = ",".join(f"mu{d}" for d in range(grid.n_dims)) + ",max_rel_error_pct"
    if with_std:
        header += ",max_std"
    lines = [header]
    for point in grid.points:
        traj = by_param.get(point.values)
        if traj is None:
            raise ConfigError(f"truth file has no trajectory at grid point {point}")
        pred = _predict_once(cfg, model, point, args.samples, seed)
        err_pct = 100.0 * max_relative_error(pred.mean, traj.states)
        row = [repr(v) for v in point.values] + [repr(err_pct)]
        if with_std:
            row.append(repr(float(np.max(pred.std))))
        lines.append(",".join(row))
    out = _out_path(cfg, args.out, "heatmap.csv")
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"heatmap ({len(grid.points)} points) -> {out}")
    return 0


def cmd_benchmark(cfg: RunConfig, args, seed: int) -> int:
    if args.repeats < 1:
        raise ConfigError("--repeats must be at least 1")
    model = load_model_path(args.model)
    mu = _parse_mu(args.mu)
    bcfg = cfg.burgers_config()
    fom = BurgersFom(bcfg)
    u0 = burgers_initial_condition(mu, bcfg.x_grid())

    fom_times, rom_times = [], []
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        fom.solve(mu)
        fom_times.append(time.perf_counter() - t0)
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        predict(model, mu.as_array(), u0)
        rom_times.append(time.perf_counter() - t0)
    fom_mean = sum(fom_times) / len(fom_times)
    rom_mean = sum(rom_times) / len(rom_times)
    print(f"fom_mean_s={fom_mean:.6f}")
    print(f"fom_min_s={min(fom_times):.6f}")
    print(f"rom_mean_s={rom_mean:.6f}")
    print(f"rom_min_s={min(rom_times):.6f}")
    print(f"speedup={fom_mean / rom_mean:.2f}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config document (omit for all defaults)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry (repeatable)")
    common.add_argument("--seed", type=int, default=0,
                        help="seed for every random choice (default 0)")
    common.add_argument("--threads", type=int, default=0,
                        help="cap BLAS worker threads (0 = leave unchanged)")

    p = argparse.ArgumentParser(prog="latentrom",
                                description="Latent-ODE reduced-order modeling "
                                            "of parameterized PDEs")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("fom-run", parents=[common],
                       help="solve the full-order model over a parameter grid")
    q.add_argument("--grid", choices=("train", "test", "candidate"), default="train")
    q.add_argument("--out", help="snapshot output file")
    q.add_argument("--a-range", metavar="LO,HI", help="override the first parameter range")
    q.add_argument("--w-range", metavar="LO,HI", help="override the second parameter range")
    q.add_argument("--counts", metavar="N,M", help="override the grid counts")
    q.add_argument("--nx", type=int, help="override fom.n_x")
    q.add_argument("--dt", type=float, help="override fom.dt")
    q.add_argument("--tmax", type=float, help="override fom.t_max")
    q.set_defaults(fn=lambda cfg, args, seed: cmd_fom_run(cfg, args))

    q = sub.add_parser("train", parents=[common], help="train a reduced model")
    q.add_argument("--data", help="training snapshots (default: solve the train grid)")
    q.add_argument("--out", help="model output file")
    q.add_argument("--log", help="training-log CSV path")
    q.add_argument("--checkpoint-dir", help="write a checkpoint before each acquisition")
    q.set_defaults(fn=cmd_train)

    q = sub.add_parser("predict", parents=[common],
                       help="predict the field at one parameter point")
    q.add_argument("--model", required=True)
    q.add_argument("--mu", required=True, help="comma-separated parameter values")
    q.add_argument("--samples", type=int, default=0,
                   help="GP coefficient draws (0 = mean-only)")
    q.add_argument("--out", help="mean-field output file")
    q.add_argument("--std-out", help="std-field output file (sampled runs)")
    q.add_argument("--truth", help="snapshot file with the reference trajectory")
    q.add_argument("--errors-out", help="per-time relative-error CSV path")
    q.set_defaults(fn=cmd_predict)

    q = sub.add_parser("heatmap", parents=[common],
                       help="per-test-grid-point error (and uncertainty) CSV")
    q.add_argument("--model", required=True)
    q.add_argument("--truth", required=True,
                   help="snapshot file covering every test-grid point")
    q.add_argument("--samples", type=int, default=0,
                   help="GP draws per point; adds a max_std column")
    q.add_argument("--out", help="CSV output path")
    q.set_defaults(fn=cmd_heatmap)

    q = sub.add_parser("benchmark", parents=[common],
                       help="wall-clock comparison of one FOM solve vs ROM predict")
    q.add_argument("--model", required=True)
    q.add_argument("--mu", required=True)
    q.add_argument("--repeats", type=int, default=3)
    q.set_defaults(fn=cmd_benchmark)
    return p


def _flag_overrides(args) -> list[str]:
    """Map the fom-run convenience flags onto config ``--set`` overrides."""
    pairs = []
    a = getattr(args, "a_range", None)
    w = getattr(args, "w_range", None)
    if a is not None or w is not None:
        if a is None or w is None:
            raise ConfigError("--a-range and --w-range must be given together")
        alo, ahi = a.split(",")
        wlo, whi = w.split(",")
        pairs += [f"space.mins={alo},{wlo}", f"space.maxs={ahi},{whi}"]
    if getattr(args, "counts", None) is not None:
        pairs.append(f"space.train_counts={args.counts}")
    for flag, key in (("nx", "fom.n_x"), ("dt", "fom.dt"), ("tmax", "fom.t_max")):
        v = getattr(args, flag, None)
        if v is not None:
            pairs.append(f"{key}={v}")
    return pairs


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        args.set = (args.set or []) + _flag_overrides(args)
        cfg = _load_config(args)
        if args.threads and args.threads > 0:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                return args.fn(cfg, args, args.seed)
        return args.fn(cfg, args, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
