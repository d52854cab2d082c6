"""Adam training with dev-set model selection, evaluation, checkpoints, and
the structure/constraint/block/horizon ablation sweep.

Training cycles minibatches of N-step windows, evaluates open-loop MSE on
the dev split on a fixed cadence, and keeps the parameters of the best dev
evaluation seen (which may be the untrained model). Checkpoints serialize
each parameter tensor to its own CSV so runs are diffable and reload
bitwise.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import data as td
from . import eigen
from .autodiff import Tensor
from .constraints import LossBreakdown, LossWeights, PenaltyBounds, multi_term_loss
from .errors import ConfigError, DataError, NumericError
from .ssm import build_structured, build_unstructured

DEFAULT_HORIZONS = (8, 16, 32, 64)


@dataclass
class TrainConfig:
    learning_rate: float = 0.003
    steps: int = 5000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    horizon: int = 32
    seed: int = 0
    batch_windows: int = 8
    eval_every: int = 250
    structure: str = "structured"
    block_kind: str = "mlp"
    weight_kind: str = "pf"
    n_x: int = 80
    layers: int = 2
    width: int = 80
    activation: str = "gelu"
    lambda_min: float = 0.8
    lambda_max: float = 1.0
    smoothness_weight: float = 0.2
    output_slack_weight: float = 1.0
    input_slack_weight: float = 0.2
    disturbance_slack_weight: float = 0.2
    y_lower: float = -0.05
    y_upper: float = 1.05
    contrib_cap: float = 0.05

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.steps < 1:
            raise ConfigError("need at least one training step")
        if self.structure not in ("structured", "unstructured"):
            raise ConfigError(f"unknown structure {self.structure!r}")
        if self.horizon not in DEFAULT_HORIZONS:
            warnings.warn(f"horizon {self.horizon} is outside the default grid "
                          f"{DEFAULT_HORIZONS}; proceeding anyway")

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.smoothness_weight, self.output_slack_weight,
                           self.input_slack_weight, self.disturbance_slack_weight)

    def bounds(self, n_y: int) -> PenaltyBounds:
        return PenaltyBounds.default(n_y, self.n_x, self.y_lower, self.y_upper,
                                     self.contrib_cap)


def build_model(config: TrainConfig, n_y: int, n_u: int, n_d: int):
    kwargs = dict(n_y=n_y, n_u=n_u, n_d=n_d, horizon=config.horizon,
                  seed=config.seed, n_x=config.n_x, layers=config.layers,
                  width=config.width, block_kind=config.block_kind,
                  weight_kind=config.weight_kind, activation=config.activation,
                  lambda_min=config.lambda_min, lambda_max=config.lambda_max)
    if config.structure == "structured":
        return build_structured(**kwargs)
    return build_unstructured(**kwargs)


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: list[Tensor], grads: dict, state: AdamState,
              config: TrainConfig) -> None:
    """One bias-corrected Adam update, in place on the parameter values."""
    state.t += 1
    bc1 = 1.0 - config.beta1 ** state.t
    bc2 = 1.0 - config.beta2 ** state.t
    for p in params:
        g = grads[p]
        if np.isnan(g).any():
            raise NumericError(f"NaN gradient for parameter {p.name or '<unnamed>'}")
        if id(p) not in state.m:
            state.m[id(p)] = np.zeros(p.shape)
            state.v[id(p)] = np.zeros(p.shape)
        m, v = state.m[id(p)], state.v[id(p)]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        p.values -= config.learning_rate * (m / bc1) / (np.sqrt(v / bc2)
                                                        + config.epsilon)


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalResult:
    """Normalized per-element MSEs plus their per-output Kelvin RMSEs."""

    n_step_mse: float
    open_loop_mse: float
    n_step_kelvin: float
    open_loop_kelvin: float


def _per_channel_mse(pred: np.ndarray, ref: np.ndarray) -> np.ndarray:
    err = pred - ref
    if err.ndim == 3:  # [N, n_y, batch]
        return np.mean(err**2, axis=(0, 2))
    return np.mean(err**2, axis=0)


def open_loop_mse(model, split: td.TimeSeriesDataset) -> float:
    pred, ref = model.open_loop(split.y, split.u, split.d)
    return float(np.mean((pred - ref) ** 2))


def evaluate(model, split: td.TimeSeriesDataset,
             stats: td.NormalizationStats) -> EvalResult:
    """N-step (windowed, observer re-anchored) and open-loop (single free
    run) MSE on a normalized split, in normalized and Kelvin units."""
    n = model.horizon
    windows = td.make_windows(split, n, stride=n)
    past, u, d, ref = td.stack_windows(windows)
    with ad.no_grad():
        result = model.rollout(past, u, d)
    pred = np.stack([t.values for t in result.pred_y])  # [N, n_y, batch]
    nstep_channels = _per_channel_mse(pred, ref)

    ol_pred, ol_ref = model.open_loop(split.y, split.u, split.d)
    ol_channels = _per_channel_mse(ol_pred, ol_ref)

    _, nstep_K = td.denormalize_mse(nstep_channels, stats, "y")
    _, ol_K = td.denormalize_mse(ol_channels, stats, "y")
    return EvalResult(n_step_mse=float(np.mean(nstep_channels)),
                      open_loop_mse=float(np.mean(ol_channels)),
                      n_step_kelvin=nstep_K, open_loop_kelvin=ol_K)


# ---------------------------------------------------------------------------
# training

@dataclass
class LogRow:
    step: int
    breakdown: LossBreakdown
    dev_open_loop_mse: float | None = None
    pf_radius_max: float | None = None


@dataclass
class Checkpoint:
    """Best-on-dev parameter snapshot plus everything needed to rebuild."""

    model_config: dict
    param_values: dict[str, np.ndarray]
    stats: td.NormalizationStats | None
    dev_open_loop_mse: float
    best_step: int

    def build_model(self):
        cfg = TrainConfig(**{k: v for k, v in self.model_config.items()
                             if k not in ("n_y", "n_u", "n_d")})
        model = build_model(cfg, self.model_config["n_y"],
                            self.model_config["n_u"], self.model_config["n_d"])
        self.restore(model)
        return model

    def restore(self, model) -> None:
        for name, tensor in model.named_params():
            if name not in self.param_values:
                raise ConfigError(f"checkpoint missing parameter {name!r}")
            vals = self.param_values[name]
            if vals.shape != tensor.shape:
                raise ConfigError(f"checkpoint parameter {name!r} has shape "
                                  f"{vals.shape}, model expects {tensor.shape}")
            tensor.values = vals.copy()


def _snapshot(model) -> dict[str, np.ndarray]:
    return {name: t.values.copy() for name, t in model.named_params()}


def _pf_radius_check(model, config: TrainConfig) -> float | None:
    """Spot-check the eigenvalue bound on every pf-composed weight."""
    radii = []
    for label, matrix, bounds in model.dynamics_weights():
        if bounds is None:
            continue
        radius = eigen.eigenvalues(matrix, label=label).spectral_radius
        lo, hi = bounds
        if not (lo - 1e-8 <= radius <= hi + 1e-8):
            raise NumericError(f"eigenvalue bound violated during training: "
                               f"{label} has spectral radius {radius:.12f}")
        radii.append(radius)
    return max(radii) if radii else None


def train_model(model, train_split: td.TimeSeriesDataset,
                dev_split: td.TimeSeriesDataset, config: TrainConfig,
                stats: td.NormalizationStats | None = None,
                ) -> tuple[Checkpoint, list[LogRow]]:
    """Optimize the multi-term loss; return the best-on-dev checkpoint.

    Splits must already be normalized. Minibatches cycle the train windows
    in a seed-shuffled order, reshuffled each epoch; dev open-loop MSE is
    measured before training, every eval_every steps, and after the last
    step. The returned checkpoint holds the lowest dev MSE seen.
    """
    n_y, n_u, n_d = (train_split.y.shape[1], train_split.u.shape[1],
                     train_split.d.shape[1])
    windows = td.make_windows(train_split, config.horizon, stride=config.horizon)
    if not windows:
        raise DataError("train split yields no windows at this horizon")
    all_past, all_u, all_d, all_ref = td.stack_windows(windows)

    params = model.params()
    bounds = config.bounds(n_y)
    weights = config.loss_weights()
    adam = AdamState()
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(windows))
    cursor = 0

    log: list[LogRow] = []
    model_config = _model_config_dict(config, n_y, n_u, n_d)

    def dev_eval():
        mse = open_loop_mse(model, dev_split)
        radius = _pf_radius_check(model, config)
        return mse, radius

    best_mse, best_radius = dev_eval()
    best = Checkpoint(model_config=model_config, param_values=_snapshot(model),
                      stats=stats, dev_open_loop_mse=best_mse, best_step=0)
    log.append(LogRow(step=0, breakdown=LossBreakdown(0, 0, 0, 0, 0, 0),
                      dev_open_loop_mse=best_mse, pf_radius_max=best_radius))

    last_breakdown = None
    for step in range(1, config.steps + 1):
        take = min(config.batch_windows, len(windows))
        if cursor + take > len(windows):
            order = rng.permutation(len(windows))
            cursor = 0
        batch = order[cursor:cursor + take]
        cursor += take

        try:
            rollout = model.rollout(all_past[:, :, batch], all_u[:, :, batch],
                                    all_d[:, :, batch])
            total, breakdown = multi_term_loss(all_ref[:, :, batch], rollout,
                                               bounds, weights)
        except NumericError as exc:
            raise NumericError(f"aborted at training step {step}: {exc}; "
                               f"last loss breakdown: {last_breakdown}") from exc
        last_breakdown = breakdown
        grads = ad.backward(total, params)
        adam_step(params, grads, adam, config)

        row = LogRow(step=step, breakdown=breakdown)
        if step % config.eval_every == 0 or step == config.steps:
            mse, radius = dev_eval()
            row.dev_open_loop_mse = mse
            row.pf_radius_max = radius
            if mse < best.dev_open_loop_mse:
                best = Checkpoint(model_config=model_config,
                                  param_values=_snapshot(model), stats=stats,
                                  dev_open_loop_mse=mse, best_step=step)
        log.append(row)
    return best, log


def _model_config_dict(config: TrainConfig, n_y, n_u, n_d) -> dict:
    keep = ("horizon", "seed", "structure", "block_kind", "weight_kind", "n_x",
            "layers", "width", "activation", "lambda_min", "lambda_max")
    out = {k: getattr(config, k) for k in keep}
    out.update(n_y=n_y, n_u=n_u, n_d=n_d)
    return out


def prepare_splits(dataset: td.TimeSeriesDataset, horizon: int):
    """Chronological thirds, min-max scaled with train-split statistics."""
    raw_train, raw_dev, raw_test = td.split_even(dataset, horizon=horizon)
    train, stats = td.normalize(raw_train)
    dev, _ = td.normalize(raw_dev, stats)
    test, _ = td.normalize(raw_test, stats)
    return train, dev, test, stats


# ---------------------------------------------------------------------------
# checkpoint persistence

def save_checkpoint(ckpt: Checkpoint, directory) -> None:
    from pathlib import Path
    root = Path(directory)
    (root / "params").mkdir(parents=True, exist_ok=True)
    entries = []
    for name, values in ckpt.param_values.items():
        fname = f"params/{name}.csv"
        np.savetxt(root / fname, values, fmt="%.17g", delimiter=",")
        entries.append({"name": name, "file": fname, "shape": list(values.shape)})
    manifest = {
        "model_config": ckpt.model_config,
        "dev_open_loop_mse": ckpt.dev_open_loop_mse,
        "best_step": ckpt.best_step,
        "params": entries,
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    if ckpt.stats is not None:
        td.write_norm_stats(ckpt.stats, root / "norm.csv")


def load_checkpoint(directory) -> Checkpoint:
    from pathlib import Path
    root = Path(directory)
    with open(root / "manifest.json") as fh:
        manifest = json.load(fh)
    values = {}
    for entry in manifest["params"]:
        arr = np.loadtxt(root / entry["file"], delimiter=",", ndmin=2)
        values[entry["name"]] = arr.reshape(entry["shape"])
    stats = None
    if (root / "norm.csv").exists():
        stats = td.read_norm_stats(root / "norm.csv")
    return Checkpoint(model_config=manifest["model_config"], param_values=values,
                      stats=stats, dev_open_loop_mse=manifest["dev_open_loop_mse"],
                      best_step=manifest["best_step"])


# ---------------------------------------------------------------------------
# ablation sweep

@dataclass
class SweepGrid:
    structures: tuple = ("structured", "unstructured")
    constraints: tuple = (True, False)
    blocks: tuple = ("mlp", "rnn", "resnet")
    horizons: tuple = DEFAULT_HORIZONS
    seeds: tuple = (0,)

    def cells(self):
        for seed in self.seeds:
            for structure in self.structures:
                for constrained in self.constraints:
                    for block in self.blocks:
                        for horizon in self.horizons:
                            yield (structure, constrained, block, horizon, seed)


@dataclass
class SweepResult:
    structure: str
    constrained: bool
    weight_kind: str
    block_kind: str
    horizon: int
    seed: int
    train_n_step: float = np.nan
    train_open_loop: float = np.nan
    dev_n_step: float = np.nan
    dev_open_loop: float = np.nan
    test_n_step: float = np.nan
    test_open_loop: float = np.nan
    test_open_loop_kelvin: float = np.nan
    error: str = ""


def cell_config(base: TrainConfig, structure: str, constrained: bool,
                block: str, horizon: int, seed: int) -> TrainConfig:
    """Grid cell to training configuration.

    Constrained = eigenvalue-bounded weights on the dynamics block plus
    active inequality penalties; unconstrained = plain linear weights with
    the inequality penalty weights zeroed (the smoothness regularizer
    stays). A pf request on a non-square lumped mlp/resnet dynamics block
    falls back to linear weights at build time.
    """
    cfg = replace(base, structure=structure, block_kind=block, horizon=horizon,
                  seed=seed, weight_kind="pf" if constrained else "linear")
    if not constrained:
        cfg = replace(cfg, output_slack_weight=0.0, input_slack_weight=0.0,
                      disturbance_slack_weight=0.0)
    return cfg


def effective_weight_kind(cfg: TrainConfig) -> str:
    if (cfg.weight_kind == "pf" and cfg.structure == "unstructured"
            and cfg.block_kind in ("mlp", "resnet")):
        return "linear"
    return cfg.weight_kind


def run_cell(dataset: td.TimeSeriesDataset, cfg: TrainConfig) -> SweepResult:
    res = SweepResult(structure=cfg.structure, constrained=cfg.output_slack_weight > 0,
                      weight_kind=effective_weight_kind(cfg),
                      block_kind=cfg.block_kind, horizon=cfg.horizon, seed=cfg.seed)
    try:
        train, dev, test, stats = prepare_splits(dataset, cfg.horizon)
        model = build_model(cfg, train.y.shape[1], train.u.shape[1],
                            train.d.shape[1])
        ckpt, _ = train_model(model, train, dev, cfg, stats)
        ckpt.restore(model)
        for label, split in (("train", train), ("dev", dev), ("test", test)):
            ev = evaluate(model, split, stats)
            setattr(res, f"{label}_n_step", ev.n_step_mse)
            setattr(res, f"{label}_open_loop", ev.open_loop_mse)
            if label == "test":
                res.test_open_loop_kelvin = ev.open_loop_kelvin
    except Exception as exc:  # record, keep sweeping
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def _run_cell_args(args):
    dataset_arrays, sampling, cfg_dict = args
    ds = td.TimeSeriesDataset(*dataset_arrays, sampling)
    return run_cell(ds, TrainConfig(**cfg_dict))


def sweep(dataset: td.TimeSeriesDataset, grid: SweepGrid, base: TrainConfig,
          jobs: int = 1) -> list[SweepResult]:
    """Train and score every grid cell; failures are recorded, not raised."""
    configs = [cell_config(base, *cell) for cell in grid.cells()]
    if jobs <= 1:
        return [run_cell(dataset, cfg) for cfg in configs]
    from concurrent.futures import ProcessPoolExecutor
    payload = [((dataset.y, dataset.u, dataset.d), dataset.sampling_minutes,
                asdict(cfg)) for cfg in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell_args, payload))


def write_sweep_csv(results: list[SweepResult], path) -> None:
    import csv
    fields = ["structure", "constrained", "weight_kind", "block_kind", "horizon",
              "seed", "train_n_step", "train_open_loop", "dev_n_step",
              "dev_open_loop", "test_n_step", "test_open_loop",
              "test_open_loop_kelvin", "error"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for r in results:
            writer.writerow([getattr(r, f) for f in fields])


def write_training_log(log: list[LogRow], path) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "total", "mse", "smoothness", "slack_y",
                         "slack_u", "slack_d", "dev_open_loop_mse", "pf_radius_max"])
        for row in log:
            b = row.breakdown
            writer.writerow([row.step, f"{b.total:.10g}", f"{b.mse:.10g}",
                             f"{b.smoothness:.10g}", f"{b.slack_y:.10g}",
                             f"{b.slack_u:.10g}", f"{b.slack_d:.10g}",
                             "" if row.dev_open_loop_mse is None
                             else f"{row.dev_open_loop_mse:.10g}",
                             "" if row.pf_radius_max is None
                             else f"{row.pf_radius_max:.12g}"])
