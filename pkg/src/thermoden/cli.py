"""Command-line pipeline: data generation, training, evaluation, spectral
analysis, and the ablation sweep.

Every command writes CSV outputs plus rendered figures, and finishes by
atomically writing a ``manifest.json`` capturing the fully resolved
configuration, seed, paths, and wall-clock duration, so any run can be
reproduced from its manifest alone.

Exit codes: 0 success, 1 I/O failure, 2 usage/configuration error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import data as td
from . import eigen as eg
from . import emulator as em
from . import report
from . import trainer as tr
from .errors import ConfigError, DataError, NumericError, ThermodenError

SEED_ENV = "THERMODEN_SEED"


def _resolve_seed(flag_value) -> int:
    if flag_value is not None:
        return int(flag_value)
    return int(os.environ.get(SEED_ENV, "0"))


def _write_manifest(directory: Path, payload: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    tmp = directory / ".manifest.json.tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, default=str)
    os.replace(tmp, directory / "manifest.json")


def _manifest(command: str, config: dict, seed: int, inputs, outputs,
              started: float) -> dict:
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "toolkit_version": __version__,
        "duration_seconds": round(time.perf_counter() - started, 3),
    }


def _load_dataset(path_arg: str) -> tuple[td.TimeSeriesDataset, str]:
    path = Path(path_arg)
    csv_path = path / "dataset.csv" if path.is_dir() else path
    if not csv_path.exists():
        raise DataError(f"dataset not found: {csv_path}")
    return td.read_csv(csv_path), str(csv_path)


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    started = time.perf_counter()
    seed = _resolve_seed(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = em.build_rc_network(args.zones, seed=seed)
    excitation = em.ExcitationConfig(days=args.days, seed=seed,
                                     noise_std=args.ambient_noise,
                                     switch_period_steps=args.switch_period)
    ds = em.generate_dataset(params, excitation)
    td.write_csv(ds, out / "dataset.csv")
    em.write_params_csv(params, out / "params.csv")
    cfg = {"zones": args.zones, "days": args.days,
           "ambient_noise": args.ambient_noise,
           "switch_period": args.switch_period,
           "spectral_radius": params.spectral_radius}
    _write_manifest(out, _manifest("gen-data", cfg, seed, [],
                                   ["dataset.csv", "params.csv"], started))
    print(f"wrote {len(ds)} rows ({args.days} days x 96 steps) to {out / 'dataset.csv'}")
    print(f"building spectral radius: {params.spectral_radius:.4f}")
    return 0


def _train_config_from(args) -> tr.TrainConfig:
    """Defaults, then JSON config file, then explicit CLI flags."""
    values = {}
    if args.config:
        with open(args.config) as fh:
            values.update(json.load(fh))
    flag_map = {
        "structure": args.structure, "weight_kind": args.weights,
        "block_kind": args.block, "horizon": args.horizon, "steps": args.steps,
        "learning_rate": args.lr, "n_x": args.nx, "layers": args.layers,
        "width": args.width, "eval_every": args.eval_every,
        "batch_windows": args.batch_windows,
    }
    for key, val in flag_map.items():
        if val is not None:
            values[key] = val
    values["seed"] = _resolve_seed(args.seed if args.seed is not None
                                   else values.get("seed"))
    known = {f.name for f in fields(tr.TrainConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return tr.TrainConfig(**values)


def cmd_train(args) -> int:
    started = time.perf_counter()
    cfg = _train_config_from(args)
    ds, data_path = _load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    train, dev, test, stats = tr.prepare_splits(ds, cfg.horizon)
    model = tr.build_model(cfg, train.y.shape[1], train.u.shape[1],
                           train.d.shape[1])
    ckpt, log = tr.train_model(model, train, dev, cfg, stats)
    ckpt.restore(model)

    tr.save_checkpoint(ckpt, out / "checkpoint")
    tr.write_training_log(log, out / "training_log.csv")
    report.save_training_curves(log, out / "training_curves.png")
    pred, ref = model.open_loop(test.y, test.u, test.d)
    from .ssm import write_rollout_csv
    write_rollout_csv(out / "open_loop_test.csv", pred, ref)
    report.save_open_loop_figure(pred, ref, out / "open_loop_test.png",
                                 title="open-loop simulation (test split)")

    dev_ev = tr.evaluate(model, dev, stats)
    test_ev = tr.evaluate(model, test, stats)
    _write_manifest(out, _manifest("train", asdict(cfg), cfg.seed, [data_path],
                                   ["checkpoint", "training_log.csv",
                                    "training_curves.png", "open_loop_test.csv",
                                    "open_loop_test.png"], started))
    print(f"best checkpoint: step {ckpt.best_step}, "
          f"dev open-loop MSE {ckpt.dev_open_loop_mse:.6f}")
    print(f"dev : open-loop {dev_ev.open_loop_mse:.6f} ({dev_ev.open_loop_kelvin:.3f} K), "
          f"{cfg.horizon}-step {dev_ev.n_step_mse:.6f} ({dev_ev.n_step_kelvin:.3f} K)")
    print(f"test: open-loop {test_ev.open_loop_mse:.6f} ({test_ev.open_loop_kelvin:.3f} K), "
          f"{cfg.horizon}-step {test_ev.n_step_mse:.6f} ({test_ev.n_step_kelvin:.3f} K)")
    return 0


def _load_model(ckpt_dir: str):
    ckpt = tr.load_checkpoint(Path(ckpt_dir) / "checkpoint"
                              if (Path(ckpt_dir) / "checkpoint").is_dir()
                              else ckpt_dir)
    return ckpt, ckpt.build_model()


def cmd_eval(args) -> int:
    started = time.perf_counter()
    ckpt, model = _load_model(args.ckpt)
    if ckpt.stats is None:
        raise DataError("checkpoint carries no normalization statistics")
    ds, data_path = _load_dataset(args.data)
    splits = dict(zip(("train", "dev", "test"),
                      td.split_even(ds, horizon=model.horizon)))
    split, _ = td.normalize(splits[args.split], ckpt.stats)
    ev = tr.evaluate(model, split, ckpt.stats)
    out = Path(args.out) if args.out else Path(args.ckpt)
    out.mkdir(parents=True, exist_ok=True)
    pred, ref = model.open_loop(split.y, split.u, split.d)
    from .ssm import write_rollout_csv
    write_rollout_csv(out / f"open_loop_{args.split}.csv", pred, ref)
    report.save_open_loop_figure(pred, ref, out / f"open_loop_{args.split}.png",
                                 title=f"open-loop simulation ({args.split} split)")
    _write_manifest(out, _manifest("eval", {"split": args.split}, ckpt.model_config["seed"],
                                   [args.ckpt, data_path],
                                   [f"open_loop_{args.split}.csv",
                                    f"open_loop_{args.split}.png"], started))
    print(f"{args.split}: open-loop MSE {ev.open_loop_mse:.6f} normalized, "
          f"{ev.open_loop_kelvin:.3f} K per output")
    print(f"{args.split}: {model.horizon}-step MSE {ev.n_step_mse:.6f} normalized, "
          f"{ev.n_step_kelvin:.3f} K per output")
    return 0


def cmd_eigen(args) -> int:
    started = time.perf_counter()
    ckpt, model = _load_model(args.ckpt)
    rep = eg.analyze_model(model)
    out = Path(args.out) if args.out else Path(args.ckpt)
    out.mkdir(parents=True, exist_ok=True)
    label = ckpt.model_config.get("weight_kind", "model")
    eg.write_spectrum_csv(rep, out / f"eigen_{label}.csv")
    report.save_eigen_figure(rep, out / f"eigen_{label}.png")
    for spec in rep.spectra:
        print(f"{spec.source_label}: spectral radius {spec.spectral_radius:.6f}, "
              f"{rep.dominant_counts[spec.source_label]} dominant mode(s) "
              f"above {rep.dominant_threshold}")
    if rep.lambda_min is not None:
        if rep.bounds_satisfied:
            print(f"bound satisfied: [{rep.lambda_min}, {rep.lambda_max}]")
        else:
            print("bound VIOLATED:", "; ".join(rep.bound_violations))
    elif not rep.spectra:
        print("no square dynamics weights found")
    _write_manifest(out, _manifest("eigen", {"dominant_threshold": rep.dominant_threshold},
                                   ckpt.model_config["seed"], [args.ckpt],
                                   [f"eigen_{label}.csv", f"eigen_{label}.png"], started))
    return 0


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    ds, data_path = _load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed0 = _resolve_seed(args.seed)
    grid = tr.SweepGrid(
        horizons=tuple(int(h) for h in args.horizons.split(",")),
        blocks=tuple(args.blocks.split(",")),
        seeds=tuple(range(seed0, seed0 + args.seeds)),
    )
    base = tr.TrainConfig()
    if args.steps is not None:
        base = replace(base, steps=args.steps)
    results = tr.sweep(ds, grid, base, jobs=args.jobs)
    tr.write_sweep_csv(results, out / "sweep_results.csv")
    report.save_sweep_figure(results, out / "sweep_open_loop.png",
                             metric="test_open_loop")
    report.save_sweep_figure(results, out / "sweep_n_step.png",
                             metric="test_n_step")
    failures = [r for r in results if r.error]
    cfg = {"horizons": args.horizons, "blocks": args.blocks, "seeds": args.seeds,
           "steps": base.steps, "jobs": args.jobs}
    _write_manifest(out, _manifest("sweep", cfg, seed0, [data_path],
                                   ["sweep_results.csv", "sweep_open_loop.png",
                                    "sweep_n_step.png"], started))
    print(f"{len(results)} cells swept, {len(failures)} failed; "
          f"results in {out / 'sweep_results.csv'}")
    for r in failures:
        print(f"  FAILED {r.structure}/{r.block_kind}/N={r.horizon}/seed{r.seed}: {r.error}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermoden",
        description="Physics-constrained neural state-space models of "
                    "multi-zone building thermal dynamics.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic building dataset")
    g.add_argument("--zones", type=int, default=20)
    g.add_argument("--days", type=int, default=30)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True)
    g.add_argument("--ambient-noise", type=float, default=0.0,
                   help="std-dev (K) of noise on the ambient signal")
    g.add_argument("--switch-period", type=int, default=12,
                   help="steps each excitation level is held")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="JSON file with TrainConfig keys; flags override")
    t.add_argument("--structure", choices=("structured", "unstructured"))
    t.add_argument("--weights", choices=("linear", "pf"))
    t.add_argument("--block", choices=("mlp", "rnn", "resnet"))
    t.add_argument("--horizon", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--nx", type=int)
    t.add_argument("--layers", type=int)
    t.add_argument("--width", type=int)
    t.add_argument("--eval-every", type=int)
    t.add_argument("--batch-windows", type=int)
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a data split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "dev", "test"), default="test")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    v = sub.add_parser("eigen", help="eigenvalue analysis of a checkpoint")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--out")
    v.set_defaults(fn=cmd_eigen)

    s = sub.add_parser("sweep", help="structure/constraint/block/horizon ablation")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seeds", type=int, default=1, help="number of seeds")
    s.add_argument("--seed", type=int, default=None, help="first seed")
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--horizons", default="8,16,32,64")
    s.add_argument("--blocks", default="mlp,rnn,resnet")
    s.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ThermodenError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
