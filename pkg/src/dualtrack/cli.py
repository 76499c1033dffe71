"""Command-line interface.

Subcommands::

    dualtrack generate    synthesize a labeled sweep dataset
    dualtrack train       run the staged schedule for one model variant
    dualtrack evaluate    metrics and figures for a trained model on a split
    dualtrack reconstruct predict one sweep's trajectory and export it
    dualtrack compound    scatter a sweep into a volume (true or predicted poses)
    dualtrack ablate      train and compare all model variants

Global flags (before the subcommand): ``--config`` for a YAML file,
``--seed`` to override the configured seed, ``--deterministic`` for
bit-reproducible single-thread runs, ``--out`` for the output location,
``--force`` to overwrite existing outputs.

Failures print one line, ``error: <category>: <detail>``, and exit 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import data, geometry, metrics, networks, phantom, plots, training, volume


class CliError(Exception):
    def __init__(self, category: str, detail: str):
        super().__init__(detail)
        self.category = category


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualtrack",
        description="Sensorless freehand 3D ultrasound trajectory estimation.",
    )
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--deterministic", action="store_true",
                        help="single-thread, bit-reproducible execution")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--force", action="store_true",
                        help="overwrite existing outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a dataset")
    p.set_defaults(func=cmd_generate, default_out="dataset")

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--variant", choices=networks.VARIANTS, default=None)
    p.set_defaults(func=cmd_train, default_out="run")

    p = sub.add_parser("evaluate", help="evaluate a trained model on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--run", help="training run directory or checkpoint file")
    p.add_argument("--split", default="test")
    p.add_argument("--zero-motion", action="store_true",
                   help="evaluate the stationary baseline instead of a model")
    p.set_defaults(func=cmd_evaluate, default_out="eval")

    p = sub.add_parser("reconstruct", help="predict one sweep trajectory")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--sweep", help="sweep id (default: first test sweep)")
    p.set_defaults(func=cmd_reconstruct, default_out="reconstruction")

    p = sub.add_parser("compound", help="compound a sweep into a volume")
    p.add_argument("--data", required=True)
    p.add_argument("--sweep", help="sweep id (default: first test sweep)")
    p.add_argument("--run", help="use this run's predictions instead of true poses")
    p.add_argument("--spacing", type=float, default=0.5, help="voxel size in mm")
    p.set_defaults(func=cmd_compound, default_out="volume")

    p = sub.add_parser("ablate", help="train and compare all variants")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_ablate, default_out="ablation")
    return parser


# -- shared helpers ----------------------------------------------------------


def _out_dir(args) -> Path:
    return Path(args.out) if args.out else Path(args.default_out)


def _refuse_existing(path: Path, force: bool, marker: str) -> None:
    if (path / marker).exists() and not force:
        raise CliError("output", f"{path} already holds results; pass --force to overwrite")


def _load_config(args, run_dir: Path | None = None) -> config_mod.AppConfig:
    if args.config:
        return config_mod.load_config(args.config)
    if run_dir is not None and (run_dir / "config.yaml").is_file():
        return config_mod.load_config(run_dir / "config.yaml")
    return config_mod.desk_config()


def _apply_seed(cfg: config_mod.AppConfig, seed) -> config_mod.AppConfig:
    if seed is None:
        return cfg
    return config_mod.AppConfig(
        dataset=dataclasses.replace(cfg.dataset, seed=seed),
        model=cfg.model,
        training=dataclasses.replace(cfg.training, seed=seed),
    )


def _open_dataset(path_str: str) -> data.SweepDataset:
    root = Path(path_str)
    if not (root / data.INDEX_NAME).is_file():
        raise CliError(
            "data", f"no dataset at {root} (missing {data.INDEX_NAME}); "
            "run the generate command first")
    return data.SweepDataset(root)


def _pick_sweep(dataset: data.SweepDataset, sweep_id) -> data.Sweep:
    if sweep_id is None:
        for split in ("test", "val", "train"):
            if split in dataset.splits and dataset.splits[split]:
                sweep_id = dataset.splits[split][0]
                break
    if sweep_id is None:
        raise CliError("data", "dataset has no sweeps")
    try:
        return dataset.load(sweep_id)
    except FileNotFoundError as exc:
        raise CliError("data", f"sweep {sweep_id!r} not found: {exc}") from exc


def _run_dir_of(args) -> Path:
    run = Path(args.run)
    if not run.exists():
        raise CliError("checkpoint",
                       f"no training run at {run}; run the train command first")
    return run


def _load_run_model(args, run: Path):
    cfg = _load_config(args, run_dir=run if run.is_dir() else run.parent)
    model = training.load_model_for_eval(run, cfg.model)
    return cfg, model


# -- subcommands -------------------------------------------------------------


def cmd_generate(args) -> int:
    out = _out_dir(args)
    _refuse_existing(out, args.force, data.INDEX_NAME)
    cfg = _apply_seed(_load_config(args), args.seed)

    def progress(done, total):
        if done % 25 == 0 or done == total:
            print(f"  {done}/{total} sweeps")

    index = phantom.generate_dataset(out, cfg.dataset, progress=progress)
    counts = {k: len(v) for k, v in index.items()}
    print(f"dataset written to {out} ({counts})")
    return 0


def cmd_train(args) -> int:
    cfg = _apply_seed(_load_config(args), args.seed)
    if args.variant:
        cfg = config_mod.AppConfig(
            dataset=cfg.dataset,
            model=dataclasses.replace(cfg.model, variant=args.variant),
            training=cfg.training)
    dataset = _open_dataset(args.data)
    out = _out_dir(args)
    resume = (out / training.CHECKPOINT_NAME).is_file() and not args.force
    if args.force:
        for name in (training.CHECKPOINT_NAME, training.BEST_NAME, training.LOG_NAME):
            (out / name).unlink(missing_ok=True)
    out.mkdir(parents=True, exist_ok=True)
    config_mod.save_config(cfg, out / "config.yaml")
    if args.deterministic:
        training.set_determinism(cfg.training.seed)
    else:
        import torch
        torch.manual_seed(cfg.training.seed)
    model = networks.build_model(cfg.model)
    trainer = training.Trainer(model, dataset, cfg.training, out,
                               deterministic=args.deterministic)
    if resume:
        print(f"resuming from {out / training.CHECKPOINT_NAME}")
    path = trainer.run(resume=resume)
    print(f"training complete: {path}")
    return 0


def cmd_evaluate(args) -> int:
    dataset = _open_dataset(args.data)
    out = _out_dir(args)
    _refuse_existing(out, args.force, "metrics.json")
    if args.zero_motion:
        cfg = _apply_seed(_load_config(args), args.seed)
        model = None
        label = "zero-motion"
    else:
        if not args.run:
            raise CliError("usage", "evaluate needs --run or --zero-motion")
        run = _run_dir_of(args)
        cfg, model = _load_run_model(args, run)
        label = cfg.model.variant
    try:
        sweeps = list(dataset.sweeps(args.split))
    except KeyError as exc:
        raise CliError("data", str(exc)) from exc
    if not sweeps:
        raise CliError("data", f"split {args.split!r} is empty")

    per_sweep = {}
    for sweep in sweeps:
        if model is None:
            pred = training.zero_motion_trajectory(sweep.num_frames)
        else:
            pred = training.predict_trajectory(model, sweep, cfg.training)
        h, w = sweep.frame_shape
        per_sweep[sweep.id] = metrics.evaluate_trajectories(
            sweep.poses, pred, sweep.cal, w, h)
    mean = {
        key: float(np.mean([getattr(r, key) for r in per_sweep.values()]))
        for key in ("gpe_mm", "lpe_um", "fdr_percent", "max_drift_mm")
    }
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "model": label,
        "split": args.split,
        "mean": mean,
        "per_sweep": {k: r.to_dict() for k, r in per_sweep.items()},
    }
    (out / "metrics.json").write_text(json.dumps(payload, indent=1))

    first = sweeps[0]
    pred = (training.zero_motion_trajectory(first.num_frames) if model is None
            else training.predict_trajectory(model, first, cfg.training))
    named = {label: pred}
    plots.plot_trajectories(first.poses, named, out / "trajectory.png")
    plots.plot_drift(first.poses, named, out / "drift.png")
    plots.plot_out_of_plane(first.poses, named, out / "out_of_plane.png")
    print(f"{label} on {args.split}: "
          + " ".join(f"{k}={v:.3f}" for k, v in mean.items()))
    print(f"report written to {out / 'metrics.json'}")
    return 0


def cmd_reconstruct(args) -> int:
    dataset = _open_dataset(args.data)
    out = _out_dir(args)
    _refuse_existing(out, args.force, "poses.csv")
    run = _run_dir_of(args)
    cfg, model = _load_run_model(args, run)
    sweep = _pick_sweep(dataset, args.sweep)
    pred = training.predict_trajectory(model, sweep, cfg.training)
    out.mkdir(parents=True, exist_ok=True)
    data.write_poses_csv(out / "poses.csv", pred)
    named = {cfg.model.variant: pred}
    plots.plot_trajectories(sweep.poses, named, out / "trajectory.png")
    plots.plot_out_of_plane(sweep.poses, named, out / "out_of_plane.png")
    h, w = sweep.frame_shape
    report = metrics.evaluate_trajectories(sweep.poses, pred, sweep.cal, w, h)
    (out / "metrics.json").write_text(report.to_json())
    print(f"sweep {sweep.id}: gpe={report.gpe_mm:.3f} mm, "
          f"drift_max={report.max_drift_mm:.3f} mm; outputs in {out}")
    return 0


def cmd_compound(args) -> int:
    dataset = _open_dataset(args.data)
    out = _out_dir(args)
    _refuse_existing(out, args.force, volume.VOLUME_META)
    sweep = _pick_sweep(dataset, args.sweep)
    if args.run:
        run = _run_dir_of(args)
        cfg, model = _load_run_model(args, run)
        poses = training.predict_trajectory(model, sweep, cfg.training)
        source = f"predicted by {cfg.model.variant}"
    else:
        poses = None
        source = "true poses"
    vol = volume.compound_sweep(sweep, poses=poses, voxel_spacing_mm=args.spacing)
    volume.save_volume(vol, out)
    plots.plot_volume_slices(vol.values, out / "slices.png",
                             title=f"{sweep.id} ({source})")
    print(f"volume {vol.values.shape} at {args.spacing} mm "
          f"({vol.fill_fraction:.1%} filled) written to {out}")
    return 0


def cmd_ablate(args) -> int:
    dataset = _open_dataset(args.data)
    out = _out_dir(args)
    _refuse_existing(out, args.force, "ablation.json")
    cfg = _apply_seed(_load_config(args), args.seed)
    model_cfgs = {v: dataclasses.replace(cfg.model, variant=v)
                  for v in networks.VARIANTS}
    results = training.run_ablation(dataset, out, cfg.training,
                                    model_cfgs=model_cfgs,
                                    deterministic=args.deterministic)
    plots.plot_metric_bars(results, "gpe_mm", out / "gpe.png")
    for variant, row in results.items():
        print(f"{variant}: " + " ".join(f"{k}={v:.3f}" for k, v in row.items()))
    print(f"summary written to {out / 'ablation.json'}")
    return 0


_ERROR_CATEGORIES = (
    (config_mod.ConfigError, "config"),
    (data.SweepFormatError, "data"),
    (volume.VolumeFormatError, "data"),
    (phantom.GenerationError, "generation"),
    (training.TrainingDiverged, "training"),
    (training.CheckpointError, "checkpoint"),
    (geometry.GimbalLockWarning, "geometry"),
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except tuple(t for t, _ in _ERROR_CATEGORIES) as exc:
        category = next(c for t, c in _ERROR_CATEGORIES if isinstance(exc, t))
        print(f"error: {category}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
