"""Command-line front end binding all modules through a JSON experiment config.

Commands: density, train, sweep, evaluate, synth. Each command copies the
resolved config into its output directory so every artifact is reproducible
from that file plus the seed list.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import plots
from .config import ExperimentConfig
from .data import rare_mask, stratified_split
from .density import build_profile, profile_cache_key
from .evaluation import render_comparison
from .network import forward, load_checkpoint, save_checkpoint
from .synth import SyntheticSpec, descriptor_for, write_csv
from .trainer import RunResult, TrainingDiverged, evaluate_runs, sweep, train_cv, train_one

log = logging.getLogger("cisir.cli")


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha1(config.to_json().encode("utf-8")).hexdigest()[:12]


def _load_config(args) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.from_json(args.config)
    elif getattr(args, "preset", None):
        config = ExperimentConfig.preset(args.preset)
    else:
        raise SystemExit("either --config or --preset is required")
    seeds = None
    if getattr(args, "seed_list", None):
        seeds = [int(s) for s in args.seed_list.split(",") if s.strip()]
    return config.override(
        lam=getattr(args, "lambda_weight", None),
        alpha_e=getattr(args, "alpha_e", None),
        alpha_c=getattr(args, "alpha_c", None),
        sampler=getattr(args, "sampler", None),
        bandwidth=getattr(args, "bandwidth", None),
        output_dir=getattr(args, "out", None),
        seeds=seeds,
    )


def _prepare_out(config: ExperimentConfig) -> Path:
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "config.json", config.to_json())
    return out


def cmd_density(args) -> int:
    config = _load_config(args)
    out = _prepare_out(config)
    table = config.load_table()
    density_cfg = config.raw.get("density", {})
    profile = build_profile(
        table.targets,
        n_bins=density_cfg.get("n_bins", 100),
        epsilon=density_cfg.get("epsilon", 1e-3),
        h_override=density_cfg.get("bandwidth"),
    )
    mismatch = abs(math.log(profile.rho_density / profile.rho_freq))
    print(f"dataset: {config.descriptor().name}  n={table.n} d={table.dim}")
    print(f"rho (frequency imbalance): {profile.rho_freq:.6g}")
    print(f"bandwidth h: {profile.bandwidth:.6g}")
    print(f"rho_d (density imbalance): {profile.rho_density:.6g}")
    print(f"|log(rho_d / rho)|: {mismatch:.4f}")
    key = profile_cache_key(table.targets, profile.bandwidth, profile.epsilon)
    _atomic_write(out / f"profile-{key}.json", profile.to_json())
    plots.density_plot(table.targets, profile, out / "density.svg")
    print(f"wrote {out / 'density.svg'} and profile cache {key}")
    return 0


def _train_task(payload):
    table, fold, config, seed, fold_i, n_rare = payload
    try:
        state, history = train_one(table, fold, config, seed, n_rare=n_rare)
        return RunResult(fold=fold_i, seed=seed, state=state, history=history)
    except TrainingDiverged as exc:
        return RunResult(fold=fold_i, seed=seed, state=None, history=None, error=str(exc))


def _run_training(table, plan, train_config, descriptor, jobs: int) -> list[RunResult]:
    if jobs <= 1:
        return train_cv(table, plan, train_config, descriptor)
    tasks = []
    for fold_i, fold in enumerate(plan.folds):
        n_rare = int(rare_mask(table.targets[fold[0]], descriptor).sum())
        for seed in train_config.seeds:
            tasks.append((table, fold, train_config, seed, fold_i, n_rare))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(_train_task, tasks))
    return sorted(results, key=lambda r: (r.fold, r.seed))


def _history_record(history) -> dict:
    return {
        "train_total": history.train_total,
        "train_wmse": history.train_wmse,
        "train_wpcc": history.train_wpcc,
        "val_loss": history.val_loss,
        "learning_rate": history.learning_rate,
        "best_epoch": history.best_epoch,
        "best_val_loss": history.best_val_loss,
        "stopped_epoch": history.stopped_epoch,
    }


def cmd_train(args) -> int:
    config = _load_config(args)
    train_config = config.train_config(paper_scale=args.paper_scale)
    descriptor = config.descriptor()
    table = config.load_table()
    plan = stratified_split(table, config.test_fraction, config.k_folds, config.split_seed)

    if args.dry_run:
        print(f"dataset: {descriptor.name}  n={table.n} d={table.dim}")
        print(f"split: test={len(plan.test_indices)} train={len(plan.train_indices)} "
              f"folds={len(plan.folds)}")
        print(f"runs planned: {len(plan.folds)} folds x {len(train_config.seeds)} seeds")
        print(json.dumps({k: str(v) for k, v in asdict(train_config).items()}, indent=2))
        return 0

    out = _prepare_out(config)
    results = _run_training(table, plan, train_config, descriptor, args.jobs)
    failures = [r for r in results if not r.ok]
    config_hash = _config_hash(config)

    records = []
    test_idx = plan.test_indices
    y_test = table.targets[test_idx]
    rare_test = rare_mask(y_test, descriptor)
    for run in results:
        record = {"config_hash": config_hash, "fold": run.fold, "seed": run.seed}
        if run.ok:
            ckpt = out / f"model-f{run.fold}-s{run.seed}.npz"
            save_checkpoint(run.state, ckpt)
            pred, _ = forward(run.state, table.features[test_idx], train_mode=False)
            plots.prediction_scatter(
                y_test, pred, rare_test,
                out / f"scatter-f{run.fold}-s{run.seed}.svg",
                title=f"fold {run.fold} seed {run.seed}",
            )
            record.update({
                "checkpoint": str(ckpt),
                "history": _history_record(run.history),
            })
        else:
            record["error"] = run.error
        records.append(record)
    _atomic_write(out / "run_records.json", json.dumps(records, indent=2))

    aggregated, per_run = evaluate_runs(table, plan, descriptor, results)
    text = render_comparison(
        {descriptor.name: aggregated},
        csv_path=out / "metrics.csv",
        txt_path=out / "metrics.txt",
    )
    print(text)
    if failures:
        print(f"{len(failures)} run(s) diverged; see run_records.json", file=sys.stderr)
        return 1
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args)
    train_config = config.train_config(paper_scale=args.paper_scale)
    descriptor = config.descriptor()
    table = config.load_table()
    plan = stratified_split(table, config.test_fraction, config.k_folds, config.split_seed)
    out = _prepare_out(config)

    alpha_e_grid = [float(x) for x in args.alpha_e_grid.split(",")]
    lambda_grid = [float(x) for x in args.lambda_grid.split(",")]
    alpha_c_grid = (
        [float(x) for x in args.alpha_c_grid.split(",")] if args.alpha_c_grid else None
    )
    fold_indices = [0] if args.single_fold else None
    report = sweep(table, plan, descriptor, train_config, alpha_e_grid, lambda_grid,
                   alpha_c_grid, fold_indices=fold_indices)

    rows = list(report.rows())
    header = list(rows[0].keys())
    lines = [",".join(header)]
    lines += [",".join("" if row[k] is None else repr(row[k]) if isinstance(row[k], float)
                       else str(row[k]) for k in header) for row in rows]
    _atomic_write(out / "sweep_cells.csv", "\n".join(lines) + "\n")

    for stage, xname, fname in (("alpha_e", "alpha_e", "sensitivity_alpha_e.svg"),
                                ("lambda", "lambda", "sensitivity_lambda.svg")):
        cells = [c for c in report.cells if c.stage == stage]
        if not cells:
            continue
        xs = [getattr(c, "alpha_e" if stage == "alpha_e" else "lam") for c in cells]
        plots.sensitivity_curves(
            xs,
            [c.report.aore for c in cells],
            [c.report.se.get("aore", 0.0) for c in cells],
            [c.report.aorc for c in cells],
            [c.report.se.get("aorc", 0.0) for c in cells],
            xname,
            out / fname,
        )
    print(f"best alpha_e={report.best_alpha_e:g} lambda={report.best_lam:g} "
          f"alpha_c={report.best_alpha_c:g}")
    print(f"wrote {out / 'sweep_cells.csv'} and sensitivity curves")
    return 0


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    descriptor = config.descriptor()
    table = config.load_table()
    plan = stratified_split(table, config.test_fraction, config.k_folds, config.split_seed)
    out = _prepare_out(config)
    state = load_checkpoint(args.checkpoint)
    test_idx = plan.test_indices
    y = table.targets[test_idx]
    pred, _ = forward(state, table.features[test_idx], train_mode=False)
    from .evaluation import evaluate as eval_metrics

    report = eval_metrics(y, pred, rare_mask(y, descriptor))
    text = render_comparison({Path(args.checkpoint).stem: report},
                             csv_path=out / "evaluate.csv", txt_path=out / "evaluate.txt")
    print(text)
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n=args.n,
        n_features=args.features,
        rare_fraction=args.rare_fraction,
        common_scale=args.common_scale,
        rare_center=args.rare_center,
        rare_scale=args.rare_scale,
        tail_shape=args.tail_shape,
        feature_noise=args.feature_noise,
        label_noise=args.label_noise,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table = write_csv(spec, args.seed, out)
    descriptor = descriptor_for(spec)
    rare = rare_mask(table, descriptor)
    from .density import frequency_imbalance_ratio

    rho = frequency_imbalance_ratio(table.targets)
    print(f"wrote {out}: n={table.n} d={table.dim} rho={rho:.6g} "
          f"rare={int(rare.sum())} ({rare.mean():.4%})")
    if args.config_out:
        preset = ExperimentConfig.preset("desk_synthetic")
        raw = preset.raw
        raw["dataset"] = {
            "name": "synthetic",
            "target_column": "target",
            "target_transform": "identity",
            "upper_threshold": descriptor.upper_threshold,
            "rare_bins": [3],
            "csv_path": str(out),
        }
        Path(args.config_out).parent.mkdir(parents=True, exist_ok=True)
        _atomic_write(Path(args.config_out), ExperimentConfig(raw).to_json())
        print(f"wrote config {args.config_out}")
    return 0


def _add_common(sub, with_train_flags=True):
    sub.add_argument("--config", help="experiment config JSON path")
    sub.add_argument("--preset", help="built-in preset name (e.g. desk_synthetic)")
    sub.add_argument("--out", help="output directory override")
    if with_train_flags:
        sub.add_argument("--seed-list", help="comma-separated seeds override")
        sub.add_argument("--jobs", type=int, default=1, help="parallel (fold, seed) runs")
        sub.add_argument("--paper-scale", action="store_true",
                         help="use the full preset architecture/hyperparameters")
        sub.add_argument("--sampler", choices=["ssb", "uniform"])
        sub.add_argument("--lambda", dest="lambda_weight", type=float,
                         help="correlation-regularizer weight")
        sub.add_argument("--alpha-e", type=float, help="wmse importance alpha")
        sub.add_argument("--alpha-c", type=float, help="wpcc importance alpha")
    sub.add_argument("--bandwidth", type=float, help="KDE bandwidth override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cisir",
        description="Imbalanced tabular regression: density-matched importance "
                    "weighting, correlation regularization, stratified mini-batches.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p_density = commands.add_parser("density", help="density diagnostics + bandwidth solve")
    _add_common(p_density, with_train_flags=False)
    p_density.set_defaults(func=cmd_density)

    p_train = commands.add_parser("train", help="cross-validated training runs")
    _add_common(p_train)
    p_train.add_argument("--dry-run", action="store_true",
                         help="validate the config and print the resolved plan")
    p_train.set_defaults(func=cmd_train)

    p_sweep = commands.add_parser("sweep", help="staged hyperparameter sweep")
    _add_common(p_sweep)
    p_sweep.add_argument("--alpha-e-grid", default="0.01,0.2,1.1,2.4")
    p_sweep.add_argument("--lambda-grid", default="0.1,0.25,0.5,0.75,1.0")
    p_sweep.add_argument("--alpha-c-grid", default=None)
    p_sweep.add_argument("--single-fold", action="store_true",
                         help="sweep on fold 0 only (faster)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_eval = commands.add_parser("evaluate", help="evaluate a saved checkpoint")
    _add_common(p_eval, with_train_flags=False)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=cmd_evaluate)

    p_synth = commands.add_parser("synth", help="generate a synthetic imbalanced CSV")
    p_synth.add_argument("--out", required=True, help="CSV output path")
    p_synth.add_argument("--n", type=int, default=10_000)
    p_synth.add_argument("--features", type=int, default=8)
    p_synth.add_argument("--rare-fraction", type=float, default=0.007)
    p_synth.add_argument("--common-scale", type=float, default=0.25)
    p_synth.add_argument("--rare-center", type=float, default=4.5)
    p_synth.add_argument("--rare-scale", type=float, default=0.8)
    p_synth.add_argument("--tail-shape", type=float, default=1.0)
    p_synth.add_argument("--feature-noise", type=float, default=0.35)
    p_synth.add_argument("--label-noise", type=float, default=0.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--config-out", help="also write a ready-to-run config JSON")
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
