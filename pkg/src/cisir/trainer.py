"""Training orchestration: density -> importances -> stratified batches -> epochs.

A run estimates KDE densities on its training targets, derives the wmse/wpcc
importances, builds the stratified group plan, then iterates epochs of
mini-batch updates with early stopping on validation loss and a plateau
learning-rate decay. Cross-validation runs every (fold, seed) combination
independently; the staged sweep tunes alpha_e, then lambda, then optionally
alpha_c.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import DatasetDescriptor, DatasetTable, SplitPlan, rare_mask
from .density import DensityProfile, build_profile
from .evaluation import EvalReport, aggregate_fold_seed, evaluate
from .importance import ImportanceSpec, compute_importances
from .loss import batch_loss_and_gradient, combined_loss, LossConfig, wmse
from .network import (
    ArchitectureConfig,
    ModelState,
    OptimizerConfig,
    adam_step,
    backward,
    forward,
    init_model,
    restore,
    snapshot,
)
from .rng import keyed_rng
from .sampler import GroupPlan, build_groups, epoch_batches, uniform_epoch_batches

log = logging.getLogger("cisir.trainer")

_STEP_TAG = 0x545254


class TrainingDiverged(RuntimeError):
    """Loss became non-finite or blew past the divergence guard."""


@dataclass(frozen=True)
class TrainConfig:
    arch: ArchitectureConfig
    opt: OptimizerConfig
    lam: float = 0.5
    importance_e: ImportanceSpec = ImportanceSpec("mdi", 0.2)
    importance_c: ImportanceSpec = ImportanceSpec("constant", 1.0)
    sampler: str = "ssb"  # or "uniform"
    batch_size: int = 64
    max_epochs: int = 300
    early_stop_patience: int = 200
    lr_decay_factor: float = 0.95
    lr_plateau_epochs: int = 50
    sd_epsilon: float = 1e-8
    weighted_means: bool = True
    val_metric: str = "combined"  # or "wmse"
    density_bins: int = 100
    density_epsilon: float = 1e-3
    bandwidth: float | None = None
    improvement_tol: float = 1e-5
    divergence_factor: float = 1e6
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if not 0 < self.lr_decay_factor < 1:
            raise ValueError("lr_decay_factor must be in (0, 1)")
        if self.sampler not in ("ssb", "uniform"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.val_metric not in ("combined", "wmse"):
            raise ValueError(f"unknown val_metric {self.val_metric!r}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))


@dataclass
class TrainHistory:
    train_total: list[float] = field(default_factory=list)
    train_wmse: list[float] = field(default_factory=list)
    train_wpcc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    stopped_epoch: int = -1


@dataclass
class RunResult:
    fold: int
    seed: int
    state: ModelState | None
    history: TrainHistory | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class RunSetup:
    profile: DensityProfile
    re: np.ndarray
    rc: np.ndarray
    plan: GroupPlan | None


def prepare_run(train_targets: np.ndarray, config: TrainConfig, n_rare: int | None = None) -> RunSetup:
    """Density profile, normalized importances and (for SSB) the group plan."""
    profile = build_profile(
        train_targets,
        n_bins=config.density_bins,
        epsilon=config.density_epsilon,
        h_override=config.bandwidth,
    )
    re = compute_importances(profile, config.importance_e).values
    rc = compute_importances(profile, config.importance_c).values
    plan = None
    if config.sampler == "ssb":
        plan = build_groups(train_targets, config.batch_size, n_rare=n_rare)
    return RunSetup(profile=profile, re=re, rc=rc, plan=plan)


def _nearest_importances(train_targets, val_targets, values) -> np.ndarray:
    """Training-derived importances for validation points via nearest-target lookup."""
    order = np.argsort(train_targets, kind="stable")
    sorted_targets = train_targets[order]
    pos = np.searchsorted(sorted_targets, val_targets)
    pos = np.clip(pos, 1, len(sorted_targets) - 1)
    left, right = pos - 1, pos
    use_left = np.abs(val_targets - sorted_targets[left]) <= np.abs(
        sorted_targets[right] - val_targets
    )
    nearest = np.where(use_left, left, right)
    mapped = values[order][nearest]
    return mapped / mapped.sum()


def train_one(
    table: DatasetTable,
    fold: tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
    seed: int,
    n_rare: int | None = None,
) -> tuple[ModelState, TrainHistory]:
    """One training run on a (train, validation) index pair.

    Restores the parameters of the best validation epoch before returning.
    Raises TrainingDiverged when the loss turns non-finite or exceeds
    divergence_factor times its initial value.
    """
    tr_idx, val_idx = np.asarray(fold[0]), np.asarray(fold[1])
    X_tr, y_tr = table.features[tr_idx], table.targets[tr_idx]
    X_val, y_val = table.features[val_idx], table.targets[val_idx]
    n_tr = len(tr_idx)

    if config.batch_size > n_tr:
        config = replace(config, batch_size=n_tr)
    setup = prepare_run(y_tr, config, n_rare=n_rare)
    re_val = _nearest_importances(y_tr, y_val, setup.re)
    rc_val = _nearest_importances(y_tr, y_val, setup.rc)
    val_config = LossConfig(
        lam=config.lam, re=re_val, rc=rc_val,
        sd_epsilon=config.sd_epsilon, weighted_means=config.weighted_means,
    )

    model = init_model(config.arch, table.dim, seed)
    history = TrainHistory()
    lr = config.opt.learning_rate
    best_snapshot = snapshot(model)
    patience_counter = 0
    plateau_counter = 0
    initial_loss: float | None = None

    for epoch in range(config.max_epochs):
        if config.sampler == "ssb":
            batches = epoch_batches(setup.plan, seed, epoch)
        else:
            batches = uniform_epoch_batches(n_tr, config.batch_size, seed, epoch)

        epoch_opt = replace(config.opt, learning_rate=lr)
        epoch_total = epoch_wmse = epoch_wpcc = 0.0
        for step, batch in enumerate(batches):
            step_seed = 0
            if config.arch.dropout_rate > 0:
                step_seed = int(keyed_rng(_STEP_TAG, seed, epoch, step).integers(2 ** 62))
            yhat, cache = forward(model, X_tr[batch], train_mode=True, dropout_seed=step_seed)
            breakdown, grad = batch_loss_and_gradient(
                y_tr[batch], yhat, setup.re[batch], setup.rc[batch],
                lam=config.lam if len(batch) >= 2 else 0.0,  # wpcc undefined on 1 point
                n_total=n_tr,
                sd_epsilon=config.sd_epsilon, weighted_means=config.weighted_means,
            )
            if initial_loss is None:
                initial_loss = max(abs(breakdown.total), 1.0)
            if not math.isfinite(breakdown.total) or (
                abs(breakdown.total) > config.divergence_factor * initial_loss
            ):
                raise TrainingDiverged(
                    f"seed {seed}: loss {breakdown.total!r} at epoch {epoch} step {step} "
                    f"(initial {initial_loss:.4g})"
                )
            grads = backward(model, cache, grad)
            adam_step(model, grads, epoch_opt)
            weight = len(batch) / n_tr
            epoch_total += weight * breakdown.total
            epoch_wmse += weight * breakdown.wmse
            epoch_wpcc += weight * breakdown.wpcc_loss

        val_pred, _ = forward(model, X_val, train_mode=False)
        if config.val_metric == "wmse":
            val_loss = wmse(y_val, val_pred, re_val)
        else:
            val_loss = combined_loss(y_val, val_pred, val_config).total
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"seed {seed}: non-finite validation loss at epoch {epoch}")

        history.train_total.append(epoch_total)
        history.train_wmse.append(epoch_wmse)
        history.train_wpcc.append(epoch_wpcc)
        history.val_loss.append(float(val_loss))
        history.learning_rate.append(lr)

        if val_loss < history.best_val_loss * (1.0 - config.improvement_tol) or (
            history.best_epoch < 0
        ):
            history.best_val_loss = float(val_loss)
            history.best_epoch = epoch
            best_snapshot = snapshot(model)
            patience_counter = 0
            plateau_counter = 0
        else:
            patience_counter += 1
            plateau_counter += 1
            if plateau_counter >= config.lr_plateau_epochs:
                lr *= config.lr_decay_factor
                plateau_counter = 0
            if patience_counter >= config.early_stop_patience:
                history.stopped_epoch = epoch
                break
    if history.stopped_epoch < 0:
        history.stopped_epoch = len(history.val_loss) - 1

    restore(model, best_snapshot)
    return model, history


def train_cv(
    table: DatasetTable,
    plan: SplitPlan,
    config: TrainConfig,
    descriptor: DatasetDescriptor | None = None,
    fold_indices: list[int] | None = None,
) -> list[RunResult]:
    """Every (fold, seed) combination as an independent run; failures are isolated."""
    folds = list(range(len(plan.folds))) if fold_indices is None else list(fold_indices)
    results = []
    for fold_i in folds:
        fold = plan.folds[fold_i]
        n_rare = None
        if descriptor is not None:
            n_rare = int(rare_mask(table.targets[fold[0]], descriptor).sum())
        for seed in config.seeds:
            try:
                state, history = train_one(table, fold, config, seed, n_rare=n_rare)
                results.append(RunResult(fold=fold_i, seed=seed, state=state, history=history))
            except TrainingDiverged as exc:
                log.warning("run (fold=%d, seed=%d) diverged: %s", fold_i, seed, exc)
                results.append(RunResult(fold=fold_i, seed=seed, state=None,
                                         history=None, error=str(exc)))
    return results


def evaluate_runs(
    table: DatasetTable,
    plan: SplitPlan,
    descriptor: DatasetDescriptor,
    results: list[RunResult],
    indices: np.ndarray | None = None,
) -> tuple[EvalReport, dict[tuple[int, int], EvalReport]]:
    """Evaluate each run's best model on ``indices`` (default: the test split),
    then aggregate fold-level metrics per seed and seed-level means overall."""
    eval_idx = plan.test_indices if indices is None else np.asarray(indices)
    X, y = table.features[eval_idx], table.targets[eval_idx]
    rare = rare_mask(y, descriptor)
    by_run: dict[tuple[int, int], EvalReport] = {}
    for run in results:
        if not run.ok:
            continue
        pred, _ = forward(run.state, X, train_mode=False)
        by_run[(run.fold, run.seed)] = evaluate(y, pred, rare)
    if not by_run:
        raise ValueError("no successful runs to evaluate")
    return aggregate_fold_seed(by_run), by_run


@dataclass
class SweepCell:
    stage: str
    alpha_e: float
    lam: float
    alpha_c: float
    report: EvalReport
    per_run: dict[tuple[int, int], EvalReport]
    failures: int


@dataclass
class SweepReport:
    stages: list[str]
    cells: list[SweepCell]
    best_alpha_e: float
    best_lam: float
    best_alpha_c: float

    def rows(self):
        for cell in self.cells:
            for (fold, seed), rep in sorted(cell.per_run.items()):
                yield {
                    "stage": cell.stage, "alpha_e": cell.alpha_e, "lambda": cell.lam,
                    "alpha_c": cell.alpha_c, "fold": fold, "seed": seed,
                    "mae": rep.mae, "mae_rare": rep.mae_rare, "aore": rep.aore,
                    "pcc": rep.pcc, "pcc_rare": rep.pcc_rare, "aorc": rep.aorc,
                }


def _sweep_key(cell: SweepCell):
    aore = cell.report.aore if cell.report.aore is not None else math.inf
    aorc = cell.report.aorc if cell.report.aorc is not None else -math.inf
    return (aore, -aorc)


def sweep(
    table: DatasetTable,
    plan: SplitPlan,
    descriptor: DatasetDescriptor,
    base: TrainConfig,
    alpha_e_grid: list[float],
    lambda_grid: list[float],
    alpha_c_grid: list[float] | None = None,
    fold_indices: list[int] | None = None,
) -> SweepReport:
    """Staged tuning: scan alpha_e at lambda=0.5, then lambda, then optionally alpha_c.

    Cells are selected by validation AORE with AORC as the tiebreak.
    """
    if not alpha_e_grid or not lambda_grid:
        raise ValueError("grids must be non-empty")
    folds = list(range(len(plan.folds))) if fold_indices is None else list(fold_indices)

    def run_cell(stage: str, alpha_e: float, lam: float, alpha_c: float) -> SweepCell:
        config = replace(
            base,
            lam=lam,
            importance_e=replace(base.importance_e, alpha=alpha_e),
            importance_c=replace(base.importance_c, alpha=alpha_c),
        )
        results = train_cv(table, plan, config, descriptor, fold_indices=folds)
        by_run: dict[tuple[int, int], EvalReport] = {}
        failures = 0
        for run in results:
            if not run.ok:
                failures += 1
                continue
            val_idx = plan.folds[run.fold][1]
            pred, _ = forward(run.state, table.features[val_idx], train_mode=False)
            y_val = table.targets[val_idx]
            by_run[(run.fold, run.seed)] = evaluate(y_val, pred, rare_mask(y_val, descriptor))
        if not by_run:
            raise TrainingDiverged(f"sweep cell {stage} alpha_e={alpha_e} lambda={lam} "
                                   "had no successful run")
        return SweepCell(stage=stage, alpha_e=alpha_e, lam=lam, alpha_c=alpha_c,
                         report=aggregate_fold_seed(by_run), per_run=by_run, failures=failures)

    cells: list[SweepCell] = []
    stages = []

    stages.append("alpha_e")
    log.info("sweep stage 1: alpha_e scan at lambda=0.5 over %s", alpha_e_grid)
    stage1 = [run_cell("alpha_e", a, 0.5, base.importance_c.alpha) for a in alpha_e_grid]
    cells += stage1
    best_alpha_e = min(stage1, key=_sweep_key).alpha_e
    log.info("sweep stage 1 best alpha_e=%g", best_alpha_e)

    stages.append("lambda")
    log.info("sweep stage 2: lambda scan at alpha_e=%g over %s", best_alpha_e, lambda_grid)
    stage2 = [run_cell("lambda", best_alpha_e, l, base.importance_c.alpha) for l in lambda_grid]
    cells += stage2
    best_lam = min(stage2, key=_sweep_key).lam
    log.info("sweep stage 2 best lambda=%g", best_lam)

    best_alpha_c = base.importance_c.alpha
    if alpha_c_grid:
        stages.append("alpha_c")
        log.info("sweep stage 3: alpha_c scan over %s", alpha_c_grid)
        stage3 = [run_cell("alpha_c", best_alpha_e, best_lam, a) for a in alpha_c_grid]
        cells += stage3
        best_alpha_c = min(stage3, key=_sweep_key).alpha_c
        log.info("sweep stage 3 best alpha_c=%g", best_alpha_c)

    return SweepReport(stages=stages, cells=cells, best_alpha_e=best_alpha_e,
                       best_lam=best_lam, best_alpha_c=best_alpha_c)
