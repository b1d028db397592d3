"""Tabular dataset loading, rare-instance predicates, and stratified splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .rng import keyed_rng

TARGET_TRANSFORMS = ("identity", "natural-log", "log10", "delta")


@dataclass(frozen=True)
class DatasetDescriptor:
    """Per-dataset metadata: target column/transform and rare-bin thresholds.

    Bins are numbered 1 (below ``lower_threshold``), 2 (between thresholds)
    and 3 (above ``upper_threshold``); a missing threshold collapses the
    adjacent bins. Thresholds are in post-transform target units.
    """

    name: str
    target_column: str = "target"
    target_transform: str = "identity"
    lower_threshold: float | None = None
    upper_threshold: float | None = None
    rare_bins: frozenset[int] = frozenset({3})
    rare_sign_filter: str | None = None  # "positive-only" or None
    drop_invalid: bool = False

    def __post_init__(self):
        if self.target_transform not in TARGET_TRANSFORMS:
            raise ValueError(f"unknown target transform {self.target_transform!r}")
        if not self.rare_bins:
            raise ValueError("rare_bins must be non-empty")
        if not set(self.rare_bins) <= {1, 2, 3}:
            raise ValueError(f"rare_bins must be a subset of {{1,2,3}}, got {set(self.rare_bins)}")
        if (
            self.lower_threshold is not None
            and self.upper_threshold is not None
            and not self.lower_threshold < self.upper_threshold
        ):
            raise ValueError("lower_threshold must be < upper_threshold")
        if self.rare_sign_filter not in (None, "positive-only"):
            raise ValueError(f"unknown rare_sign_filter {self.rare_sign_filter!r}")
        object.__setattr__(self, "rare_bins", frozenset(self.rare_bins))


@dataclass(frozen=True)
class DatasetTable:
    """Feature matrix (N x d), transformed targets (N,) and source row ids."""

    features: np.ndarray
    targets: np.ndarray
    ids: np.ndarray
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if targets.ndim != 1 or len(targets) != len(features):
            raise ValueError("targets must be a vector aligned with features rows")
        if len(targets) < 2:
            raise ValueError("dataset needs at least 2 rows")
        if not np.all(np.isfinite(features)) or not np.all(np.isfinite(targets)):
            raise ValueError("features/targets contain NaN or Inf")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "ids", np.asarray(self.ids, dtype=np.int64))

    @property
    def n(self) -> int:
        return len(self.targets)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint train/test indices plus (train, validation) index pairs per fold."""

    train_indices: np.ndarray
    test_indices: np.ndarray
    folds: tuple[tuple[np.ndarray, np.ndarray], ...]

    def validate(self, n: int) -> None:
        train = np.sort(self.train_indices)
        test = np.sort(self.test_indices)
        both = np.concatenate([train, test])
        if np.intersect1d(train, test).size:
            raise ValueError("train and test indices overlap")
        if not np.array_equal(np.sort(both), np.arange(n)):
            raise ValueError("train + test must cover all row indices exactly once")
        vals = np.concatenate([v for _, v in self.folds]) if self.folds else np.array([], dtype=np.int64)
        if not np.array_equal(np.sort(vals), train):
            raise ValueError("fold validation sets must partition the training indices")
        for tr, va in self.folds:
            if np.intersect1d(tr, va).size:
                raise ValueError("fold train and validation sets overlap")
            if not np.array_equal(np.sort(np.concatenate([tr, va])), train):
                raise ValueError("each fold must cover the training indices")


def apply_transform(values: np.ndarray, transform: str) -> np.ndarray:
    """Map raw target values into training units. "delta" targets arrive precomputed."""
    if transform in ("identity", "delta"):
        return np.asarray(values, dtype=np.float64)
    if transform == "natural-log":
        out = np.log(values)
    elif transform == "log10":
        out = np.log10(values)
    else:
        raise ValueError(f"unknown target transform {transform!r}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{transform} transform produced non-finite targets (non-positive inputs?)")
    return out


def load_csv(path, descriptor: DatasetDescriptor, drop_invalid: bool | None = None) -> DatasetTable:
    """Load a UTF-8, comma-separated, headered CSV into a DatasetTable.

    The target column named by the descriptor is transformed per
    ``descriptor.target_transform``; all remaining numeric columns become
    features in file order. Rows with missing or non-numeric cells are
    dropped when ``drop_invalid`` is true, otherwise they raise.
    """
    if drop_invalid is None:
        drop_invalid = descriptor.drop_invalid
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ValueError(f"unreadable file {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if descriptor.target_column not in header:
            raise ValueError(
                f"target column {descriptor.target_column!r} not in header {header}"
            )
        target_pos = header.index(descriptor.target_column)
        feature_names = tuple(h for i, h in enumerate(header) if i != target_pos)

        rows, raw_targets, ids = [], [], []
        for row_idx, row in enumerate(reader):
            if len(row) != len(header):
                if drop_invalid:
                    continue
                raise ValueError(f"row {row_idx}: expected {len(header)} cells, got {len(row)}")
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                if drop_invalid:
                    continue
                bad = next(c for c in row if not _is_float(c))
                raise ValueError(f"non-numeric cell {bad!r} in row {row_idx}") from None
            if not all(math.isfinite(v) for v in values):
                if drop_invalid:
                    continue
                raise ValueError(f"non-finite cell in row {row_idx}")
            raw_targets.append(values.pop(target_pos))
            rows.append(values)
            ids.append(row_idx)

    if len(rows) < 2:
        raise ValueError(f"{path}: fewer than 2 usable rows after filtering")
    targets = apply_transform(np.array(raw_targets), descriptor.target_transform)
    return DatasetTable(
        features=np.array(rows, dtype=np.float64),
        targets=targets,
        ids=np.array(ids, dtype=np.int64),
        feature_names=feature_names,
    )


def _is_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def save_csv(table: DatasetTable, path, target_column: str = "target") -> None:
    """Write the table back out; float cells use repr so doubles round-trip bit-exactly."""
    names = table.feature_names or tuple(f"f{i}" for i in range(table.dim))
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(list(names) + [target_column])
        for row, y in zip(table.features, table.targets):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(y))])


def bin_indices(targets: np.ndarray, descriptor: DatasetDescriptor) -> np.ndarray:
    """Assign each target to bin 1/2/3 against the descriptor thresholds."""
    y = np.asarray(targets, dtype=np.float64)
    lo, hi = descriptor.lower_threshold, descriptor.upper_threshold
    if lo is None and hi is None:
        raise ValueError("descriptor defines no thresholds")
    bins = np.full(len(y), 2, dtype=np.int64)
    if lo is not None:
        bins[y < lo] = 1
    if hi is not None:
        bins[y > hi] = 3
    if lo is None:
        bins[bins == 2] = 1  # only an upper threshold: everything at or below it is bin 1
    elif hi is None:
        bins[bins == 2] = 3  # only a lower threshold: everything at or above it is bin 3
    return bins


def rare_mask(table_or_targets, descriptor: DatasetDescriptor) -> np.ndarray:
    """Boolean mask of rare instances: rare-bin membership plus optional sign filter."""
    targets = getattr(table_or_targets, "targets", table_or_targets)
    y = np.asarray(targets, dtype=np.float64)
    bins = bin_indices(y, descriptor)
    mask = np.isin(bins, list(descriptor.rare_bins))
    if descriptor.rare_sign_filter == "positive-only":
        mask &= y > 0
    return mask


def stratified_split(
    table: DatasetTable, test_fraction: float, k_folds: int, seed: int
) -> SplitPlan:
    """Target-sorted round-robin split into test/train, then k CV folds of the train part.

    Consecutive target-sorted blocks are shuffled with a seeded generator and
    dealt one member per partition, so every partition tracks the full target
    distribution. Deterministic given (table, test_fraction, k_folds, seed).
    """
    n = table.n
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    if k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    if k_folds > n:
        raise ValueError(f"k_folds={k_folds} exceeds dataset size {n}")

    rng = keyed_rng(seed, 0x5354)
    order = np.argsort(table.targets, kind="stable")

    block = max(int(round(1.0 / test_fraction)), 1)
    test_sel: list[np.ndarray] = []
    taken = 0
    for start in range(0, n, block):
        chunk = rng.permutation(order[start:start + block])
        want = int(round(test_fraction * (start + len(chunk)))) - taken
        want = min(max(want, 0), len(chunk))
        test_sel.append(chunk[:want])
        taken += want
    test_indices = np.sort(np.concatenate(test_sel)) if test_sel else np.array([], dtype=np.int64)
    train_indices = np.setdiff1d(np.arange(n), test_indices)

    train_order = train_indices[np.argsort(table.targets[train_indices], kind="stable")]
    fold_members: list[list[int]] = [[] for _ in range(k_folds)]
    for start in range(0, len(train_order), k_folds):
        chunk = rng.permutation(train_order[start:start + k_folds])
        for j, idx in enumerate(chunk):
            fold_members[j].append(int(idx))

    folds = []
    for j in range(k_folds):
        val = np.sort(np.array(fold_members[j], dtype=np.int64))
        tr = np.setdiff1d(train_indices, val)
        folds.append((tr, val))

    plan = SplitPlan(train_indices=train_indices, test_indices=test_indices, folds=tuple(folds))
    plan.validate(n)
    return plan
