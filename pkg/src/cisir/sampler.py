"""Stratified mini-batch sampling (SSB) and the uniform baseline.

Training indices are sorted by target and sliced into batch_size contiguous
groups of M = ceil(N / batch_size) members (last possibly shorter). Each
epoch deals one permuted member per group into each of the M batches, so
every batch spans the whole target range -- in particular the rare tail --
while uniform chunking misses rare instances in a fraction of roughly
(1 - pi_r)^B of its batches.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .rng import keyed_rng

_SSB_TAG = 0x535342
_UNIFORM_TAG = 0x554E49


@dataclass(frozen=True)
class GroupPlan:
    """Target-sorted contiguous groups; group g feeds one member to each batch."""

    groups: tuple[np.ndarray, ...]
    batch_size: int
    batches_per_epoch: int

    def __post_init__(self):
        n = sum(len(g) for g in self.groups)
        b, m = self.batch_size, self.batches_per_epoch
        if not (b * m >= n > b * (m - 1)):
            raise ValueError("group sizes inconsistent with batch_size * batches_per_epoch")

    @property
    def n(self) -> int:
        return sum(len(g) for g in self.groups)


def build_groups(targets, batch_size: int, n_rare: int | None = None) -> GroupPlan:
    """Slice the target-sorted indices into batch_size groups of M = ceil(N/B).

    When ``n_rare`` is given and M exceeds it, some batches necessarily miss
    rare instances; a warning reports the smallest batch size B' = ceil(N /
    n_rare) that would satisfy the M <= n_rare guideline.
    """
    y = np.asarray(targets, dtype=np.float64)
    n = len(y)
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds population {n}")
    m = math.ceil(n / batch_size)
    if n_rare is not None and n_rare > 0 and m > n_rare:
        suggested = math.ceil(n / n_rare)
        warnings.warn(
            f"batches_per_epoch M={m} exceeds the rare count {n_rare}; some batches "
            f"will lack rare instances. Use batch_size >= {suggested} to guarantee "
            "rare representation.",
            RuntimeWarning,
        )
    order = np.argsort(y, kind="stable")
    groups = tuple(order[start:start + m] for start in range(0, n, m))
    return GroupPlan(groups=groups, batch_size=batch_size, batches_per_epoch=m)


def epoch_batches(plan: GroupPlan, seed: int, epoch: int) -> list[np.ndarray]:
    """One epoch of stratified batches: batch j takes the j-th permuted member of
    every group large enough, so each index appears exactly once per epoch."""
    permuted = [
        keyed_rng(_SSB_TAG, seed, epoch, g).permutation(group)
        for g, group in enumerate(plan.groups)
    ]
    batches = []
    for j in range(plan.batches_per_epoch):
        members = [perm[j] for perm in permuted if len(perm) > j]
        batches.append(np.array(members, dtype=np.int64))
    return batches


def uniform_epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Baseline: a global permutation chunked into batches of batch_size."""
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds population {n}")
    perm = keyed_rng(_UNIFORM_TAG, seed, epoch).permutation(n)
    return [perm[start:start + batch_size] for start in range(0, n, batch_size)]
