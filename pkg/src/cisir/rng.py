"""Deterministic counter-based random generators keyed by integer tuples."""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def keyed_rng(*key: int) -> np.random.Generator:
    """Philox generator deterministically keyed by an integer tuple.

    Results depend only on the key values, never on call order, so callers
    may draw for (seed, epoch, group) in any order or in parallel.
    """
    entropy = [int(k) & _MASK64 for k in key]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=state))
