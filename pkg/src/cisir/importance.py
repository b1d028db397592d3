"""Importance families mapping normalized densities to per-instance weights.

Two parametric families plus a constant baseline:

* recip: d**(-alpha). alpha=0 is uniform, alpha=1 the inverse (balancing)
  function, alpha=0.5 the square-root inverse.
* mdi: (1 - d**alpha)**(1/alpha), a monotonically decreasing involution --
  convex for alpha < 1, linear (1 - d) at alpha = 1, concave for alpha > 1.

Importances are normalized to sum to one over the training set and reused
for every mini-batch.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

FAMILIES = ("recip", "mdi", "constant")

# Safety clamp: density normalization already keeps d < 1, this guards the
# open-interval requirement against degenerate inputs.
DENSITY_CLAMP = 1e-12


@dataclass(frozen=True)
class ImportanceSpec:
    family: str
    alpha: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown importance family {self.family!r}")
        if self.family == "recip" and self.alpha < 0:
            raise ValueError("recip requires alpha >= 0")
        if self.family == "mdi" and self.alpha <= 0:
            raise ValueError("mdi requires alpha > 0")


@dataclass(frozen=True)
class ImportanceVector:
    """Positive per-instance importances summing to one."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if not np.all(v > 0):
            raise ValueError("importances must be strictly positive")
        if abs(v.sum() - 1.0) > 1e-12:
            raise ValueError(f"importances must sum to 1 (got {v.sum()!r})")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)


def _check_open_unit(d: np.ndarray) -> None:
    if not np.all((d > 0) & (d < 1)):
        raise ValueError("normalized density must lie strictly inside (0,1)")


def recip(d, alpha: float):
    """d**(-alpha), alpha >= 0; non-increasing in d, constant 1 at alpha=0."""
    if alpha < 0:
        raise ValueError("recip requires alpha >= 0")
    arr = np.asarray(d, dtype=np.float64)
    _check_open_unit(np.atleast_1d(arr))
    out = arr ** (-alpha)
    return float(out) if np.ndim(d) == 0 else out


def mdi(d, alpha: float):
    """(1 - d**alpha)**(1/alpha), alpha > 0; decreasing, self-inverse on (0,1)."""
    if alpha <= 0:
        raise ValueError("mdi requires alpha > 0")
    arr = np.asarray(d, dtype=np.float64)
    _check_open_unit(np.atleast_1d(arr))
    out = (1.0 - arr ** alpha) ** (1.0 / alpha)
    return float(out) if np.ndim(d) == 0 else out


_cache: dict[tuple, ImportanceVector] = {}


def compute_importances(profile, spec: ImportanceSpec) -> ImportanceVector:
    """Apply the family to the profile's normalized densities and normalize to sum 1.

    Results are cached per (densities, family, alpha): importances are fixed
    for a dataset and reused across epochs.
    """
    densities = np.asarray(
        getattr(profile, "normalized_densities", profile), dtype=np.float64
    )
    key = (
        hashlib.sha1(np.ascontiguousarray(densities).tobytes()).digest(),
        spec.family,
        float(spec.alpha),
    )
    hit = _cache.get(key)
    if hit is not None:
        return hit

    if spec.family == "constant":
        raw = np.ones_like(densities)
    else:
        clamped = np.clip(densities, DENSITY_CLAMP, 1.0 - DENSITY_CLAMP)
        n_clamped = int(np.sum(clamped != densities))
        if n_clamped:
            warnings.warn(
                f"clamped {n_clamped} densities into [{DENSITY_CLAMP}, 1-{DENSITY_CLAMP}] "
                "before importance evaluation",
                RuntimeWarning,
            )
        raw = recip(clamped, spec.alpha) if spec.family == "recip" else mdi(clamped, spec.alpha)
    if not np.all(np.isfinite(raw)):
        raise ValueError("importance evaluation overflowed; try a smaller alpha")

    vector = ImportanceVector(values=raw / raw.sum())
    _cache[key] = vector
    return vector
