"""Importance-weighted MSE, the correlation regularizer, and their gradients.

The training objective is

    total = wmse + lambda * wpcc_loss

where wmse = sum_i re_i (y_i - yhat_i)^2 and wpcc_loss = 1 - weighted Pearson
correlation of (yhat, y) under importances rc. A separate diagnostic
decomposes the unweighted MSE into mean-mismatch, spread-mismatch and
correlation-deficit terms that sum to the MSE exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossConfig:
    lam: float
    re: np.ndarray  # wmse importances (ImportanceVector or array)
    rc: np.ndarray  # wpcc importances
    sd_epsilon: float = 1e-8
    weighted_means: bool = True

    def __post_init__(self):
        re = _values(self.re)
        rc = _values(self.rc)
        if len(re) != len(rc):
            raise ValueError("re and rc must have the same length")
        if not math.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lambda must be finite and >= 0")
        if self.sd_epsilon <= 0:
            raise ValueError("sd_epsilon must be positive")
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "rc", rc)


@dataclass(frozen=True)
class LossBreakdown:
    wmse: float
    wpcc_loss: float
    total: float
    decomposition: tuple[float, float, float]


def _values(weights) -> np.ndarray:
    return np.asarray(getattr(weights, "values", weights), dtype=np.float64)


def _check_pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: y has {y.shape}, yhat has {yhat.shape}")
    return y, yhat


def wmse(y, yhat, re) -> float:
    """sum_i re_i (y_i - yhat_i)^2; zero iff predictions are exact."""
    y, yhat = _check_pair(y, yhat)
    w = _values(re)
    if len(w) != len(y):
        raise ValueError("importance vector length mismatch")
    diff = y - yhat
    return float(np.sum(w * diff * diff))


def wmse_gradient(y, yhat, re) -> np.ndarray:
    y, yhat = _check_pair(y, yhat)
    return 2.0 * _values(re) * (yhat - y)


def _moments(y, yhat, w, weighted_means):
    total_w = w.sum()
    if weighted_means:
        mu_y = float(np.sum(w * y) / total_w)
        mu_h = float(np.sum(w * yhat) / total_w)
    else:
        mu_y = float(y.mean())
        mu_h = float(yhat.mean())
    dy = y - mu_y
    dh = yhat - mu_h
    cov = float(np.sum(w * dy * dh))
    var_y = float(np.sum(w * dy * dy))
    var_h = float(np.sum(w * dh * dh))
    return total_w, mu_y, mu_h, dy, dh, cov, var_y, var_h


def weighted_pearson(y, yhat, weights, weighted_means: bool = True) -> float:
    """Weighted Pearson correlation; reduces to the ordinary PCC under uniform weights."""
    y, yhat = _check_pair(y, yhat)
    if len(y) < 2:
        raise ValueError("correlation needs at least 2 points")
    w = _values(weights)
    _, _, _, _, _, cov, var_y, var_h = _moments(y, yhat, w, weighted_means)
    if var_y <= 0 or var_h <= 0:
        raise ValueError("correlation undefined for zero-spread inputs")
    return float(cov / math.sqrt(var_y * var_h))


def wpcc_loss(y, yhat, rc, sd_epsilon: float = 1e-8, weighted_means: bool = True) -> float:
    """1 - weighted PCC, in [0, 2].

    A weighted sd of yhat (or y) below ``sd_epsilon`` returns 1.0: constant
    predictors are treated as uncorrelated instead of silently escaping the
    penalty through an undefined correlation.
    """
    y, yhat = _check_pair(y, yhat)
    if len(y) < 2:
        raise ValueError("wpcc_loss needs at least 2 points")
    w = _values(rc)
    total_w, _, _, _, _, cov, var_y, var_h = _moments(y, yhat, w, weighted_means)
    sd_y = math.sqrt(max(var_y, 0.0) / total_w)
    sd_h = math.sqrt(max(var_h, 0.0) / total_w)
    if sd_h < sd_epsilon or sd_y < sd_epsilon:
        return 1.0
    pcc = cov / math.sqrt(var_y * var_h)
    return float(min(max(1.0 - pcc, 0.0), 2.0))


def wpcc_gradient(
    y, yhat, rc, sd_epsilon: float = 1e-8, weighted_means: bool = True
) -> np.ndarray:
    """d(wpcc_loss)/d(yhat).

    Inside the sd-guard region the true gradient vanishes; the returned
    subgradient pushes yhat along (y - ybar), growing sd(yhat) and escaping
    the flat spot.
    """
    y, yhat = _check_pair(y, yhat)
    w = _values(rc)
    n = len(y)
    total_w, _, _, dy, dh, cov, var_y, var_h = _moments(y, yhat, w, weighted_means)
    sd_y = math.sqrt(max(var_y, 0.0) / total_w)
    sd_h = math.sqrt(max(var_h, 0.0) / total_w)
    if sd_y < sd_epsilon:
        return np.zeros(n)
    if sd_h < sd_epsilon:
        return -(w / total_w) * dy / max(sd_y, sd_epsilon)

    dcov = w * dy
    dvar_h = 2.0 * w * dh
    if not weighted_means:
        dcov = dcov - np.sum(w * dy) / n
        dvar_h = dvar_h - 2.0 * np.sum(w * dh) / n
    denom = math.sqrt(var_y * var_h)
    pcc = cov / denom
    dpcc = dcov / denom - pcc * dvar_h / (2.0 * var_h)
    return -dpcc


def mse_decomposition(y, yhat) -> tuple[float, float, float]:
    """Split the unweighted MSE into (mean_term, sd_term, corr_term).

    mean_term = (ybar - yhatbar)^2, sd_term = (sd(yhat) - sd(y))^2 and
    corr_term = 2 sd(yhat) sd(y) (1 - PCC), using population (1/N) moments;
    the three sum to the MSE. A zero sd annihilates the correlation term.
    """
    y, yhat = _check_pair(y, yhat)
    if len(y) < 2:
        raise ValueError("decomposition needs at least 2 points")
    mu_y, mu_h = float(y.mean()), float(yhat.mean())
    dy, dh = y - mu_y, yhat - mu_h
    sd_y = math.sqrt(float(np.mean(dy * dy)))
    sd_h = math.sqrt(float(np.mean(dh * dh)))
    mean_term = (mu_y - mu_h) ** 2
    sd_term = (sd_h - sd_y) ** 2
    if sd_y == 0.0 or sd_h == 0.0:
        corr_term = 0.0
    else:
        pcc = float(np.mean(dy * dh)) / (sd_y * sd_h)
        corr_term = max(2.0 * sd_h * sd_y * (1.0 - pcc), 0.0)
    return (mean_term, sd_term, corr_term)


def combined_loss(y, yhat, config: LossConfig) -> LossBreakdown:
    """wmse + lambda * wpcc_loss with the MSE-decomposition diagnostic attached."""
    y, yhat = _check_pair(y, yhat)
    err = wmse(y, yhat, config.re)
    pcc_loss = wpcc_loss(y, yhat, config.rc, config.sd_epsilon, config.weighted_means)
    return LossBreakdown(
        wmse=err,
        wpcc_loss=pcc_loss,
        total=err + config.lam * pcc_loss,
        decomposition=mse_decomposition(y, yhat),
    )


def loss_gradient(y, yhat, config: LossConfig) -> np.ndarray:
    """Analytic d(total)/d(yhat)."""
    grad = wmse_gradient(y, yhat, config.re)
    if config.lam:
        grad = grad + config.lam * wpcc_gradient(
            y, yhat, config.rc, config.sd_epsilon, config.weighted_means
        )
    return grad


def batch_loss_and_gradient(
    y,
    yhat,
    re_batch,
    rc_batch,
    lam: float,
    n_total: int,
    sd_epsilon: float = 1e-8,
    weighted_means: bool = True,
) -> tuple[LossBreakdown, np.ndarray]:
    """Mini-batch objective using globally normalized importances.

    The wmse part is rescaled by n_total / batch_size so gradient magnitudes
    are batch-size independent in expectation; the wpcc part is invariant to
    weight rescaling, so the restricted rc values are used as-is.
    """
    y, yhat = _check_pair(y, yhat)
    scale = n_total / len(y)
    err = scale * wmse(y, yhat, re_batch)
    grad = scale * wmse_gradient(y, yhat, re_batch)
    if len(y) >= 2:
        pcc_loss = wpcc_loss(y, yhat, rc_batch, sd_epsilon, weighted_means)
        decomposition = mse_decomposition(y, yhat)
        if lam:
            grad = grad + lam * wpcc_gradient(y, yhat, rc_batch, sd_epsilon, weighted_means)
    else:
        # correlation is undefined on a single point; only the wmse part applies
        pcc_loss = 0.0
        decomposition = (0.0, 0.0, 0.0)
    breakdown = LossBreakdown(
        wmse=err,
        wpcc_loss=pcc_loss,
        total=err + lam * pcc_loss,
        decomposition=decomposition,
    )
    return breakdown, grad
