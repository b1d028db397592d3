"""SVG figure emission: density curves, prediction scatters, sensitivity curves."""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .density import DensityProfile, kde_density  # noqa: E402


def density_plot(targets, profile: DensityProfile, path) -> None:
    """Target histogram with the fitted KDE curve on a log-density axis."""
    y = np.asarray(targets, dtype=np.float64)
    grid = np.linspace(y.min(), y.max(), 512)
    curve = kde_density(y, profile.bandwidth, grid)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(y, bins=100, density=True, alpha=0.4, label="targets")
    ax.plot(grid, curve, lw=1.5, label=f"KDE (h={profile.bandwidth:.4g})")
    ax.set_yscale("log")
    ax.set_xlabel("target")
    ax.set_ylabel("density")
    ax.set_title(
        f"rho={profile.rho_freq:.4g}, rho_d={profile.rho_density:.4g}"
    )
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def prediction_scatter(y, yhat, rare, path, title: str = "") -> None:
    """Actual-vs-predicted scatter with rare instances highlighted."""
    y = np.asarray(y)
    yhat = np.asarray(yhat)
    rare = np.asarray(rare, dtype=bool)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(y[~rare], yhat[~rare], s=6, alpha=0.35, color="gray", label="common")
    if rare.any():
        ax.scatter(y[rare], yhat[rare], s=14, alpha=0.9, color="crimson", label="rare")
    lims = [min(y.min(), yhat.min()), max(y.max(), yhat.max())]
    ax.plot(lims, lims, "k--", lw=0.8)
    ax.set_xlabel("actual")
    ax.set_ylabel("predicted")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def sensitivity_curves(xs, aore, aore_se, aorc, aorc_se, xlabel, path) -> None:
    """AORE and AORC against a swept hyperparameter, with standard-error bars."""
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.errorbar(xs, aore, yerr=aore_se, marker="o", color="tab:blue", label="AORE")
    ax1.set_xlabel(xlabel)
    ax1.set_ylabel("AORE", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.errorbar(xs, aorc, yerr=aorc_se, marker="s", color="tab:orange", label="AORC")
    ax2.set_ylabel("AORC", color="tab:orange")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def history_plot(history, path) -> None:
    """Training/validation loss and learning rate across epochs."""
    fig, ax1 = plt.subplots(figsize=(6, 4))
    epochs = np.arange(len(history.val_loss))
    ax1.plot(epochs, history.train_total, label="train total", lw=1)
    ax1.plot(epochs, history.val_loss, label="validation", lw=1)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.set_yscale("log")
    ax1.legend(loc="upper right")
    ax2 = ax1.twinx()
    ax2.plot(epochs, history.learning_rate, color="gray", lw=0.8, alpha=0.7)
    ax2.set_ylabel("learning rate")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
