"""Evaluation metrics (MAE/PCC overall and on rare instances) and aggregation.

AORE = (MAE + MAE_R)/2 and AORC = (PCC + PCC_R)/2 average the overall and
rare-instance views; they are the headline numbers. Aggregation over runs
reports mean +/- standard error, and two methods differ significantly when
their mean +/- 1 se intervals do not overlap.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP

import numpy as np

METRIC_ORDER = ("mae", "mae_rare", "aore", "pcc", "pcc_rare", "aorc")
LOWER_IS_BETTER = {"mae": True, "mae_rare": True, "aore": True,
                   "pcc": False, "pcc_rare": False, "aorc": False}

SIGNIFICANCE_RULE = (
    "significance: two means differ when their mean +/- 1 standard-error "
    "intervals do not overlap"
)


@dataclass
class EvalReport:
    mae: float
    mae_rare: float | None
    aore: float | None
    pcc: float | None
    pcc_rare: float | None
    aorc: float | None
    n_rare: int
    n: int
    per_run: dict[str, list] = field(default_factory=dict)
    se: dict[str, float] = field(default_factory=dict)

    def metric(self, name: str):
        return getattr(self, name)


def pearson(y, yhat) -> float | None:
    """Unweighted Pearson correlation; None when either side has zero variance."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if len(y) < 2:
        return None
    dy = y - y.mean()
    dh = yhat - yhat.mean()
    vy = float(np.sum(dy * dy))
    vh = float(np.sum(dh * dh))
    if vy <= 0 or vh <= 0:
        return None
    return float(np.sum(dy * dh) / math.sqrt(vy * vh))


def evaluate(y, yhat, rare) -> EvalReport:
    """Single-run metrics; rare variants restrict to the rare mask."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    rare = np.asarray(rare, dtype=bool)
    if not (len(y) == len(yhat) == len(rare)):
        raise ValueError("y, yhat and rare mask must have equal lengths")
    mae = float(np.mean(np.abs(y - yhat)))
    pcc = pearson(y, yhat)
    n_rare = int(rare.sum())
    mae_rare = float(np.mean(np.abs(y[rare] - yhat[rare]))) if n_rare else None
    pcc_rare = pearson(y[rare], yhat[rare]) if n_rare >= 2 else None
    aore = (mae + mae_rare) / 2.0 if mae_rare is not None else None
    aorc = (pcc + pcc_rare) / 2.0 if (pcc is not None and pcc_rare is not None) else None
    return EvalReport(mae=mae, mae_rare=mae_rare, aore=aore, pcc=pcc,
                      pcc_rare=pcc_rare, aorc=aorc, n_rare=n_rare, n=len(y))


def aggregate(reports: list[EvalReport]) -> EvalReport:
    """Mean and standard error (sample sd / sqrt(runs)) per metric over runs.

    Metrics missing in a run (undefined PCC) are excluded from that metric's
    mean; with fewer than 2 reports no standard errors are produced.
    """
    if not reports:
        raise ValueError("nothing to aggregate")
    per_run = {m: [r.metric(m) for r in reports] for m in METRIC_ORDER}
    means: dict[str, float | None] = {}
    ses: dict[str, float] = {}
    for name, values in per_run.items():
        present = [v for v in values if v is not None]
        if not present:
            means[name] = None
            continue
        arr = np.array(present, dtype=np.float64)
        means[name] = float(arr.mean())
        if len(arr) >= 2:
            ses[name] = float(arr.std(ddof=1) / math.sqrt(len(arr)))
    return EvalReport(
        mae=means["mae"], mae_rare=means["mae_rare"], aore=means["aore"],
        pcc=means["pcc"], pcc_rare=means["pcc_rare"], aorc=means["aorc"],
        n_rare=reports[0].n_rare, n=reports[0].n, per_run=per_run, se=ses,
    )


def aggregate_fold_seed(reports_by_fold_seed: dict[tuple[int, int], EvalReport]) -> EvalReport:
    """Average fold-level metrics per seed first, then aggregate over seeds."""
    seeds = sorted({seed for _, seed in reports_by_fold_seed})
    per_seed = []
    for seed in seeds:
        fold_reports = [r for (f, s), r in sorted(reports_by_fold_seed.items()) if s == seed]
        per_seed.append(aggregate(fold_reports) if len(fold_reports) > 1 else fold_reports[0])
    return aggregate(per_seed)


def significant_difference(a: EvalReport, b: EvalReport, metric: str) -> bool:
    """True when |mean_a - mean_b| > se_a + se_b (non-overlapping 1-se intervals)."""
    ma, mb = a.metric(metric), b.metric(metric)
    if ma is None or mb is None:
        return False
    return abs(ma - mb) > a.se.get(metric, 0.0) + b.se.get(metric, 0.0)


def round_metric(value: float, places: int = 3) -> float:
    """Display rounding: half-up on the exact binary value, matching table style.

    The exact value matters: (0.274 + 0.703) / 2 prints as 0.4885 but is
    stored just below the midpoint, so it rounds to 0.488, while an exactly
    representable 0.3125 rounds up to 0.313.
    """
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(float(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def _fmt(value, marker: str = "") -> str:
    if value is None:
        return "--"
    return f"{round_metric(value):.3f}{marker}"


def render_comparison(reports: dict[str, EvalReport], csv_path=None, txt_path=None) -> str:
    """Aligned comparison table in MAE, MAE_R, AORE, PCC, PCC_R, AORC order.

    The best value per column is marked '*' and the second best '+'.
    """
    methods = list(reports)
    markers = {m: {k: "" for k in METRIC_ORDER} for m in methods}
    for metric in METRIC_ORDER:
        scored = [(m, reports[m].metric(metric)) for m in methods
                  if reports[m].metric(metric) is not None]
        scored.sort(key=lambda kv: kv[1], reverse=not LOWER_IS_BETTER[metric])
        if scored:
            markers[scored[0][0]][metric] = "*"
        if len(scored) > 1:
            markers[scored[1][0]][metric] = "+"

    headers = ["method", "MAE", "MAE_R", "AORE", "PCC", "PCC_R", "AORC"]
    rows = [
        [name] + [_fmt(reports[name].metric(m), markers[name][m]) for m in METRIC_ORDER]
        for name in methods
    ]
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines += ["  ".join(c.ljust(widths[i]) for i, c in enumerate(row)) for row in rows]
    lines.append("(* best, + second best per column; " + SIGNIFICANCE_RULE + ")")
    text = "\n".join(lines)

    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["method"] + list(METRIC_ORDER) +
                            [f"se_{m}" for m in METRIC_ORDER])
            for name in methods:
                rep = reports[name]
                writer.writerow(
                    [name]
                    + [rep.metric(m) if rep.metric(m) is not None else "" for m in METRIC_ORDER]
                    + [rep.se.get(m, "") for m in METRIC_ORDER]
                )
    if txt_path is not None:
        with open(txt_path, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")
    return text
