# Copyright © 2025 mlx-popcast contributors.

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .core import GrowthType, PopcastError, growth_type

# Targets with a smaller population variance have no defined nMSE.
VARIANCE_FLOOR = 1e-12
TABLE_COLUMNS = ("method", "mode", "n", "nmse", "mae", "src", "pcc")


class LengthMismatch(PopcastError):
    pass


class EmptyInput(PopcastError):
    pass


@dataclass
class MetricsReport:
    nmse: Optional[float]
    mae: float
    src: Optional[float]
    pcc: Optional[float]
    n: int
    flags: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return asdict(self)


def compute_metrics(y_hat: Sequence[float], y: Sequence[float]) -> MetricsReport:
    """
    nMSE, MAE, Spearman and Pearson correlation of predictions against targets.

    nMSE divides by the population variance of the targets, so the constant
    mean predictor scores exactly 1. Spearman correlation ranks ties by their
    average rank. Undefined values are ``None`` and explained in ``flags``.
    """
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y_hat.shape[0] != y.shape[0]:
        raise LengthMismatch(
            f"Got {y_hat.shape[0]} predictions for {y.shape[0]} targets."
        )
    n = y.shape[0]
    if n == 0:
        raise EmptyInput("Cannot compute metrics over zero samples.")

    flags = []
    diff = y_hat - y
    var = np.var(y)
    nmse = None
    if var < VARIANCE_FLOOR:
        flags.append("nmse undefined: constant targets")
    else:
        nmse = float(np.mean(diff**2) / var)
    mae = float(np.mean(np.abs(diff)))

    src = pcc = None
    if n < 2:
        flags.append("correlations undefined: fewer than two samples")
    elif np.ptp(y_hat) == 0 or np.ptp(y) == 0:
        flags.append("correlations undefined: constant input")
    else:
        pcc = float(stats.pearsonr(y_hat, y)[0])
        src = float(stats.spearmanr(y_hat, y)[0])
    return MetricsReport(nmse=nmse, mae=mae, src=src, pcc=pcc, n=n, flags=flags)


def group_by_growth(
    gammas: Sequence[Optional[float]], gamma_low: float, gamma_high: float
) -> Dict[str, List[int]]:
    groups = {}
    for i, g in enumerate(gammas):
        groups.setdefault(growth_type(g, gamma_low, gamma_high).value, []).append(i)
    return groups


def grouped_metrics(log, drift_cfg) -> Dict[str, MetricsReport]:
    """
    Metrics per growth type over the predictions of a run log.

    Predictions are partitioned into delayed viral, typical, initial viral
    and undefined growth with the calibrated band of ``drift_cfg``; only
    non-empty groups are reported.
    """
    preds = log.predictions
    y_hat = np.array([p.y_hat for p in preds], dtype=np.float64)
    y = np.array([p.y for p in preds], dtype=np.float64)
    groups = group_by_growth(
        [p.gamma for p in preds], drift_cfg.gamma_low, drift_cfg.gamma_high
    )
    order = [t.value for t in GrowthType]
    return {
        name: compute_metrics(y_hat[groups[name]], y[groups[name]])
        for name in order
        if name in groups
    }


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def metrics_table(rows: Sequence[Mapping]) -> str:
    """
    Aligned-column CSV with one row per (method, mode) result.

    Every row is a mapping holding ``method``, ``mode`` and either a
    :class:`MetricsReport` under ``report`` or the metric values directly.
    """
    cells = [list(TABLE_COLUMNS)]
    for row in rows:
        values = dict(row)
        report = values.pop("report", None)
        if report is not None:
            values.update(report.to_dict())
        cells.append([_fmt(values.get(c)) for c in TABLE_COLUMNS])
    widths = [max(len(r[i]) for r in cells) for i in range(len(TABLE_COLUMNS))]
    lines = []
    for r in cells:
        lines.append(
            ",".join(
                c.ljust(w) if i < 2 else c.rjust(w)
                for i, (c, w) in enumerate(zip(r, widths))
            ).rstrip()
        )
    return "\n".join(lines) + "\n"


def gate_confusion(decisions, truth: Mapping[str, bool]) -> Dict:
    """
    Precision and recall of drift decisions against ground-truth flags.

    ``decisions`` holds objects with ``video_id`` and ``d``; videos absent
    from ``truth`` are skipped.
    """
    tp = fp = fn = tn = 0
    for s in decisions:
        if s.video_id not in truth:
            continue
        actual = bool(truth[s.video_id])
        if s.d and actual:
            tp += 1
        elif s.d:
            fp += 1
        elif actual:
            fn += 1
        else:
            tn += 1
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None:
        logging.warning("The drift indicator never fired, precision is undefined.")
    return {
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "tn": tn,
        "precision": precision,
        "recall": recall,
    }
