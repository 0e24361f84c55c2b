"""Forecast-quality metrics.

Headline numbers are computed on the summed forecast horizon (the label is
the total of the next months) in original currency units; per-month columns
are reported alongside. MAPE excludes nodes whose true total falls below one
currency unit and reports how many were excluded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["MetricsReport", "summary_metrics", "MAPE_FLOOR"]

MAPE_FLOOR = 1.0


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    mape: float
    n_nodes: int
    mape_excluded: int
    monthly_mae: list[float]
    monthly_rmse: list[float]
    monthly_mape: list[float]

    def as_dict(self) -> dict:
        return {
            "mae": self.mae,
            "rmse": self.rmse,
            "mape": self.mape,
            "n_nodes": self.n_nodes,
            "mape_excluded": self.mape_excluded,
            "monthly_mae": self.monthly_mae,
            "monthly_rmse": self.monthly_rmse,
            "monthly_mape": self.monthly_mape,
        }


def _mape(pred: np.ndarray, true: np.ndarray) -> tuple[float, int]:
    keep = true >= MAPE_FLOOR
    excluded = int((~keep).sum())
    if not keep.any():
        return float("nan"), excluded
    return float(np.mean(np.abs(pred[keep] - true[keep]) / true[keep])), excluded


def summary_metrics(preds: np.ndarray, trues: np.ndarray) -> MetricsReport:
    """``preds``/``trues`` are (n_nodes, t_pred) arrays in original units."""
    preds = np.asarray(preds, dtype=np.float64)
    trues = np.asarray(trues, dtype=np.float64)
    if preds.shape != trues.shape or preds.ndim != 2 or preds.shape[0] == 0:
        raise ValueError(f"summary_metrics: need matching nonempty (n, t_pred) arrays, got {preds.shape} vs {trues.shape}")
    pred_sum = preds.sum(axis=1)
    true_sum = trues.sum(axis=1)
    err = pred_sum - true_sum
    mape, excluded = _mape(pred_sum, true_sum)
    monthly_mae, monthly_rmse, monthly_mape = [], [], []
    for m in range(preds.shape[1]):
        diff = preds[:, m] - trues[:, m]
        monthly_mae.append(float(np.mean(np.abs(diff))))
        monthly_rmse.append(math.sqrt(float(np.mean(diff**2))))
        monthly_mape.append(_mape(preds[:, m], trues[:, m])[0])
    return MetricsReport(
        mae=float(np.mean(np.abs(err))),
        rmse=math.sqrt(float(np.mean(err**2))),
        mape=mape,
        n_nodes=len(pred_sum),
        mape_excluded=excluded,
        monthly_mae=monthly_mae,
        monthly_rmse=monthly_rmse,
        monthly_mape=monthly_mape,
    )
