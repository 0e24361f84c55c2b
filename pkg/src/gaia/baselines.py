"""Reference forecasters that need no graph and no training.

All operate on one node's raw observed series in original units and emit a
nonnegative per-month forecast. Series too short for a method fall back to
the last observed value and are flagged.
"""

from __future__ import annotations

import numpy as np

from .graph import ESellerGraph
from .metrics import MetricsReport, summary_metrics
from .synth import NodeTruth

__all__ = ["last_value", "seasonal_naive", "ar_least_squares", "baseline_forecast", "evaluate_baseline"]


def last_value(series: np.ndarray, t_pred: int) -> np.ndarray:
    return np.full(t_pred, float(series[-1]))


def seasonal_naive(series: np.ndarray, t_pred: int, period: int = 12) -> tuple[np.ndarray, bool]:
    """Repeat the value from one period earlier; falls back when the series
    does not span a full period."""
    n = len(series)
    if n < period:
        return last_value(series, t_pred), True
    out = np.array([series[n + h - period] for h in range(t_pred)], dtype=np.float64)
    return np.maximum(out, 0.0), False


def ar_least_squares(series: np.ndarray, t_pred: int, p: int = 2) -> tuple[np.ndarray, bool]:
    """Fit an order-``p`` autoregression with intercept by least squares,
    then roll it forward ``t_pred`` steps, clamping each step at zero."""
    series = np.asarray(series, dtype=np.float64)
    n = len(series)
    if n - p < p + 1:  # fewer equations than coefficients
        return last_value(series, t_pred), True
    rows = np.ones((n - p, p + 1))
    for i in range(1, p + 1):
        rows[:, i] = series[p - i : n - i]
    coef, *_ = np.linalg.lstsq(rows, series[p:], rcond=None)
    window = list(series[-p:])
    out = np.empty(t_pred)
    for h in range(t_pred):
        nxt = coef[0] + sum(coef[i] * window[-i] for i in range(1, p + 1))
        nxt = max(nxt, 0.0)
        out[h] = nxt
        window.append(nxt)
    return out, False


def baseline_forecast(name: str, series: np.ndarray, t_pred: int, period: int = 12, p: int = 2) -> tuple[np.ndarray, bool]:
    if name == "last_value":
        return last_value(series, t_pred), False
    if name == "seasonal_naive":
        return seasonal_naive(series, t_pred, period=period)
    if name == "ar_ls":
        return ar_least_squares(series, t_pred, p=p)
    raise ValueError(f"unknown baseline {name!r}")


def evaluate_baseline(
    name: str,
    g: ESellerGraph,
    truth: dict[str, NodeTruth],
    node_ids,
    t_pred: int,
    period: int = 12,
    p: int = 2,
) -> tuple[MetricsReport, int]:
    """Metrics for a baseline over a node set; also returns the fallback count."""
    node_ids = list(node_ids)
    if not node_ids:
        raise ValueError("evaluate_baseline: empty node set")
    preds = np.empty((len(node_ids), t_pred))
    fallbacks = 0
    for i, nid in enumerate(node_ids):
        preds[i], fell_back = baseline_forecast(name, g.nodes[nid].gmv, t_pred, period=period, p=p)
        fallbacks += int(fell_back)
    trues = np.stack([truth[nid].target for nid in node_ids])
    return summary_metrics(preds, trues), fallbacks
