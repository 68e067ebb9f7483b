"""Norm-box downward-trend labels for GMV, bought items (BI) and purchase days (PD).

A customer is downward in the target month when its value falls strictly
below ``mu - alpha * s``, with ``mu`` and ``s`` the mean and sample standard
deviation of the twelve preceding calendar months.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import N_HISTORY, DataError, panel_matrix

METRICS = ("gmv", "bi", "pd")

# (alpha FB, alpha IB) per metric
DEFAULT_ALPHAS = {"gmv": (1.0, 0.75), "bi": (1.5, 1.0), "pd": (1.25, 1.0)}
TARGET_EVENT_RATES = {"gmv": 0.0965, "bi": 0.0545, "pd": 0.0732}
ALPHA_GRID = np.round(np.arange(1, 61) * 0.05, 2)

LABEL_COLUMNS = ["customer_id", "metric", "is_downward", "lower_bound", "target_value"]


@dataclass(frozen=True)
class NormBoxParams:
    mu: float
    s: float
    alpha: float

    @property
    def lower_bound(self) -> float:
        return self.mu - self.alpha * self.s


@dataclass(frozen=True)
class DownwardLabel:
    customer_id: str
    metric: str
    is_downward: bool
    lower_bound: float


def _check_metric(metric: str) -> str:
    m = metric.lower()
    if m not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    return m


def norm_box_stats(history) -> tuple[float, float]:
    h = np.asarray(history, dtype=float)
    if h.shape != (N_HISTORY,):
        raise ValueError(f"history must hold exactly {N_HISTORY} values, got {h.size}")
    if (h < 0).any():
        raise ValueError("history values must be non-negative")
    return float(h.mean()), float(h.std(ddof=1))


def is_downward(history, next_value, alpha, customer_id="", metric="gmv") -> DownwardLabel:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    mu, s = norm_box_stats(history)
    box = NormBoxParams(mu, s, alpha)
    return DownwardLabel(customer_id, metric, bool(next_value < box.lower_bound), box.lower_bound)


def _box_arrays(panel: pd.DataFrame, metric: str):
    wide = panel_matrix(panel, metric)
    hist = wide.loc[:, list(range(N_HISTORY))].to_numpy(dtype=float)
    target = wide[N_HISTORY].to_numpy(dtype=float)
    return wide.index, hist.mean(axis=1), hist.std(axis=1, ddof=1), target


def label_panel(panel: pd.DataFrame, metric: str, alpha_fb: float, alpha_ib: float, segments: pd.DataFrame):
    """Label every customer of ``panel`` for one metric.

    Customers whose twelve history months are all zero are not scoreable:
    they get ``is_downward = NA`` and are left out of the event rate.
    Returns ``(labels, event_rate)``.
    """
    metric = _check_metric(metric)
    if alpha_fb <= 0 or alpha_ib <= 0:
        raise ValueError("alpha must be positive")
    ids, mu, s, target = _box_arrays(panel, metric)
    seg = segments.set_index("customer_id")["segment"].reindex(ids)
    if seg.isna().any():
        raise DataError(f"missing segment for customer {seg[seg.isna()].index[0]}")
    alpha = np.where(seg.to_numpy() == "FB", alpha_fb, alpha_ib)
    lower = mu - alpha * s
    flag = target < lower
    scoreable = mu > 0
    labels = pd.DataFrame(
        {
            "customer_id": ids.to_numpy(),
            "metric": metric.upper(),
            "is_downward": pd.array(np.where(scoreable, flag, False), dtype="boolean"),
            "lower_bound": lower,
            "target_value": target,
        }
    )
    labels.loc[~scoreable, "is_downward"] = pd.NA
    n = int(scoreable.sum())
    rate = float(flag[scoreable].sum() / n) if n else 0.0
    return labels, rate


def event_rate_curve(panel: pd.DataFrame, metric: str, segment: str, segments: pd.DataFrame, grid=ALPHA_GRID):
    """Event rate of one segment for every alpha on ``grid``."""
    metric = _check_metric(metric)
    ids, mu, s, target = _box_arrays(panel, metric)
    seg = segments.set_index("customer_id")["segment"].reindex(ids).to_numpy()
    sel = (seg == segment) & (mu > 0)
    if not sel.any():
        raise DataError(f"no scoreable customers in segment {segment}")
    mu, s, target = mu[sel], s[sel], target[sel]
    if np.all(s == 0):
        raise DataError("degenerate panel: every history has zero spread")
    grid = np.asarray(grid, dtype=float)
    flags = target[None, :] < (mu[None, :] - grid[:, None] * s[None, :])
    return flags.mean(axis=1)


def tune_alpha(panel, metric, segment, target_rate, segments, grid=ALPHA_GRID) -> float:
    """Grid alpha whose event rate is closest to ``target_rate`` (ties to the smaller alpha)."""
    if not 0.0 < target_rate <= 1.0:
        raise ValueError("target_rate must lie in (0, 1]")
    rates = event_rate_curve(panel, metric, segment, segments, grid)
    best = int(np.argmin(np.abs(rates - target_rate)))  # first minimum = smallest alpha
    return float(np.asarray(grid)[best])
