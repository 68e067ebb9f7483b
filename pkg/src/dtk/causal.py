"""Golden-set construction and the additive-noise causal asymmetry test.

For a pair (X, Y) the response is regressed on the regressor in each
direction and the residuals are tested for independence from the regressor
with a permutation distance-correlation test.  A direction "passes" when
independence cannot be rejected.  X causes Y when Y <- f(X) + e passes and
X <- g(Y) + e fails.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FORWARD = "XtoY"
BACKWARD = "YtoX"
FORWARD_CAUSAL = "ForwardCausal"
BACKWARD_CAUSAL = "BackwardCausal"
INCONCLUSIVE = "Inconclusive"
REPORT_COLUMNS = ["segment", "direction", "n", "coefficient", "statistic", "p_value", "pass", "verdict"]


# ---------------------------------------------------------------------------
# Distance covariance, O(n log n) for one-dimensional samples


@numba.njit(cache=True)
def _cross_sum(x, y, yrank, n_ranks):
    """sum_{i<j} |x_i - x_j| |y_i - y_j| for ``x`` sorted ascending.

    Sweeps in x order; four Fenwick trees over the y ranks hold count, sum x,
    sum y and sum xy of the rows already visited.
    """
    n = x.shape[0]
    size = n_ranks + 1
    cnt = np.zeros(size)
    sx = np.zeros(size)
    sy = np.zeros(size)
    sxy = np.zeros(size)
    tot_c = 0.0
    tot_x = 0.0
    tot_y = 0.0
    tot_xy = 0.0
    acc = 0.0
    for j in range(n):
        xj = x[j]
        yj = y[j]
        r = yrank[j]  # 1-based
        # prefix over ranks < r
        c_lo = 0.0
        x_lo = 0.0
        y_lo = 0.0
        xy_lo = 0.0
        k = r - 1
        while k > 0:
            c_lo += cnt[k]
            x_lo += sx[k]
            y_lo += sy[k]
            xy_lo += sxy[k]
            k -= k & (-k)
        # prefix over ranks <= r
        c_le = 0.0
        x_le = 0.0
        y_le = 0.0
        xy_le = 0.0
        k = r
        while k > 0:
            c_le += cnt[k]
            x_le += sx[k]
            y_le += sy[k]
            xy_le += sxy[k]
            k -= k & (-k)
        c_hi = tot_c - c_le
        x_hi = tot_x - x_le
        y_hi = tot_y - y_le
        xy_hi = tot_xy - xy_le
        acc += xj * yj * c_lo - xj * y_lo - yj * x_lo + xy_lo
        acc += xj * y_hi - xj * yj * c_hi - xy_hi + yj * x_hi
        k = r
        while k < size:
            cnt[k] += 1.0
            sx[k] += xj
            sy[k] += yj
            sxy[k] += xj * yj
            k += k & (-k)
        tot_c += 1.0
        tot_x += xj
        tot_y += yj
        tot_xy += xj * yj
    return acc


@numba.njit(cache=True)
def _perm_cross_sums(x, y, yrank, n_ranks, perms):
    out = np.empty(perms.shape[0])
    for b in range(perms.shape[0]):
        p = perms[b]
        out[b] = _cross_sum(x, y[p], yrank[p], n_ranks)
    return out


def _row_sums(v):
    """sum_j |v_i - v_j| for every i, via sorting."""
    order = np.argsort(v, kind="stable")
    s = v[order]
    n = len(s)
    csum = np.cumsum(s)
    total = csum[-1] if n else 0.0
    k = np.arange(n)
    before = s * k - (csum - s)
    after = (total - csum) - s * (n - k - 1)
    out = np.empty(n)
    out[order] = before + after
    return out


def _dense_rank(v):
    _, inv = np.unique(v, return_inverse=True)
    return inv.astype(np.int64) + 1, int(inv.max(initial=-1)) + 1


class _DcovPrep:
    """Quantities of the V-statistic that do not change under permuting y."""

    def __init__(self, x, y):
        x = np.asarray(x, float) - np.mean(x)
        y = np.asarray(y, float) - np.mean(y)
        self.n = n = len(x)
        order = np.argsort(x, kind="stable")
        self.xs = np.ascontiguousarray(x[order])
        self.y = np.ascontiguousarray(y[order])
        self.yrank, self.n_ranks = _dense_rank(self.y)
        self.a = _row_sums(self.xs)
        self.b = _row_sums(self.y)
        self.s2 = self.a.sum() / n**2 * (self.b.sum() / n**2)

    def v2(self, cross, b=None):
        n = self.n
        b = self.b if b is None else b
        return 2.0 * cross / n**2 + self.s2 - 2.0 * np.dot(self.a, b) / n**3


def distance_covariance_sq(x, y) -> float:
    """Squared sample distance covariance (V-statistic)."""
    prep = _DcovPrep(x, y)
    cross = _cross_sum(prep.xs, prep.y, prep.yrank, prep.n_ranks)
    return float(max(prep.v2(cross), 0.0))


def distance_correlation(x, y) -> float:
    vxy = distance_covariance_sq(x, y)
    den = np.sqrt(distance_covariance_sq(x, x) * distance_covariance_sq(y, y))
    if den <= 0:
        return 0.0
    return float(np.sqrt(max(vxy, 0.0) / den))


def independence_test(residuals, regressor, cl=0.001, n_permutations=2000, seed=0):
    """Permutation distance-correlation test.

    Returns ``(statistic, p_value, passed)`` where ``statistic`` is the
    distance correlation, ``p = (1 + #{perm >= observed}) / (1 + B)`` and
    ``passed`` means independence is not rejected (``p >= cl``).
    """
    e = np.asarray(residuals, dtype=float)
    z = np.asarray(regressor, dtype=float)
    if e.shape != z.shape or e.ndim != 1:
        raise ValueError("residuals and regressor must be 1-D and equally long")
    if len(e) < 30:
        raise ValueError("independence test needs at least 30 observations")
    stat = distance_correlation(z, e)
    if stat == 0.0:
        return 0.0, 1.0, True
    prep = _DcovPrep(z, e)
    observed = prep.v2(_cross_sum(prep.xs, prep.y, prep.yrank, prep.n_ranks))
    rng = np.random.default_rng(seed)
    perms = np.argsort(rng.random((n_permutations, prep.n)), axis=1)
    cross = _perm_cross_sums(prep.xs, prep.y, prep.yrank, prep.n_ranks, perms)
    null = 2.0 * cross / prep.n**2 + prep.s2 - 2.0 * (prep.b[perms] @ prep.a) / prep.n**3
    tol = 1e-12 * max(abs(observed), 1e-300)
    exceed = int(np.sum(null >= observed - tol))
    p = (1 + exceed) / (1 + n_permutations)
    return float(stat), float(p), bool(p >= cl)


# ---------------------------------------------------------------------------
# Directional fits


@dataclass
class DirectionResult:
    direction: str
    coefficient: float
    coefficients: np.ndarray
    residuals: np.ndarray = field(repr=False)
    statistic: float
    p_value: float
    passed: bool
    n: int


def fit_direction(x, y, direction=FORWARD, degree=3, cl=0.001, n_permutations=2000, seed=0) -> DirectionResult:
    """Regress the response on the regressor and test residual independence.

    ``XtoY`` fits ``y = f(x) + e``; ``YtoX`` fits ``x = g(y) + e``.  ``f`` is
    a least-squares polynomial of degree ``min(degree, distinct values - 1)``.
    ``coefficient`` is the plain least-squares slope, kept for reporting.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if direction == FORWARD:
        reg, resp = x, y
    elif direction == BACKWARD:
        reg, resp = y, x
    else:
        raise ValueError(f"unknown direction {direction!r}")
    if len(reg) < 30:
        raise ValueError("need at least 30 observations")
    distinct = len(np.unique(reg))
    if distinct < 2:
        raise ValueError("degenerate regressor: fewer than two distinct values")
    deg = min(degree, distinct - 1)
    mu, sd = reg.mean(), reg.std()
    z = (reg - mu) / sd
    coefs = np.polynomial.polynomial.polyfit(z, resp, deg)
    resid = resp - np.polynomial.polynomial.polyval(z, coefs)
    if np.max(np.abs(resid)) <= 1e-9 * max(1.0, np.std(resp)):
        resid = np.zeros_like(resid)
    slope = float(np.polyfit(reg, resp, 1)[0])
    stat, p, ok = independence_test(resid, reg, cl=cl, n_permutations=n_permutations, seed=seed)
    return DirectionResult(direction, slope, coefs, resid, stat, p, ok, len(reg))


def asymmetry_verdict(forward: DirectionResult, backward: DirectionResult) -> str:
    if forward.passed and not backward.passed:
        return FORWARD_CAUSAL
    if backward.passed and not forward.passed:
        return BACKWARD_CAUSAL
    return INCONCLUSIVE


def test_asymmetry(x, y, cl=0.001, degree=3, n_permutations=2000, seed=0):
    """Fit both directions on one sample; returns ``(forward, backward, verdict)``."""
    fwd = fit_direction(x, y, FORWARD, degree, cl, n_permutations, seed)
    bwd = fit_direction(x, y, BACKWARD, degree, cl, n_permutations, seed)
    return fwd, bwd, asymmetry_verdict(fwd, bwd)


test_asymmetry.__test__ = False  # not a pytest test


# ---------------------------------------------------------------------------
# Golden set and the per-segment causal report


@dataclass
class GoldenSet:
    customer_ids: np.ndarray
    criteria: dict

    def __len__(self):
        return len(self.customer_ids)


def last_purchase_day(transactions, as_of) -> pd.Series:
    tx = transactions[transactions["date"] < pd.Timestamp(as_of)]
    return tx.groupby("customer_id")["date"].max()


def build_golden_set(scores, bce, transactions, as_of, band=(7, 10), bucket_column="ensemble_bucket", reported_only=True) -> GoldenSet:
    """Customers in the high-propensity band with a BCE on their last purchase day.

    ``reported_only`` restricts the qualifying BCE events to reported ones, so
    the seed sample is drawn from customers who spoke up.
    """
    lo, hi = band
    in_band = scores[(scores[bucket_column] >= lo) & (scores[bucket_column] <= hi)]["customer_id"]
    last = last_purchase_day(transactions, as_of)
    ev = bce[bce["date"] < pd.Timestamp(as_of)]
    if reported_only:
        ev = ev[ev["reported"].astype(bool)]
    hit = ev.merge(last.rename("last_day"), left_on="customer_id", right_index=True)
    hit = set(hit.loc[hit["date"] == hit["last_day"], "customer_id"])
    members = np.asarray(sorted(c for c in in_band if c in hit), dtype=object)
    if len(members) == 0:
        logger.warning("golden set is empty")
    criteria = {
        "decile_band": [int(lo), int(hi)],
        "bucket_column": bucket_column,
        "bce_rule": "bce dated on the most recent purchase day before as_of",
        "reported_only": bool(reported_only),
        "as_of": str(pd.Timestamp(as_of).date()),
    }
    return GoldenSet(members, criteria)


def causal_sample(scores, bce, profiles, as_of, bucket_column="ensemble_bucket", band=(7, 10)) -> pd.DataFrame:
    """Per-customer X (BCE count over the past year) and Y (decile) with segment."""
    as_of = pd.Timestamp(as_of)
    ev = bce[(bce["date"] < as_of) & (bce["date"] >= as_of - pd.Timedelta(days=365))]
    counts = ev.groupby("customer_id").size()
    df = scores[["customer_id", bucket_column]].rename(columns={bucket_column: "y"})
    lo, hi = band
    df = df[(df["y"] >= lo) & (df["y"] <= hi)]
    df = df.merge(profiles[["customer_id", "segment"]], on="customer_id", how="left")
    df["x"] = counts.reindex(df["customer_id"]).fillna(0).to_numpy()
    return df[["customer_id", "segment", "x", "y"]].reset_index(drop=True)


def causal_report(sample: pd.DataFrame, cl=0.001, degree=3, n_permutations=2000, seed=0) -> pd.DataFrame:
    """Both directions per segment, in the layout of a two-row-per-segment table.

    A segment too small or too uniform to fit is reported as Inconclusive
    with empty statistics.
    """
    rows = []
    for seg in sorted(sample["segment"].dropna().unique()):
        part = sample[sample["segment"] == seg]
        try:
            fwd, bwd, verdict = test_asymmetry(part["x"], part["y"], cl, degree, n_permutations, seed)
            results = [(r.direction, r.n, r.coefficient, r.statistic, r.p_value, r.passed) for r in (fwd, bwd)]
        except ValueError as exc:
            logger.warning("segment %s skipped: %s", seg, exc)
            verdict = INCONCLUSIVE
            results = [(d, len(part), np.nan, np.nan, np.nan, pd.NA) for d in (FORWARD, BACKWARD)]
        for direction, n, coef, stat, p, ok in results:
            rows.append(
                {
                    "segment": seg,
                    "direction": direction,
                    "n": n,
                    "coefficient": coef,
                    "statistic": stat,
                    "p_value": p,
                    "pass": ok,
                    "verdict": verdict,
                }
            )
    out = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    out["pass"] = out["pass"].astype("boolean")
    return out
