"""Independent reference implementations used by the tests.

Each oracle is deliberately naive (loops, exact arithmetic, brute force) and
shares no code with the package.
"""
from __future__ import annotations

import datetime as dt
import math
from collections import defaultdict

import mpmath
import numpy as np

mpmath.mp.dps = 50


# -- aggregation ---------------------------------------------------------------


def month_offset(date: dt.date, target: str) -> int:
    y, m = (int(v) for v in target.split("-"))
    return (date.year - y) * 12 + (date.month - m) + 12


def brute_panel(rows, target: str, ids):
    """rows: (customer, date, amount, items) tuples -> {(cust, month): (gmv, bi, pd)}."""
    gmv, bi, days = defaultdict(float), defaultdict(int), defaultdict(set)
    for cust, date, amount, items in rows:
        k = (cust, month_offset(date, target))
        gmv[k] += amount
        bi[k] += items
        days[k].add(date)
    return {(c, m): (gmv[(c, m)], bi[(c, m)], len(days[(c, m)])) for c in ids for m in range(13)}


# -- norm box -------------------------------------------------------------------


def mp_mean_std(values):
    """Mean and sample standard deviation in 50-digit arithmetic."""
    xs = [mpmath.mpf(repr(float(v))) for v in values]
    n = len(xs)
    mu = mpmath.fsum(xs) / n
    var = mpmath.fsum((x - mu) ** 2 for x in xs) / (n - 1)
    return mu, mpmath.sqrt(var)


def mp_is_downward(history, next_value, alpha):
    mu, s = mp_mean_std(history)
    return mpmath.mpf(repr(float(next_value))) < mu - mpmath.mpf(repr(float(alpha))) * s


# -- metrics --------------------------------------------------------------------


def pair_count_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def _candidate_thresholds(scores):
    return [math.inf] + sorted(set(scores), reverse=True)


def enum_max_f_beta(scores, labels, beta=1.0):
    """Exhaustive scan of "positive iff score >= t"; ties keep the larger t."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    best = None
    b2 = beta * beta
    for t in _candidate_thresholds(s.tolist()):
        pred = s >= t
        tp = int(np.sum(pred & (y == 1)))
        fp = int(np.sum(pred & (y == 0)))
        fn = int(np.sum(~pred & (y == 1)))
        den = (1 + b2) * tp + b2 * fn + fp
        f = (1 + b2) * tp / den if den else 0.0
        if best is None or f > best[1]:
            best = (t, f)
    return best


def enum_max_min_accuracy(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    best = None
    for t in _candidate_thresholds(s.tolist()):
        pred = s >= t
        tpr = int(np.sum(pred & (y == 1))) / n_pos
        tnr = int(np.sum(~pred & (y == 0))) / n_neg
        v = min(tpr, tnr)
        if best is None or v > best[1]:
            best = (t, v)
    return best


def mp_log_loss(scores, labels, clip=1e-12):
    total = mpmath.mpf(0)
    for s, y in zip(scores, labels):
        p = min(max(mpmath.mpf(repr(float(s))), mpmath.mpf(clip)), 1 - mpmath.mpf(clip))
        total -= mpmath.log(p) if y == 1 else mpmath.log(1 - p)
    return total / len(scores)


def sort_slice_deciles(scores, ids, n_buckets=10):
    """Sort ascending by (score, id) and slice at the quantile positions ceil(b n / k)."""
    order = sorted(range(len(scores)), key=lambda i: (scores[i], ids[i]))
    n = len(scores)
    cuts = [math.ceil(b * n / n_buckets) for b in range(n_buckets + 1)]
    out = [0] * n
    for b in range(n_buckets):
        for i in order[cuts[b]:cuts[b + 1]]:
            out[i] = b + 1
    return out


# -- gbdt -----------------------------------------------------------------------


def stump_oracle(X, y, min_samples_leaf=1):
    """Best depth-1 split on gradients at the base rate; ``(feature, threshold, gain)``.

    Gain is the reduction of the squared-gradient sum of squares,
    SL^2/nL + SR^2/nR - S^2/n.  Ties keep the lowest feature, then the lowest
    threshold.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    p0 = y.mean()
    r = [float(v) - p0 for v in y]
    n = len(r)
    S = sum(r)
    best = None
    for j in range(X.shape[1]):
        vals = sorted(set(X[:, j].tolist()))
        for lo, hi in zip(vals[:-1], vals[1:]):
            t = lo + (hi - lo) / 2.0
            left = [r[i] for i in range(n) if X[i, j] <= t]
            right = [r[i] for i in range(n) if X[i, j] > t]
            if len(left) < min_samples_leaf or len(right) < min_samples_leaf:
                continue
            gain = sum(left) ** 2 / len(left) + sum(right) ** 2 / len(right) - S * S / n
            if best is None or gain > best[2] + 1e-12 * max(1.0, abs(best[2])):
                best = (j, t, gain)
    return best


def walk_tree(node: dict, row: dict) -> float:
    """Follow a serialized tree for one row given as {feature: value}."""
    while "leaf" not in node:
        v = row[node["feature"]]
        if v != v:
            go_left = node["missing"] == "left"
        else:
            go_left = v <= node["threshold"]
        node = node["left"] if go_left else node["right"]
    return node["leaf"]


def tree_walk_proba(doc: dict, rows: list[dict]) -> list[float]:
    out = []
    for row in rows:
        f = doc["initial_score"] + sum(doc["learning_rate"] * walk_tree(t, row) for t in doc["trees"])
        out.append(1.0 / (1.0 + math.exp(-f)))
    return out


def gain_sums(doc: dict) -> dict:
    sums = defaultdict(float)

    def visit(node):
        if "leaf" in node:
            return
        sums[node["feature"]] += node["gain"]
        visit(node["left"])
        visit(node["right"])

    for t in doc["trees"]:
        visit(t)
    return dict(sums)


# -- causal ---------------------------------------------------------------------


def naive_dcov_sq(x, y):
    """Squared V-statistic distance covariance from double-centred distance matrices."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a = np.abs(x[:, None] - x[None, :])
    b = np.abs(y[:, None] - y[None, :])
    A = a - a.mean(axis=0)[None, :] - a.mean(axis=1)[:, None] + a.mean()
    B = b - b.mean(axis=0)[None, :] - b.mean(axis=1)[:, None] + b.mean()
    return float((A * B).mean())


def naive_dcor(x, y):
    v = naive_dcov_sq(x, y)
    d = math.sqrt(naive_dcov_sq(x, x) * naive_dcov_sq(y, y))
    return 0.0 if d <= 0 else math.sqrt(max(v, 0.0) / d)


# -- features -------------------------------------------------------------------


def days_before(date, as_of) -> int:
    return (as_of - date).days


def scalar_features(tx_rows, bce_rows, as_of: dt.date) -> dict:
    """Per-customer reference values of the rate, gap, recency and BCE features.

    tx_rows: (date, amount, items); bce_rows: (date, bce_type).
    Only events 1..365 days before ``as_of`` count.
    """
    tx = [(d, a, i) for d, a, i in tx_rows if 1 <= days_before(d, as_of) <= 365]
    ev = [(d, t) for d, t in bce_rows if days_before(d, as_of) >= 1]
    out = {}
    for metric in ("gmv", "bi", "tx"):
        for k in (30, 60, 90, 180):
            def val(row):
                return row[1] if metric == "gmv" else row[2] if metric == "bi" else 1

            num = sum(val(r) for r in tx if days_before(r[0], as_of) <= k)
            den = sum(val(r) for r in tx)
            out[f"{metric}_ratio_{k}d"] = (num / den if den else 0.0, den == 0)
    days = sorted({d for d, _, _ in tx})
    for window, tag in ((365, "1y"), (30, "last_month")):
        gaps = [(b - a).days for a, b in zip(days[:-1], days[1:]) if days_before(b, as_of) <= window]
        if gaps:
            mean = sum(gaps) / len(gaps)
            srt = sorted(gaps)
            mid = len(srt) // 2
            median = srt[mid] if len(srt) % 2 else (srt[mid - 1] + srt[mid]) / 2
            std = math.sqrt(sum((g - mean) ** 2 for g in gaps) / (len(gaps) - 1)) if len(gaps) > 1 else 0.0
            vals, masked = (mean, median, std), False
        else:
            vals, masked = (0.0, 0.0, 0.0), True
        for name, v in zip(("mean", "median", "std"), vals):
            out[f"gap_{name}_{tag}"] = (v, masked)
    out["days_since_last_purchase"] = (float(days_before(days[-1], as_of)), False) if days else (9999.0, True)
    out["pd_count_1y"] = (float(len(days)), False)
    out["tx_count_1y"] = (float(len(tx)), False)
    out["gmv_count_1y"] = (sum(a for _, a, _ in tx), False)
    out["bi_count_1y"] = (float(sum(i for _, _, i in tx)), False)
    if ev:
        last = min(days_before(d, as_of) for d, _ in ev)
        out["days_since_last_defect"] = (float(last), False)
        after = sum(1 for d in days if days_before(d, as_of) < last)
        out["purchase_days_since_last_defect"] = (float(after), False)
    else:
        out["days_since_last_defect"] = (9999.0, True)
        out["purchase_days_since_last_defect"] = (0.0, True)
    for k, tag in ((7, "7d"), (30, "30d"), (365, "1y")):
        n_tx = sum(1 for d, _, _ in tx if days_before(d, as_of) <= k)
        n_def = sum(1 for d, t in ev if days_before(d, as_of) <= k and t != "late_delivery")
        out[f"defect_rate_{tag}"] = (n_def / n_tx if n_tx else 0.0, n_tx == 0)
    out["bce_count_1y"] = (float(sum(1 for d, _ in ev if days_before(d, as_of) <= 365)), False)
    return out


def monthly_history(tx_rows, as_of: dt.date, metric: str):
    """Twelve calendar-month totals before the month of ``as_of``."""
    vals = [0.0] * 12
    for d, a, i in tx_rows:
        k = (d.year - as_of.year) * 12 + (d.month - as_of.month) + 12
        if 0 <= k < 12:
            vals[k] += a if metric == "gmv" else i
    if metric == "pd":
        vals = [0.0] * 12
        for d in {d for d, _, _ in tx_rows}:
            k = (d.year - as_of.year) * 12 + (d.month - as_of.month) + 12
            if 0 <= k < 12:
                vals[k] += 1
    return vals


def below_std(history, w, q):
    ref = history[: 12 - w]
    mu, s = mp_mean_std(ref)
    recent = mpmath.fsum(mpmath.mpf(repr(float(v))) for v in history[12 - w:]) / w
    return bool(recent < mu - mpmath.mpf(repr(float(q))) * s)


# -- frozen reference values ----------------------------------------------------

# scipy.stats.ttest_ind(a, b, equal_var=False) on the samples of
# ``welch_case(k)``, computed once and pasted: (k, t, p, df)
WELCH_FROZEN = [
    (0, 1.641370551057288, 0.11492254168667308, 22.027832883311056),
    (1, -4.127617020764504, 0.00018177276136125035, 39.81229720687548),
    (2, -4.966698898520547, 6.248416406255067e-06, 58.466983993411695),
    (3, 1.723348176420916, 0.1012628695136496, 18.76603226303948),
    (4, -2.5188679661510807, 0.22582444092919174, 1.0779335108823964),
    (5, 1.9328476692833279, 0.10199697872196789, 5.932008159282263),
    (6, 4.7811883546743275, 2.5788506454488666e-05, 38.32956640374221),
    (7, 2.42238889201188, 0.06996552345128838, 4.171046148068635),
    (8, 9.807593728122885, 7.228295452090512e-11, 29.98047192113546),
    (9, 3.518304797153415, 0.024169646971537638, 4.031996497505501),
    (10, -0.05414020395587764, 0.9580629697153372, 8.580414698894378),
    (11, -1.1649270872309552, 0.25325774369880083, 29.90317617353291),
    (12, -0.40360805527579274, 0.6881104176678482, 53.47454895691051),
    (13, -2.9270271425482823, 0.012455291903866668, 12.227472553169939),
    (14, 0.2319072299383205, 0.8175016808213521, 53.08873892905705),
    (15, -1.2723908363207335, 0.2098669954002182, 44.3368478915485),
    (16, -6.921710650354564, 4.364829488367536e-08, 35.670353853705166),
    (17, -0.9551734617393947, 0.34157545273363366, 110.473303191903),
    (18, -5.084166884333035, 4.9278782380356e-06, 53.03502510204864),
    (19, -1.4536622886555064, 0.16587616293489013, 15.58833061013911),
]

# same tool on a = [1..5], b = [6..10]
WELCH_SMALL = (-5.0, 0.001052825793366539, 8.0)


def welch_case(k):
    rng = np.random.default_rng(1000 + k)
    na, nb = int(rng.integers(2, 60)), int(rng.integers(2, 60))
    a = np.round(rng.normal(rng.uniform(-2, 2), rng.uniform(0.2, 3), na), 3)
    b = np.round(rng.normal(rng.uniform(-2, 2), rng.uniform(0.2, 3), nb), 3)
    return a, b
