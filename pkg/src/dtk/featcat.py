"""Feature catalog: recent-to-year ratios, purchase-gap statistics, below-std
flags, activity counts, BCE recency/defect rates and a country code.

Every feature is computed as of a cut-off date and reads only records dated
strictly before it.  Values that are undefined for a customer (empty
denominators, too few purchase days, no defect ever) are replaced by a
documented sentinel and flagged in the missing mask.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .data import N_HISTORY, build_monthly_panel, panel_matrix, Window, write_csv

FAMILIES = (
    "ratio_recent_to_year",
    "gap_stat",
    "below_std_flag",
    "count",
    "bce_recency",
    "bce_rate",
    "categorical",
)
NO_DEFECT_SENTINEL = 9999.0
YEAR_DAYS = 365


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown feature family {self.family!r}")
        p = self.params
        if self.family == "ratio_recent_to_year":
            if p.get("k_days") not in (30, 60, 90, 180, 365) or p.get("metric") not in ("gmv", "bi", "tx", "pd"):
                raise ValueError(f"bad parameters for {self.name}: {p}")
        elif self.family == "gap_stat":
            if p.get("statistic") not in ("mean", "median", "std", "recency") or p.get("window_days") not in (30, 365):
                raise ValueError(f"bad parameters for {self.name}: {p}")
        elif self.family == "below_std_flag":
            if p.get("window_months") not in (1, 2, 3) or not p.get("q", 0) > 0 or p.get("metric") not in ("gmv", "bi", "pd"):
                raise ValueError(f"bad parameters for {self.name}: {p}")
        elif self.family == "count":
            if p.get("metric") not in ("gmv", "bi", "tx", "pd", "bce"):
                raise ValueError(f"bad parameters for {self.name}: {p}")
        elif self.family == "bce_recency":
            if p.get("anchor", "days") not in ("days", "purchase_days"):
                raise ValueError(f"bad parameters for {self.name}: {p}")
        elif self.family == "bce_rate":
            if p.get("k_days") not in (7, 30, 90, 365):
                raise ValueError(f"bad parameters for {self.name}: {p}")

    def to_dict(self):
        return {"name": self.name, "family": self.family, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d["family"], dict(d.get("params", {})))


def default_catalog() -> list[FeatureSpec]:
    """The full candidate catalog (every family over its parameter grid)."""
    cat = []
    for metric in ("gmv", "bi", "tx"):
        for k in (30, 60, 90, 180):
            cat.append(FeatureSpec(f"{metric}_ratio_{k}d", "ratio_recent_to_year", {"metric": metric, "k_days": k}))
    for win, tag in ((365, "1y"), (30, "last_month")):
        for stat in ("mean", "median", "std"):
            cat.append(FeatureSpec(f"gap_{stat}_{tag}", "gap_stat", {"statistic": stat, "window_days": win}))
    cat.append(FeatureSpec("days_since_last_purchase", "gap_stat", {"statistic": "recency", "window_days": 365}))
    for metric, q in (("gmv", 0.75), ("bi", 1.0), ("pd", 1.0)):
        for w in (1, 2, 3):
            cat.append(FeatureSpec(f"{metric}_below_std_{w}m", "below_std_flag", {"metric": metric, "window_months": w, "q": q}))
    for metric in ("pd", "bi", "tx", "gmv"):
        cat.append(FeatureSpec(f"{metric}_count_1y", "count", {"metric": metric}))
    cat.append(FeatureSpec("days_since_last_defect", "bce_recency", {}))
    cat.append(FeatureSpec("purchase_days_since_last_defect", "bce_recency", {"anchor": "purchase_days"}))
    for k, tag in ((7, "7d"), (30, "30d"), (365, "1y")):
        cat.append(FeatureSpec(f"defect_rate_{tag}", "bce_rate", {"k_days": k}))
    cat.append(FeatureSpec("bce_count_1y", "count", {"metric": "bce"}))
    cat.append(FeatureSpec("country", "categorical", {}))
    return cat


# Features of the spy-EM look-alike model: BCE history plus recent behaviour.
# purchase_days_since_last_defect is left out: it is 0 for every golden member
# by construction, so it would teach the selection rule instead of suffering.
SPYEM_FEATURES = [
    "days_since_last_defect",
    "days_since_last_purchase",
    "defect_rate_7d",
    "defect_rate_30d",
    "defect_rate_1y",
    "bce_count_1y",
    "gmv_ratio_30d",
    "gmv_ratio_90d",
    "tx_ratio_30d",
    "gmv_below_std_1m",
    "gmv_below_std_2m",
    "pd_count_1y",
    "gap_mean_last_month",
]


def catalog_by_name(names) -> list[FeatureSpec]:
    lookup = {s.name: s for s in default_catalog()}
    missing = [n for n in names if n not in lookup]
    if missing:
        raise KeyError(f"unknown features {missing}")
    return [lookup[n] for n in names]


@dataclass
class FeatureMatrix:
    customer_ids: np.ndarray
    names: list
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.values).all():
            raise ValueError("feature values must be finite")

    def __len__(self):
        return len(self.customer_ids)

    def to_frame(self) -> pd.DataFrame:
        """``customer_id``, the feature columns, then one ``<name>_mask`` column each."""
        df = pd.DataFrame(self.values, columns=self.names)
        df.insert(0, "customer_id", self.customer_ids)
        for j, name in enumerate(self.names):
            df[f"{name}_mask"] = self.mask[:, j].astype(int)
        return df

    def model_input(self) -> pd.DataFrame:
        """Features indexed by customer with masked cells set to NaN."""
        vals = np.where(self.mask, np.nan, self.values)
        return pd.DataFrame(vals, columns=self.names, index=pd.Index(self.customer_ids, name="customer_id"))

    def select(self, names) -> "FeatureMatrix":
        idx = [self.names.index(n) for n in names]
        return FeatureMatrix(self.customer_ids, list(names), self.values[:, idx], self.mask[:, idx])

    def rows(self, customer_ids) -> "FeatureMatrix":
        pos = pd.Index(self.customer_ids).get_indexer(customer_ids)
        if (pos < 0).any():
            raise KeyError("unknown customer ids")
        return FeatureMatrix(self.customer_ids[pos], list(self.names), self.values[pos], self.mask[pos])

    def write(self, path):
        write_csv(self.to_frame(), path, float_format="%.10g")

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "FeatureMatrix":
        names = [c for c in df.columns if c != "customer_id" and not c.endswith("_mask")]
        mask_cols = [f"{n}_mask" for n in names]
        mask = df[mask_cols].to_numpy().astype(bool) if all(c in df for c in mask_cols) else np.zeros((len(df), len(names)), bool)
        return cls(df["customer_id"].astype(str).to_numpy(), names, df[names].to_numpy(dtype=float), mask)

    @classmethod
    def read(cls, path) -> "FeatureMatrix":
        return cls.from_frame(pd.read_csv(path, dtype={"customer_id": str}))


# ---------------------------------------------------------------------------
# Single-customer reference operations


def _days_before(dates, as_of):
    return (pd.Timestamp(as_of) - pd.DatetimeIndex(dates)).days.to_numpy()


def ratio_recent_to_year(transactions, customer, metric, k_days, as_of):
    """Metric total over the last ``k_days`` divided by the total over the last year.

    Returns ``(ratio, masked)``; a zero denominator yields ``(0.0, True)``.
    """
    tx = transactions[transactions["customer_id"] == customer]
    age = _days_before(tx["date"], as_of)
    year = (age >= 1) & (age <= YEAR_DAYS)
    recent = (age >= 1) & (age <= k_days)
    if metric == "gmv":
        col = tx["amount"].to_numpy(dtype=float)
        num, den = col[recent].sum(), col[year].sum()
    elif metric == "bi":
        col = tx["item_count"].to_numpy(dtype=float)
        num, den = col[recent].sum(), col[year].sum()
    elif metric == "tx":
        num, den = float(recent.sum()), float(year.sum())
    elif metric == "pd":
        d = tx["date"].to_numpy()
        num, den = float(len(np.unique(d[recent]))), float(len(np.unique(d[year])))
    else:
        raise ValueError(f"unknown metric {metric!r}")
    if den == 0:
        return 0.0, True
    return float(num / den), False


def gap_statistics(purchase_days):
    """Mean, median and sample std of the gaps between successive purchase days.

    ``purchase_days`` are sorted distinct day numbers (or dates).  Fewer than two
    days gives ``(0, 0, 0)`` and ``masked=True``; one gap has std 0.
    """
    days = np.asarray(purchase_days)
    if days.dtype.kind == "M":
        days = days.astype("datetime64[D]").astype(np.int64)
    if len(days) < 2:
        return (0.0, 0.0, 0.0), True
    gaps = np.diff(days.astype(float))
    std = float(gaps.std(ddof=1)) if len(gaps) > 1 else 0.0
    return (float(gaps.mean()), float(np.median(gaps)), std), False


def below_std_flag(history, window_months, q) -> bool:
    h = np.asarray(history, dtype=float)
    if h.shape != (N_HISTORY,):
        raise ValueError("history must hold 12 monthly values")
    if window_months not in (1, 2, 3) or q <= 0:
        raise ValueError("window_months must be 1, 2 or 3 and q positive")
    ref = h[: N_HISTORY - window_months]
    return bool(h[N_HISTORY - window_months:].mean() < ref.mean() - q * ref.std(ddof=1))


def bce_features(bce_events, transactions, customer, as_of):
    """``(days_since_last_defect, defect_rate_7d, defect_rate_1y, bce_count_1y)`` and their masks.

    Defect rates count every BCE type except ``late_delivery`` and divide by
    the number of transactions in the same window.
    """
    ev = bce_events[bce_events["customer_id"] == customer]
    tx = transactions[transactions["customer_id"] == customer]
    age = _days_before(ev["date"], as_of)
    past = age >= 1
    tx_age = _days_before(tx["date"], as_of)
    if past.any():
        since, since_mask = float(age[past].min()), False
    else:
        since, since_mask = NO_DEFECT_SENTINEL, True
    not_late = (ev["bce_type"] != "late_delivery").to_numpy()
    rates, masks = [], []
    for k in (7, YEAR_DAYS):
        n_tx = int(((tx_age >= 1) & (tx_age <= k)).sum())
        n_def = int((past & (age <= k) & not_late).sum())
        rates.append(n_def / n_tx if n_tx else 0.0)
        masks.append(n_tx == 0)
    count = float((past & (age <= YEAR_DAYS)).sum())
    return (since, rates[0], rates[1], count), (since_mask, masks[0], masks[1], False)


# ---------------------------------------------------------------------------
# Vectorised matrix construction


class _Context:
    def __init__(self, transactions, bce, customer_ids, as_of, countries):
        self.as_of = pd.Timestamp(as_of).normalize()
        self.ids = pd.Index(customer_ids)
        tx = transactions[transactions["date"] < self.as_of]
        self.tx_before = tx
        tx = tx.assign(age=(self.as_of - tx["date"]).dt.days)
        self.tx = tx[tx["age"] <= YEAR_DAYS]
        ev = bce[bce["date"] < self.as_of]
        self.bce = ev.assign(age=(self.as_of - ev["date"]).dt.days)
        self.countries = countries
        self._cache = {}

    def per_customer(self, series, fill=0.0):
        return series.reindex(self.ids, fill_value=fill).to_numpy(dtype=float)

    def window_sum(self, metric, k):
        key = ("sum", metric, k)
        if key not in self._cache:
            tx = self.tx[self.tx["age"] <= k]
            g = tx.groupby("customer_id")
            if metric == "gmv":
                s = g["amount"].sum()
            elif metric == "bi":
                s = g["item_count"].sum()
            elif metric == "tx":
                s = g.size()
            else:
                s = g["date"].nunique()
            self._cache[key] = self.per_customer(s)
        return self._cache[key]

    def purchase_days(self):
        if "days" not in self._cache:
            d = self.tx[["customer_id", "age"]].drop_duplicates().sort_values(["customer_id", "age"], ascending=[True, False])
            self._cache["days"] = d
        return self._cache["days"]

    def gaps(self, window_days):
        key = ("gaps", window_days)
        if key not in self._cache:
            d = self.purchase_days()
            same = d["customer_id"].to_numpy()[1:] == d["customer_id"].to_numpy()[:-1]
            age = d["age"].to_numpy()
            gap = age[:-1] - age[1:]
            later_age = age[1:]
            keep = same & (later_age <= window_days)
            self._cache[key] = pd.DataFrame({"customer_id": d["customer_id"].to_numpy()[1:][keep], "gap": gap[keep].astype(float)})
        return self._cache[key]

    def history(self, metric):
        key = ("hist", metric)
        if key not in self._cache:
            window = Window(str(pd.Period(self.as_of, freq="M")))
            tx = self.tx_before[self.tx_before["date"] >= window.start]
            panel = build_monthly_panel(tx, window, customers=self.ids)
            wide = panel_matrix(panel, metric).reindex(self.ids)
            self._cache[key] = wide.loc[:, list(range(N_HISTORY))].to_numpy(dtype=float)
        return self._cache[key]


def _compute(spec: FeatureSpec, ctx: _Context):
    n = len(ctx.ids)
    p = spec.params
    fam = spec.family
    if fam == "ratio_recent_to_year":
        num = ctx.window_sum(p["metric"], p["k_days"])
        den = ctx.window_sum(p["metric"], YEAR_DAYS)
        mask = den == 0
        return np.where(mask, 0.0, num / np.where(mask, 1.0, den)), mask
    if fam == "gap_stat" and p["statistic"] == "recency":
        d = ctx.purchase_days()
        vals = ctx.per_customer(d[d["age"] <= p["window_days"]].groupby("customer_id")["age"].min(), fill=np.nan)
        mask = np.isnan(vals)
        return np.where(mask, NO_DEFECT_SENTINEL, vals), mask
    if fam == "gap_stat":
        g = ctx.gaps(p["window_days"]).groupby("customer_id")["gap"]
        stat = p["statistic"]
        if stat == "mean":
            s = g.mean()
        elif stat == "median":
            s = g.median()
        else:
            s = g.std(ddof=1).fillna(0.0)
        vals = ctx.per_customer(s, fill=np.nan)
        mask = np.isnan(vals)
        return np.where(mask, 0.0, vals), mask
    if fam == "below_std_flag":
        h = ctx.history(p["metric"])
        w, q = p["window_months"], p["q"]
        ref = h[:, : N_HISTORY - w]
        flag = h[:, N_HISTORY - w:].mean(axis=1) < ref.mean(axis=1) - q * ref.std(axis=1, ddof=1)
        return flag.astype(float), np.zeros(n, bool)
    if fam == "count":
        if p["metric"] == "bce":
            ev = ctx.bce[ctx.bce["age"] <= YEAR_DAYS]
            return ctx.per_customer(ev.groupby("customer_id").size()), np.zeros(n, bool)
        return ctx.window_sum(p["metric"], YEAR_DAYS), np.zeros(n, bool)
    if fam == "bce_recency":
        last = ctx.per_customer(ctx.bce.groupby("customer_id")["age"].min(), fill=np.nan)
        mask = np.isnan(last)
        if p.get("anchor", "days") == "days":
            return np.where(mask, NO_DEFECT_SENTINEL, last), mask
        d = ctx.purchase_days()
        last_age = pd.Series(last, index=ctx.ids).reindex(d["customer_id"]).to_numpy()
        after = d[d["age"].to_numpy() < last_age]
        return np.where(mask, 0.0, ctx.per_customer(after.groupby("customer_id").size())), mask
    if fam == "bce_rate":
        k = p["k_days"]
        ev = ctx.bce[(ctx.bce["age"] <= k) & (ctx.bce["bce_type"] != "late_delivery")]
        num = ctx.per_customer(ev.groupby("customer_id").size())
        den = ctx.window_sum("tx", k)
        mask = den == 0
        return np.where(mask, 0.0, num / np.where(mask, 1.0, den)), mask
    if fam == "categorical":
        country = ctx.countries.set_index("customer_id")["country"].reindex(ctx.ids).fillna("")
        freq = country.value_counts()
        ranked = sorted(freq.index, key=lambda c: (-freq[c], c))
        code = {c: float(i) for i, c in enumerate(ranked)}
        return country.map(code).to_numpy(dtype=float), np.zeros(n, bool)
    raise ValueError(f"unknown family {fam}")


def build_feature_matrix(transactions, bce, customers, catalog, as_of, customer_ids=None) -> FeatureMatrix:
    """One row per customer, one column per catalog entry, in catalog order."""
    catalog = list(catalog)
    if not catalog:
        raise ValueError("feature catalog is empty")
    names = [s.name for s in catalog]
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise ValueError(f"duplicate feature name {dup!r}")
    if customer_ids is None:
        customer_ids = customers["customer_id"].to_numpy()
    ids = np.asarray(sorted(customer_ids), dtype=object)
    ctx = _Context(transactions, bce, ids, as_of, customers)
    values = np.empty((len(ids), len(catalog)))
    mask = np.zeros((len(ids), len(catalog)), bool)
    for j, spec in enumerate(catalog):
        values[:, j], mask[:, j] = _compute(spec, ctx)
    return FeatureMatrix(ids, names, values, mask)


def write_catalog(catalog) -> list:
    return [s.to_dict() for s in catalog]


def read_catalog(items) -> list[FeatureSpec]:
    return [FeatureSpec.from_dict(d) for d in items]
