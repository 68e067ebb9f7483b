"""Raw customer records, CSV ingestion and the 13-month activity panel.

All tabular records are carried as pandas DataFrames with fixed column
schemas.  Month indices are relative to a target month: ``0..11`` are the
trailing twelve calendar months and ``12`` is the target month itself.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

N_HISTORY = 12
N_MONTHS = N_HISTORY + 1
BCE_TYPES = ("item_not_received", "not_as_described", "late_delivery", "other")
SEGMENTS = ("FB", "IB")

TRANSACTION_COLUMNS = ["customer_id", "date", "amount", "item_count"]
BCE_COLUMNS = ["customer_id", "date", "bce_type", "reported"]
CUSTOMER_COLUMNS = ["customer_id", "country"]
PANEL_COLUMNS = ["customer_id", "month_index", "gmv", "bi", "pd"]
PROFILE_COLUMNS = ["customer_id", "segment", "country"]


class DataError(ValueError):
    """Raised when an input file or record violates its schema."""


@dataclass(frozen=True)
class Window:
    """Observation window anchored at a target month (``"YYYY-MM"``)."""

    target_month: str

    def __post_init__(self):
        try:
            pd.Period(self.target_month, freq="M")
        except ValueError as exc:
            raise DataError(f"bad target_month {self.target_month!r}") from exc

    @property
    def target(self) -> pd.Period:
        return pd.Period(self.target_month, freq="M")

    @property
    def as_of(self) -> pd.Timestamp:
        """First day of the target month; features only see dates before it."""
        return self.target.start_time.normalize()

    @property
    def start(self) -> pd.Timestamp:
        return (self.target - N_HISTORY).start_time.normalize()

    @property
    def end(self) -> pd.Timestamp:
        """Exclusive end of the window (first day after the target month)."""
        return (self.target + 1).start_time.normalize()

    def month_start(self, month_index: int) -> pd.Timestamp:
        return (self.target - N_HISTORY + month_index).start_time.normalize()

    def month_index(self, dates) -> np.ndarray:
        d = pd.DatetimeIndex(dates)
        t = self.target
        return ((d.year - t.year) * 12 + (d.month - t.month) + N_HISTORY).to_numpy()


def _parse_frame(path, columns, kind) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{kind} file not found: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    return df[columns]


def _bad_line(mask) -> int:
    # header is line 1
    return int(np.flatnonzero(mask)[0]) + 2


def _parse_dates(col: pd.Series, path) -> pd.Series:
    dates = pd.to_datetime(col, format="%Y-%m-%d", errors="coerce")
    if dates.isna().any():
        line = _bad_line(dates.isna().to_numpy())
        raise DataError(f"{path}: bad date at line {line}")
    return dates


def _parse_numeric(col: pd.Series, path, what) -> pd.Series:
    vals = pd.to_numeric(col, errors="coerce")
    if vals.isna().any():
        raise DataError(f"{path}: malformed {what} at line {_bad_line(vals.isna().to_numpy())}")
    return vals


def read_transactions(path) -> pd.DataFrame:
    raw = _parse_frame(path, TRANSACTION_COLUMNS, "transactions")
    if (raw["customer_id"] == "").any():
        raise DataError(f"{path}: empty customer_id at line {_bad_line(raw['customer_id'] == '')}")
    amount = _parse_numeric(raw["amount"], path, "amount")
    if (amount < 0).any():
        raise DataError(f"negative amount at line {_bad_line((amount < 0).to_numpy())}")
    items = _parse_numeric(raw["item_count"], path, "item_count")
    bad = (items < 1) | (items != np.floor(items))
    if bad.any():
        raise DataError(f"{path}: item_count must be a positive integer at line {_bad_line(bad.to_numpy())}")
    df = pd.DataFrame(
        {
            "customer_id": raw["customer_id"].astype(str),
            "date": _parse_dates(raw["date"], path),
            "amount": amount.astype(float).round(2),
            "item_count": items.astype(np.int64),
        }
    )
    return sort_records(df)


def read_bce(path) -> pd.DataFrame:
    raw = _parse_frame(path, BCE_COLUMNS, "bce")
    unknown = ~raw["bce_type"].isin(BCE_TYPES)
    if unknown.any():
        value = raw["bce_type"][unknown].iloc[0]
        raise DataError(f"{path}: unknown bce_type {value!r} at line {_bad_line(unknown.to_numpy())}")
    bad = ~raw["reported"].isin(["0", "1"])
    if bad.any():
        raise DataError(f"{path}: reported must be 0 or 1 at line {_bad_line(bad.to_numpy())}")
    df = pd.DataFrame(
        {
            "customer_id": raw["customer_id"].astype(str),
            "date": _parse_dates(raw["date"], path),
            "bce_type": raw["bce_type"].astype(str),
            "reported": raw["reported"].astype(int).astype(bool),
        }
    )
    return sort_records(df)


def read_customers(path) -> pd.DataFrame:
    raw = _parse_frame(path, CUSTOMER_COLUMNS, "customers")
    if raw["customer_id"].duplicated().any():
        raise DataError(f"{path}: duplicate customer_id at line {_bad_line(raw['customer_id'].duplicated().to_numpy())}")
    return raw.sort_values("customer_id", kind="stable").reset_index(drop=True)


def sort_records(df: pd.DataFrame) -> pd.DataFrame:
    return df.sort_values(["customer_id", "date"], kind="stable").reset_index(drop=True)


def load_dataset(paths):
    """Read ``transactions.csv``, ``bce.csv`` and ``customers.csv``.

    ``paths`` is either a directory holding the three files or a mapping with
    keys ``transactions``, ``bce`` and ``customers``.  Returns the three
    frames, each sorted by ``(customer_id, date)``.
    """
    if isinstance(paths, (str, Path)):
        root = Path(paths)
        paths = {k: root / f"{k}.csv" for k in ("transactions", "bce", "customers")}
    tx = read_transactions(paths["transactions"])
    bce = read_bce(paths["bce"])
    customers = read_customers(paths["customers"])
    logger.info("loaded %d transactions, %d bce events, %d customers", len(tx), len(bce), len(customers))
    return tx, bce, customers


def check_window(df: pd.DataFrame, window: Window, what="transaction"):
    if len(df) == 0:
        return
    outside = (df["date"] < window.start) | (df["date"] >= window.end)
    if outside.any():
        row = df[outside].iloc[0]
        raise DataError(
            f"{what} for {row['customer_id']} dated {row['date'].date()} is outside "
            f"the window {window.start.date()}..{(window.end - pd.Timedelta(days=1)).date()}"
        )


def build_monthly_panel(transactions: pd.DataFrame, window: Window, customers=None) -> pd.DataFrame:
    """Aggregate transactions into one row per (customer, month).

    Months without purchases get explicit zero rows, so every customer has
    exactly 13 rows.  ``customers`` optionally lists ids that must appear even
    with no transactions at all.
    """
    check_window(transactions, window)
    ids = pd.Index(transactions["customer_id"].unique())
    if customers is not None:
        ids = ids.union(pd.Index(customers))
    ids = ids.sort_values()

    tx = transactions.assign(month_index=window.month_index(transactions["date"]))
    agg = tx.groupby(["customer_id", "month_index"]).agg(
        gmv=("amount", "sum"), bi=("item_count", "sum"), pd=("date", "nunique")
    )
    full = pd.MultiIndex.from_product([ids, range(N_MONTHS)], names=["customer_id", "month_index"])
    panel = agg.reindex(full, fill_value=0).reset_index()
    panel["gmv"] = panel["gmv"].astype(float)
    panel["bi"] = panel["bi"].astype(np.int64)
    panel["pd"] = panel["pd"].astype(np.int64)
    return panel[PANEL_COLUMNS]


def panel_matrix(panel: pd.DataFrame, metric: str) -> pd.DataFrame:
    """Wide view: one row per customer, columns ``0..12`` for the metric."""
    wide = panel.pivot(index="customer_id", columns="month_index", values=metric.lower())
    if wide.shape[1] != N_MONTHS or wide.isna().any().any():
        raise DataError("panel must have 13 months per customer")
    return wide.sort_index()


def assign_segment(panel: pd.DataFrame, customers: pd.DataFrame | None = None, min_active_months: int = 6) -> pd.DataFrame:
    """Frequent buyer iff at least ``min_active_months`` of months 0..11 have a purchase day."""
    pdm = panel_matrix(panel, "pd")
    active = (pdm.loc[:, list(range(N_HISTORY))] >= 1).sum(axis=1)
    out = pd.DataFrame(
        {
            "customer_id": pdm.index.to_numpy(),
            "segment": np.where(active.to_numpy() >= min_active_months, "FB", "IB"),
        }
    )
    if customers is not None:
        out = out.merge(customers[CUSTOMER_COLUMNS], on="customer_id", how="left")
        out["country"] = out["country"].fillna("")
    else:
        out["country"] = ""
    return out[PROFILE_COLUMNS]


def write_csv(df: pd.DataFrame, path, float_format="%.6f"):
    """Deterministic CSV writer (ISO dates, fixed float format, LF endings)."""
    out = df.copy()
    for col in out.columns:
        if pd.api.types.is_datetime64_any_dtype(out[col]):
            out[col] = out[col].dt.strftime("%Y-%m-%d")
        elif pd.api.types.is_bool_dtype(out[col]):
            out[col] = out[col].astype("Int64")
    out.to_csv(path, index=False, float_format=float_format, lineterminator="\n")
