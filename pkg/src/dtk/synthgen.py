"""Seeded synthetic customer population with planted BCE sufferers.

Every customer has a lognormal spend baseline and a segment-dependent
monthly purchase propensity.  Each transaction independently carries a bad
customer experience (BCE) with a fixed probability, so BCE counts grow with
activity.  A BCE in one of the history months turns the customer into a
sufferer with probability ``p_suffer``; from then on the purchase propensity is multiplied by
``suffer_effect``.  Sufferers report their BCE with probability ``p_report``.
A separate group of "natural decliners" loses activity for reasons unrelated
to BCE, so downward trend is not synonymous with suffering.

The shock is applied by thinning an unshocked trajectory with coupled
uniforms, which keeps everything before the triggering BCE identical to the
no-shock path.
"""
from __future__ import annotations

import calendar
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from .data import BCE_TYPES, N_HISTORY, N_MONTHS, Window, write_csv

GROUND_TRUTH_COLUMNS = ["customer_id", "is_sufferer", "is_reporter", "suffer_month"]


@dataclass
class GeneratorConfig:
    n_customers: int = 20000
    fb_fraction: float = 0.4
    spend_log_mean: float = 3.5
    spend_log_sd: float = 0.7
    purchase_prob: dict = field(default_factory=lambda: {"FB": 0.95, "IB": 0.2})
    extra_days_mean: dict = field(default_factory=lambda: {"FB": 2.0, "IB": 0.3})
    extra_tx_per_day: float = 0.2
    extra_items_mean: float = 0.6
    bce_rate_per_transaction: float = 0.04
    p_suffer: float = 0.5
    p_report: float = 0.4
    suffer_effect: float = 0.03
    p_decline: float = 0.03
    decline_effect: float = 0.3
    noise_sd: float = 0.5
    tx_noise_sd: float = 0.4
    countries: dict = field(default_factory=lambda: {"US": 0.5, "UK": 0.3, "DE": 0.2})
    target_month: str = "2017-08"
    seed: int = 42

    def __post_init__(self):
        self.validate()

    def validate(self):
        if int(self.n_customers) < 0:
            raise ValueError("n_customers must be non-negative")
        for name in ("fb_fraction", "bce_rate_per_transaction", "p_suffer", "p_report", "p_decline"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("suffer_effect", "decline_effect"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        for seg in ("FB", "IB"):
            if not 0.0 <= self.purchase_prob.get(seg, -1) <= 1.0:
                raise ValueError(f"purchase_prob[{seg}] must lie in [0, 1]")
            if self.extra_days_mean.get(seg, -1) < 0:
                raise ValueError(f"extra_days_mean[{seg}] must be non-negative")
        for name in ("spend_log_sd", "noise_sd", "tx_noise_sd", "extra_tx_per_day", "extra_items_mean"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.countries or abs(sum(self.countries.values()) - 1.0) > 1e-9:
            raise ValueError("countries weights must sum to 1")
        Window(self.target_month)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticDataset:
    transactions: pd.DataFrame
    bce: pd.DataFrame
    customers: pd.DataFrame
    ground_truth: pd.DataFrame
    latent: pd.DataFrame
    window: Window

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(self.transactions, out / "transactions.csv", float_format="%.2f")
        write_csv(self.bce, out / "bce.csv")
        write_csv(self.customers, out / "customers.csv")
        gt = self.ground_truth.copy()
        gt["suffer_month"] = gt["suffer_month"].astype("Int64")
        write_csv(gt, out / "ground_truth.csv")
        write_csv(self.latent, out / "latent.csv")


def _customer_ids(n: int) -> np.ndarray:
    width = max(5, len(str(n)))
    return np.array([f"C{i:0{width}d}" for i in range(1, n + 1)], dtype=object)


def _month_days(window: Window, months: np.ndarray) -> np.ndarray:
    lengths = []
    for m in range(N_MONTHS + 1):
        start = window.month_start(m)
        lengths.append(calendar.monthrange(start.year, start.month)[1])
    return np.asarray(lengths)[months]


def _draw_days(rng, n_days, month_len):
    """Pick ``n_days[k]`` distinct day offsets within month ``k``; returns (row, day, rank)."""
    keys = rng.random((len(n_days), 31))
    keys[np.arange(31)[None, :] >= month_len[:, None]] = 2.0
    order = np.argsort(keys, axis=1, kind="stable")
    take = np.arange(31)[None, :] < n_days[:, None]
    rows = np.broadcast_to(np.arange(len(n_days))[:, None], order.shape)[take]
    ranks = np.broadcast_to(np.arange(31)[None, :], order.shape)[take]
    return rows, order[take], ranks


def generate(config: GeneratorConfig, seed: int | None = None) -> SyntheticDataset:
    """Simulate one population.  Identical ``(config, seed)`` gives identical output."""
    config.validate()
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    window = Window(config.target_month)
    n = int(config.n_customers)
    ids = _customer_ids(n)

    is_fb = rng.random(n) < config.fb_fraction
    baseline = rng.normal(config.spend_log_mean, config.spend_log_sd, n)
    names = list(config.countries)
    country = np.asarray(names, dtype=object)[
        rng.choice(len(names), size=n, p=list(config.countries.values()))
    ] if n else np.array([], dtype=object)
    is_decliner = rng.random(n) < config.p_decline
    decline_month = rng.integers(6, N_MONTHS, size=n)

    p_buy = np.where(is_fb, config.purchase_prob["FB"], config.purchase_prob["IB"])
    lam_days = np.where(is_fb, config.extra_days_mean["FB"], config.extra_days_mean["IB"])

    # customer-month cells, unshocked
    cust = np.repeat(np.arange(n), N_MONTHS)
    month = np.tile(np.arange(N_MONTHS), n)
    u_active = rng.random(n * N_MONTHS)
    extra_days = rng.poisson(np.repeat(lam_days, N_MONTHS))
    month_noise = rng.normal(0.0, config.noise_sd, n * N_MONTHS)
    active = u_active < np.repeat(p_buy, N_MONTHS)

    cell = np.flatnonzero(active)
    month_len = _month_days(window, month[cell])
    n_days = np.minimum(1 + extra_days[cell], month_len)
    drow, day, drank = _draw_days(rng, n_days, month_len)
    day_cell = cell[drow]
    u_day = rng.random(len(day_cell))

    n_tx = 1 + rng.poisson(config.extra_tx_per_day, len(day_cell))
    tx_day = np.repeat(np.arange(len(day_cell)), n_tx)
    tx_seq = np.arange(len(tx_day)) - np.repeat(np.cumsum(n_tx) - n_tx, n_tx)
    n_all = len(tx_day)
    tx_cell = day_cell[tx_day]
    tx_cust = cust[tx_cell]
    tx_month = month[tx_cell]
    tx_dom = day[tx_day]
    amount = np.exp(baseline[tx_cust] + month_noise[tx_cell] + rng.normal(0.0, config.tx_noise_sd, n_all))
    items = 1 + rng.poisson(config.extra_items_mean, n_all)
    has_bce = rng.random(n_all) < config.bce_rate_per_transaction
    bce_type = rng.integers(0, len(BCE_TYPES), n_all)
    u_suffer = rng.random(n_all)
    u_report = rng.random(n)

    # chronological order of transactions
    order = np.lexsort((tx_seq, tx_dom, tx_month, tx_cust))
    # only history-month BCEs can trigger, so every sufferer is visible as of the target month
    turning = has_bce[order] & (u_suffer[order] < config.p_suffer) & (tx_month[order] < N_HISTORY)
    first_turn = np.full(n, -1)
    turn_pos = order[turning]
    t_cust = tx_cust[turn_pos]
    uniq, first_idx = np.unique(t_cust, return_index=True)
    first_turn[uniq] = turn_pos[first_idx]
    is_sufferer = first_turn >= 0
    is_reporter = is_sufferer & (u_report < config.p_report)
    suffer_month = np.full(n, -1)
    suffer_month[is_sufferer] = tx_month[first_turn[is_sufferer]]

    # thinning multipliers per cell
    level = np.ones(n * N_MONTHS)
    suff_cells = is_sufferer[cust] & (month > suffer_month[cust])
    level[suff_cells] *= config.suffer_effect
    dec_cells = is_decliner[cust] & (month >= decline_month[cust])
    level[dec_cells] *= config.decline_effect
    cell_keep = u_active < np.repeat(p_buy, N_MONTHS) * level
    day_keep = cell_keep[day_cell] & ((drank == 0) | (u_day < level[day_cell]))
    keep = day_keep[tx_day]

    # drop what follows the triggering BCE inside its own month
    turn_key = np.full(n, np.inf)
    tr = first_turn[is_sufferer]
    turn_key[is_sufferer] = tx_dom[tr] * 1000 + tx_seq[tr]
    same_month = is_sufferer[tx_cust] & (tx_month == suffer_month[tx_cust])
    after = same_month & (tx_dom * 1000 + tx_seq > turn_key[tx_cust])
    keep &= ~after

    month_start = np.array([window.month_start(m).to_datetime64() for m in range(N_MONTHS)])
    dates = month_start[tx_month] + tx_dom.astype("timedelta64[D]")

    tx = pd.DataFrame(
        {
            "customer_id": ids[tx_cust[keep]],
            "date": pd.to_datetime(dates[keep]),
            "amount": np.round(amount[keep], 2),
            "item_count": items[keep].astype(np.int64),
            "_seq": tx_seq[keep],
        }
    ).sort_values(["customer_id", "date", "_seq"], kind="stable")
    tx = tx.drop(columns="_seq").reset_index(drop=True)

    bmask = keep & has_bce
    post_turn = is_sufferer[tx_cust] & (
        (tx_month > suffer_month[tx_cust])
        | ((tx_month == suffer_month[tx_cust]) & (tx_dom * 1000 + tx_seq >= turn_key[tx_cust]))
    )
    reported = is_reporter[tx_cust] & post_turn
    bce = pd.DataFrame(
        {
            "customer_id": ids[tx_cust[bmask]],
            "date": pd.to_datetime(dates[bmask]),
            "bce_type": np.asarray(BCE_TYPES, dtype=object)[bce_type[bmask]],
            "reported": reported[bmask],
            "_m": tx_month[bmask],
            "_k": tx_dom[bmask] * 1000 + tx_seq[bmask],
        }
    ).sort_values(["customer_id", "_m", "_k"], kind="stable")
    bce = bce.drop(columns=["_m", "_k"]).reset_index(drop=True)

    customers = pd.DataFrame({"customer_id": ids, "country": country})
    gt = pd.DataFrame(
        {
            "customer_id": ids,
            "is_sufferer": is_sufferer,
            "is_reporter": is_reporter,
            "suffer_month": pd.array(np.where(is_sufferer, suffer_month, 0), dtype="Int64"),
        }
    )
    gt.loc[~is_sufferer, "suffer_month"] = pd.NA
    latent = pd.DataFrame(
        {
            "customer_id": ids,
            "segment": np.where(is_fb, "FB", "IB"),
            "log_baseline": baseline,
            "is_decliner": is_decliner,
            "decline_month": np.where(is_decliner, decline_month, -1),
        }
    )
    return SyntheticDataset(tx, bce, customers, gt, latent, window)


def simulate_post_period(latent, ground_truth, config: GeneratorConfig, treated=(), recovery=0.0, seed=0) -> pd.DataFrame:
    """GMV of the month after the target month, for every customer in ``latent``.

    Sufferers carry their ``suffer_effect`` multiplier into the post period.
    Treated sufferers recover a fraction ``recovery`` of the lost propensity:
    their multiplier becomes ``effect + recovery * (1 - effect)``.
    """
    if not 0.0 <= recovery <= 1.0:
        raise ValueError("recovery must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    lat = latent.merge(ground_truth[["customer_id", "is_sufferer"]], on="customer_id", how="left")
    lat["is_sufferer"] = lat["is_sufferer"].fillna(False).astype(bool)
    n = len(lat)
    is_fb = (lat["segment"] == "FB").to_numpy()
    level = np.ones(n)
    suff = lat["is_sufferer"].to_numpy()
    treated_mask = lat["customer_id"].isin(set(treated)).to_numpy()
    eff = config.suffer_effect
    level[suff] = eff
    level[suff & treated_mask] = eff + recovery * (1.0 - eff)
    level[lat["is_decliner"].to_numpy().astype(bool)] *= config.decline_effect

    p_buy = np.where(is_fb, config.purchase_prob["FB"], config.purchase_prob["IB"])
    lam = np.where(is_fb, config.extra_days_mean["FB"], config.extra_days_mean["IB"])
    active = rng.random(n) < p_buy * level
    n_days = np.where(active, 1 + rng.poisson(lam * level), 0)
    noise = rng.normal(0.0, config.noise_sd, n)
    base = lat["log_baseline"].to_numpy()
    gmv = np.zeros(n)
    n_tx = n_days + rng.poisson(config.extra_tx_per_day * n_days)
    total = int(n_tx.sum())
    owner = np.repeat(np.arange(n), n_tx)
    amounts = np.exp(base[owner] + noise[owner] + rng.normal(0.0, config.tx_noise_sd, total))
    np.add.at(gmv, owner, amounts)
    return pd.DataFrame({"customer_id": lat["customer_id"].to_numpy(), "gmv": np.round(gmv, 2)})


def summarize(transactions, ground_truth, segments=None) -> dict:
    """Counts of customers, sufferers, silent sufferers, reporters and mean monthly GMV per segment.

    ``segments`` is a frame with ``customer_id`` and ``segment`` (observed or latent).
    """
    gt = ground_truth
    suff = gt["is_sufferer"].astype(bool)
    rep = gt["is_reporter"].astype(bool)
    out = {
        "customers": int(len(gt)),
        "sufferers": int(suff.sum()),
        "silent_sufferers": int((suff & ~rep).sum()),
        "reporters": int(rep.sum()),
        "mean_monthly_gmv": {},
    }
    if segments is not None and len(segments):
        spend = transactions.groupby("customer_id")["amount"].sum()
        per = segments.set_index("customer_id").join(spend.rename("gmv")).fillna({"gmv": 0.0})
        for seg, grp in per.groupby("segment"):
            out["mean_monthly_gmv"][seg] = float(grp["gmv"].mean() / N_MONTHS)
    return out


def load_config(path) -> GeneratorConfig:
    doc = json.loads(Path(path).read_text())
    return GeneratorConfig.from_dict(doc.get("generator", doc))
