"""Campaign A/B machinery: stratified assignment, Welch t-test and GMV lift."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

logger = logging.getLogger(__name__)

TEST = "test"
CONTROL = "control"
STRATA = ("golden", "silent_sufferer")


@dataclass
class AbReadout:
    test_mean: float
    control_mean: float
    t: float
    p_value: float
    df: float
    lift: float
    n_test: int
    n_control: int
    significant: bool
    cl: float

    def to_dict(self):
        return dict(self.__dict__)


def _fraction_for(test_fraction, stratum):
    f = test_fraction.get(stratum) if isinstance(test_fraction, dict) else test_fraction
    if f is None:
        raise ValueError(f"no test_fraction for stratum {stratum!r}")
    if not 0.0 < f < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {f}")
    return float(f)


def assign_groups(population: pd.DataFrame, test_fraction=0.8, seed=0, strata=STRATA) -> pd.DataFrame:
    """Randomly split each status stratum into test and control.

    ``population`` needs ``customer_id`` and ``status``; only rows whose status
    is in ``strata`` are assigned.  ``test_fraction`` is a float or a mapping
    status -> fraction.  Each stratum gets exactly ``round(f * n)`` test rows.
    Returns ``customer_id, status, group`` sorted by customer id.
    """
    pop = population.loc[population["status"].isin(strata), ["customer_id", "status"]]
    if pop.empty:
        raise ValueError("population has no golden or silent_sufferer rows")
    if pop["customer_id"].duplicated().any():
        raise ValueError("duplicate customer ids in population")
    pop = pop.sort_values("customer_id", kind="stable").reset_index(drop=True)
    rng = np.random.default_rng(seed)
    group = np.full(len(pop), CONTROL, dtype=object)
    for stratum in strata:
        idx = np.flatnonzero(pop["status"].to_numpy() == stratum)
        if len(idx) == 0:
            logger.warning("stratum %s is empty", stratum)
            continue
        n_test = int(round(_fraction_for(test_fraction, stratum) * len(idx)))
        group[rng.permutation(idx)[:n_test]] = TEST
    pop["group"] = group
    return pop


def assignment_table(assignment: pd.DataFrame) -> pd.DataFrame:
    """Counts per group x stratum with totals, rows Control/Test/Grand Total."""
    t = pd.crosstab(assignment["group"], assignment["status"])
    t = t.reindex(index=[CONTROL, TEST], columns=list(STRATA), fill_value=0)
    t["total"] = t.sum(axis=1)
    t.loc["total"] = t.sum(axis=0)
    t.index.name = "group"
    t.columns.name = None
    return t.astype(np.int64)


def welch_t_test(sample_a, sample_b):
    """Two-sided Welch test of equal means; ``(t, p, df)``."""
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least 2 observations")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        if diff == 0:
            return 0.0, 1.0, float(len(a) + len(b) - 2)
        raise ValueError("both samples have zero variance and different means")
    t = diff / np.sqrt(se2)
    df = se2**2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    p = 2.0 * stats.t.sf(abs(t), df)
    return float(t), float(min(p, 1.0)), float(df)


def lift(test_mean, control_mean) -> float:
    """Percent change of the test mean over the control mean."""
    if control_mean <= 0:
        raise ValueError("undefined lift: control mean must be positive")
    return (test_mean - control_mean) / control_mean * 100.0


def campaign_readout(assignment: pd.DataFrame, post_gmv: pd.DataFrame, cl=0.05) -> AbReadout:
    """Welch test and mean-GMV lift of test over control."""
    g = assignment.merge(post_gmv[["customer_id", "gmv"]], on="customer_id", how="left")
    missing = g["gmv"].isna()
    if missing.any():
        raise ValueError(f"post-period GMV missing for {int(missing.sum())} customers, e.g. {g.loc[missing, 'customer_id'].iloc[0]}")
    a = g.loc[g["group"] == TEST, "gmv"].to_numpy(float)
    b = g.loc[g["group"] == CONTROL, "gmv"].to_numpy(float)
    t, p, df = welch_t_test(a, b)
    return AbReadout(
        test_mean=float(a.mean()),
        control_mean=float(b.mean()),
        t=t,
        p_value=p,
        df=df,
        lift=lift(a.mean(), b.mean()),
        n_test=len(a),
        n_control=len(b),
        significant=bool(p < cl),
        cl=float(cl),
    )


def readout_frame(assignment: pd.DataFrame, readout: AbReadout) -> pd.DataFrame:
    """Long-form report: group x stratum counts followed by the test statistics."""
    t = assignment_table(assignment)
    rows = [(f"count_{grp}_{col}", float(t.loc[grp, col])) for grp in t.index for col in t.columns]
    rows += [(k, float(v)) for k, v in readout.to_dict().items()]
    return pd.DataFrame(rows, columns=["key", "value"])
