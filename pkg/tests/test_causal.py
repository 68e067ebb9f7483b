import csv
import datetime as dt

import numpy as np
import pandas as pd
import pytest

from dtk.causal import (
    BACKWARD,
    BACKWARD_CAUSAL,
    FORWARD,
    FORWARD_CAUSAL,
    INCONCLUSIVE,
    DirectionResult,
    asymmetry_verdict,
    build_golden_set,
    causal_report,
    distance_correlation,
    distance_covariance_sq,
    fit_direction,
    independence_test,
    test_asymmetry as asymmetry,
)
from oracles import naive_dcor, naive_dcov_sq

AS_OF = pd.Timestamp("2017-08-01")


def cubic_case(seed, n=1000):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, n)
    return x, x**3 + 0.1 * rng.uniform(-1, 1, n)


@pytest.mark.parametrize("seed", range(4))
def test_dcov_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    n = 60
    x = rng.normal(size=n)
    y = x**2 + rng.normal(size=n) if seed % 2 else np.round(rng.normal(size=n), 1)
    assert distance_covariance_sq(x, y) == pytest.approx(naive_dcov_sq(x, y), rel=1e-9, abs=1e-12)
    assert distance_correlation(x, y) == pytest.approx(naive_dcor(x, y), rel=1e-9, abs=1e-12)


def test_dcov_with_ties_matches_oracle():
    rng = np.random.default_rng(9)
    x = rng.integers(0, 4, 80).astype(float)
    y = rng.integers(1, 11, 80).astype(float)
    assert distance_covariance_sq(x, y) == pytest.approx(naive_dcov_sq(x, y), rel=1e-9, abs=1e-12)


def test_zero_residuals_pass():
    z = np.arange(40.0)
    assert independence_test(np.zeros(40), z) == (0.0, 1.0, True)


def test_residuals_equal_to_regressor_fail():
    z = np.random.default_rng(0).normal(size=200)
    stat, p, ok = independence_test(z, z, cl=0.001)
    assert stat == pytest.approx(1.0)
    assert p == 1 / 2001 and p < 0.001 and not ok


def test_independence_test_needs_thirty():
    with pytest.raises(ValueError):
        independence_test(np.ones(29), np.arange(29.0))


def test_independent_draws_pass():
    passes = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        passes += independence_test(rng.normal(size=500), rng.normal(size=500), cl=0.001, seed=seed)[2]
    assert passes >= 99


def test_identity_relation_is_inconclusive():
    x = np.arange(50.0)
    fwd, bwd, verdict = asymmetry(x, x)
    assert fwd.passed and bwd.passed
    assert not fwd.residuals.any() and not bwd.residuals.any()
    assert verdict == INCONCLUSIVE


def test_cubic_noise_is_forward_causal():
    x, y = cubic_case(0)
    fwd, bwd, verdict = asymmetry(x, y, cl=0.001)
    assert fwd.passed and not bwd.passed
    assert verdict == FORWARD_CAUSAL


def test_verdict_antisymmetric():
    x, y = cubic_case(1)
    assert asymmetry(y, x)[2] == BACKWARD_CAUSAL
    assert asymmetry(x, y)[2] == FORWARD_CAUSAL


def result(passed):
    return DirectionResult(FORWARD, 0.0, np.zeros(1), np.zeros(1), 0.0, 1.0 if passed else 0.0, passed, 30)


@pytest.mark.parametrize(
    "fwd, bwd, verdict",
    [(True, False, FORWARD_CAUSAL), (False, True, BACKWARD_CAUSAL), (True, True, INCONCLUSIVE), (False, False, INCONCLUSIVE)],
)
def test_verdict_table(fwd, bwd, verdict):
    assert asymmetry_verdict(result(fwd), result(bwd)) == verdict


def test_fit_direction_errors():
    with pytest.raises(ValueError, match="degenerate"):
        fit_direction(np.ones(40), np.arange(40.0))
    with pytest.raises(ValueError):
        fit_direction(np.arange(10.0), np.arange(10.0))
    with pytest.raises(ValueError):
        fit_direction(np.arange(40.0), np.arange(40.0), direction="sideways")


def test_report_marks_small_segment_inconclusive():
    rng = np.random.default_rng(3)
    x, y = cubic_case(2, n=200)
    sample = pd.DataFrame(
        {"customer_id": [f"C{i}" for i in range(210)], "segment": ["FB"] * 200 + ["IB"] * 10, "x": np.r_[x, rng.random(10)], "y": np.r_[y, rng.random(10)]}
    )
    rep = causal_report(sample, n_permutations=200)
    assert rep["segment"].tolist() == ["FB", "FB", "IB", "IB"]
    assert rep["direction"].tolist() == [FORWARD, BACKWARD] * 2
    ib = rep[rep["segment"] == "IB"]
    assert (ib["verdict"] == INCONCLUSIVE).all() and ib["p_value"].isna().all()


# -- golden set -----------------------------------------------------------------


def golden_inputs(bce_day):
    scores = pd.DataFrame({"customer_id": ["A", "B"], "ensemble_bucket": [10, 3]})
    tx = pd.DataFrame(
        {"customer_id": ["A", "A", "B"], "date": pd.to_datetime(["2017-06-01", "2017-07-20", "2017-07-20"])}
    )
    bce = pd.DataFrame(
        {"customer_id": ["A", "B"], "date": pd.to_datetime([bce_day, "2017-07-20"]), "bce_type": "other", "reported": True}
    )
    return scores, bce, tx


def test_bce_on_last_purchase_day_included():
    scores, bce, tx = golden_inputs("2017-07-20")
    assert build_golden_set(scores, bce, tx, AS_OF).customer_ids.tolist() == ["A"]


def test_bce_before_last_purchase_day_excluded():
    scores, bce, tx = golden_inputs("2017-07-15")
    golden = build_golden_set(scores, bce, tx, AS_OF)
    assert len(golden) == 0
    assert golden.criteria["decile_band"] == [7, 10]


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_golden_set_matches_hand_filter(seed42_run):
    out, cfg, _ = seed42_run
    as_of = dt.date(2017, 8, 1)
    band = {r["customer_id"] for r in read_rows(out / "scores.csv") if 7 <= int(r["ensemble_bucket"]) <= 10}
    last = {}
    for r in read_rows(out / "transactions.csv"):
        d = dt.date.fromisoformat(r["date"])
        if d < as_of:
            last[r["customer_id"]] = max(last.get(r["customer_id"], d), d)
    hit = {
        r["customer_id"]
        for r in read_rows(out / "bce.csv")
        if r["reported"] == "1" and dt.date.fromisoformat(r["date"]) == last.get(r["customer_id"])
    }
    golden = [r["customer_id"] for r in read_rows(out / "golden.csv")]
    assert golden == sorted(band & hit)
    assert set(golden) <= band


def test_pipeline_verdict_forward_causal_per_segment(seed42_run):
    out, _, _ = seed42_run
    report = pd.read_csv(out / "causal_report.csv")
    verdicts = report.groupby("segment")["verdict"].first().to_dict()
    assert verdicts == {"FB": FORWARD_CAUSAL, "IB": FORWARD_CAUSAL}
