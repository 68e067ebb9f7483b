import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtk.metrics import (
    decile_bucket,
    ensemble_max,
    log_loss,
    max_f_beta,
    max_min_per_class_accuracy,
    pr_points,
    roc_auc,
    roc_points,
)
from oracles import enum_max_f_beta, enum_max_min_accuracy, mp_log_loss, pair_count_auc, sort_slice_deciles


def scored_set(seed, n=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 500))
    y = rng.integers(0, 2, n)
    y[:2] = [0, 1]
    # coarse grid so ties are common
    s = np.round(rng.random(n) * 0.6 + 0.4 * y * rng.random(n), 2)
    return s, y


def test_auc_examples():
    assert roc_auc([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == 0.75
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.5] * 6, [0, 1, 1, 0, 1, 0]) == 0.5


def test_single_class_rejected():
    for fn in (roc_auc, max_f_beta, max_min_per_class_accuracy):
        with pytest.raises(ValueError, match="both classes"):
            fn([0.1, 0.2], [1, 1])


@pytest.mark.parametrize("seed", range(10))
def test_auc_matches_pair_count(seed):
    s, y = scored_set(seed)
    assert roc_auc(s, y) == pytest.approx(pair_count_auc(s, y), abs=1e-9)


def test_auc_invariant_under_increasing_transform():
    s, y = scored_set(3)
    assert roc_auc(np.exp(3 * s) - 7, y) == pytest.approx(roc_auc(s, y), abs=1e-12)


def test_max_f1_example():
    assert max_f_beta([0.9, 0.4, 0.6], [1, 1, 0]) == (0.4, pytest.approx(0.8))


def test_perfect_separation():
    s, y = [0.1, 0.2, 0.7, 0.9], [0, 0, 1, 1]
    assert max_f_beta(s, y) == (0.7, 1.0)
    assert max_min_per_class_accuracy(s, y) == (0.7, 1.0)


def test_f2_threshold_not_above_f1():
    # few positives ranked high, the rest buried among negatives
    rng = np.random.default_rng(0)
    y = np.r_[np.ones(30, int), np.zeros(200, int)]
    s = np.r_[rng.uniform(0.7, 1.0, 10), rng.uniform(0.0, 0.7, 20), rng.uniform(0.0, 0.75, 200)]
    t1, _ = max_f_beta(s, y, 1.0)
    t2, _ = max_f_beta(s, y, 2.0)
    assert (t1, t2) == (enum_max_f_beta(s, y, 1.0)[0], enum_max_f_beta(s, y, 2.0)[0])
    assert t2 <= t1


def test_max_min_interleaved():
    s = np.arange(20) / 20
    y = np.array([0, 1] * 10)
    assert max_min_per_class_accuracy(s, y) == enum_max_min_accuracy(s, y)


def test_max_min_all_ties():
    # only "everything positive" or "nothing positive" is available; both give 0
    t, v = max_min_per_class_accuracy([0.3] * 4, [0, 1, 0, 1])
    assert (t, v) == (math.inf, 0.0)


def test_log_loss_examples():
    assert log_loss([0.5] * 8, [0, 1] * 4) == pytest.approx(math.log(2), abs=1e-15)
    assert log_loss([0.0, 1.0, 1.0], [0, 1, 1]) == pytest.approx(0.0, abs=1e-11)
    rng = np.random.default_rng(1)
    s, y = rng.random(10), rng.integers(0, 2, 10)
    assert log_loss(s, y) == pytest.approx(float(mp_log_loss(s, y)), abs=1e-12)


def test_curves_shape():
    s, y = scored_set(2, n=50)
    roc = roc_points(s, y)
    assert roc.iloc[0][["tpr", "fpr"]].tolist() == [0.0, 0.0]
    assert roc.iloc[-1][["tpr", "fpr"]].tolist() == [1.0, 1.0]
    pr = pr_points(s, y)
    assert pr["recall"].is_monotonic_increasing and pr["recall"].iloc[-1] == 1.0


def test_deciles_even_split():
    b = decile_bucket(np.linspace(0, 1, 100))
    assert np.bincount(b)[1:].tolist() == [10] * 10
    assert b[-1] == 10 and b[0] == 1


def test_deciles_uneven_split_matches_slice_oracle():
    rng = np.random.default_rng(5)
    s = rng.integers(0, 30, 101).astype(float)
    ids = [f"C{i:03d}" for i in rng.permutation(101)]
    b = decile_bucket(s, ids)
    sizes = np.bincount(b)[1:]
    assert sizes.max() - sizes.min() <= 1
    assert b.tolist() == sort_slice_deciles(s.tolist(), ids)


def test_deciles_need_ten():
    with pytest.raises(ValueError):
        decile_bucket([0.1] * 9)


def test_deciles_invariant_under_increasing_transform():
    s = np.random.default_rng(6).random(237)
    np.testing.assert_array_equal(decile_bucket(s), decile_bucket(np.log(s) * 4 + 1))


def test_ensemble_examples():
    assert ensemble_max([7], [3], [5]).tolist() == [7]
    assert ensemble_max([10], [10], [10]).tolist() == [10]
    with pytest.raises(ValueError):
        ensemble_max([7], [3])
    with pytest.raises(ValueError):
        ensemble_max([7], None, [1])


def test_ensemble_coverage_and_algebra():
    rng = np.random.default_rng(7)
    g, b, p = (rng.integers(1, 11, 500) for _ in range(3))
    top = ensemble_max(g, b, p) >= 7
    assert (top >= ((g >= 7) | (b >= 7) | (p >= 7))).all()
    np.testing.assert_array_equal(ensemble_max(g, b, p), ensemble_max(p, g, b))
    np.testing.assert_array_equal(ensemble_max(g, g, g), g)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 1.0, 2.0]))
def test_threshold_metrics_match_enumeration(seed, beta):
    s, y = scored_set(seed)
    assert max_f_beta(s, y, beta) == enum_max_f_beta(s, y, beta)
    assert max_min_per_class_accuracy(s, y) == enum_max_min_accuracy(s, y)
