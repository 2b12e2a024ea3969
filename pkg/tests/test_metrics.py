from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from sepsis_triage.exceptions import ConfigError, DataError
from sepsis_triage.metrics import (
    _RankedScores,
    auc,
    bootstrap_ci,
    confusion_metrics,
    drift_series,
    evaluate_system,
    heatmap_grid,
    pearson,
    regularized_beta,
    select_threshold,
    subgroup_evaluate,
    tp_overlap,
)

from oracles import pairwise_auc, permutation_pvalue


def test_confusion_example():
    pred = [1, 1, 1, 1] + [0] + [0] * 5
    lab = [1, 1, 1, 0] + [1] + [0] * 5
    c = confusion_metrics(pred, lab)
    assert (c.tp, c.fp, c.fn, c.tn) == (3, 1, 1, 5)
    assert c.tpr == 0.75 and c.fpr == pytest.approx(1 / 6)
    assert c.precision == 0.75 and c.f1 == pytest.approx(0.75) and c.accuracy == 0.8


def test_confusion_conventions():
    c = confusion_metrics([0, 0, 0], [1, 0, 0])
    assert c.precision == 0 and c.f1 == 0
    c = confusion_metrics([1, 0], [1, 0])
    assert (c.tpr, c.fpr, c.accuracy) == (1, 0, 1)
    with pytest.raises(DataError):
        confusion_metrics([1, 0], [1])


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=60))
def test_confusion_invariants(rows):
    c = confusion_metrics([r[0] for r in rows], [r[1] for r in rows])
    assert c.n == len(rows)
    assert all(0 <= v <= 1 for v in c.rates().values())


def test_auc_examples():
    assert auc([0.9, 0.1], [1, 0]) == 1.0
    assert auc([0.8, 0.8], [1, 0]) == 0.5
    with pytest.raises(DataError):
        auc([0.1, 0.2], [1, 1])


def test_auc_matches_pairwise_count():
    rng = np.random.default_rng(0)
    for _ in range(30):
        n = int(rng.integers(2, 60))
        s = rng.integers(0, 8, n) / 4
        y = rng.random(n) < 0.4
        y[0], y[1] = True, False
        assert abs(auc(s, y) - float(pairwise_auc(s.tolist(), y.tolist()))) <= 1e-12


def test_auc_boolean_identity_exact():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(2, 100))
        p = rng.random(n) < 0.5
        y = rng.random(n) < 0.5
        y[0], y[1] = True, False
        c = confusion_metrics(p, y)
        exact = (Fraction(c.tp, c.tp + c.fn) + 1 - Fraction(c.fp, c.fp + c.tn)) / 2
        assert auc(p.astype(float), y) == float(exact)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auc_monotone_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=40)
    y = rng.random(40) < 0.5
    y[:2] = [True, False]
    base = auc(s, y)
    assert auc(s ** 3, y) == base
    assert auc(1 / (1 + np.exp(-s)), y) == base


def test_ranked_auc_agrees_with_auc():
    rng = np.random.default_rng(2)
    s = rng.integers(0, 20, 300).astype(float)
    y = rng.random(300) < 0.3
    idx = rng.integers(0, 300, 300)
    assert _RankedScores(s).auc(idx, y[idx]) == pytest.approx(auc(s[idx], y[idx]), abs=1e-12)


def test_bootstrap_constant_and_determinism():
    data = np.arange(50.0)
    assert bootstrap_ci(lambda a: 3.0, data, B=50) == (3.0, 3.0)
    a = bootstrap_ci(np.mean, data, B=200, seed=4)
    assert a == bootstrap_ci(np.mean, data, B=200, seed=4)
    assert a != bootstrap_ci(np.mean, data, B=200, seed=5)


def test_bootstrap_contains_point_estimate():
    rng = np.random.default_rng(3)
    p = rng.random(1000) < 0.2
    y = rng.random(1000) < 0.3
    tpr = lambda p_, y_: confusion_metrics(p_, y_).tpr
    lo, hi = bootstrap_ci(tpr, (p, y), B=300, seed=1)
    assert lo <= confusion_metrics(p, y).tpr <= hi


def test_bootstrap_redraws_single_class_and_gives_up():
    y = np.array([True] + [False] * 9)
    lo, hi = bootstrap_ci(lambda y_: auc(np.arange(len(y_)), y_), y, B=50)
    assert 0 <= lo <= hi <= 1
    with pytest.raises(DataError):
        bootstrap_ci(lambda y_: auc(np.zeros(len(y_)), y_), np.zeros(5, dtype=bool), B=5)


def test_bootstrap_multi_output():
    data = np.arange(30.0)
    lo, hi = bootstrap_ci(lambda a: (a.mean(), a.max()), data, B=100)
    assert lo.shape == (2,) and np.all(lo <= hi)


def test_bootstrap_widens_as_n_shrinks():
    widths = {}
    for n in (40, 400):
        w = []
        for s in range(10):
            x = np.random.default_rng(s).random(n)
            lo, hi = bootstrap_ci(np.mean, x, B=200, seed=s)
            w.append(hi - lo)
        widths[n] = np.mean(w)
    assert widths[40] > widths[400]


def test_regularized_beta_against_scipy():
    rng = np.random.default_rng(5)
    for _ in range(300):
        a, b = rng.uniform(0.2, 30, 2)
        x = rng.random()
        assert regularized_beta(a, b, x) == pytest.approx(special.betainc(a, b, x), abs=1e-12)


def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6])[0] == pytest.approx(1.0)
    assert pearson([1, 2, 3], [6, 4, 2])[0] == pytest.approx(-1.0)
    with pytest.raises(DataError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(DataError):
        pearson([1, 2], [1, 2])


def test_pearson_pvalue_matches_permutation():
    rng = np.random.default_rng(8)
    x = rng.normal(size=8)
    y = 0.6 * x + rng.normal(size=8)
    _, p = pearson(x, y)
    assert abs(p - permutation_pvalue(x, y, 200_000, seed=1)) < 0.01


def test_tp_overlap():
    y = np.ones(5, dtype=bool)
    a = np.array([1, 1, 1, 1, 0], bool)
    b = np.array([1, 1, 1, 0, 1], bool)
    assert tp_overlap(a, b, y) == 0.75
    assert tp_overlap(a, np.ones(5, bool), y) == 1.0
    assert tp_overlap(a, ~a, y) == 0.0
    assert tp_overlap(a, a, y) == 1.0
    with pytest.raises(DataError):
        tp_overlap(np.zeros(5, bool), a, y)


def test_select_threshold_policies():
    s = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95])
    y = np.array([0, 0, 0, 0, 0, 0, 1, 0, 1, 1], bool)
    t = select_threshold(s, y, "target-fpr", target_fpr=1 / 7)
    assert np.mean(s[~y] >= t) == pytest.approx(1 / 7)
    assert select_threshold(s, y, "max-f1") == 0.7
    assert select_threshold(s, y, "fixed", value=0.33) == 0.33
    with pytest.raises(ConfigError):
        select_threshold(s, y, "magic")


def test_evaluate_protocol_identity_and_subgroups():
    rng = np.random.default_rng(9)
    y = rng.random(400) < 0.2
    pred = np.where(y, rng.random(400) < 0.7, rng.random(400) < 0.1)
    rep = evaluate_system("sirs", pred, y, B=100)
    assert rep.auc == pytest.approx((rep.tpr + 1 - rep.fpr) / 2, abs=1e-15)
    for m, (lo, hi) in rep.ci.items():
        assert lo <= rep.metric(m) <= hi
    same = subgroup_evaluate("all", pred, y, y, B=0)
    assert same.to_dict()["metrics"] == evaluate_system("all", pred, y, B=0).to_dict()["metrics"]
    one = np.zeros(400, bool)
    one[np.flatnonzero(y & pred)[0]] = True
    assert subgroup_evaluate("one", pred, y, one, B=0).tpr == 1.0
    with pytest.raises(DataError):
        subgroup_evaluate("none", pred, y, np.zeros(400, bool), B=0)


def test_report_key_order():
    y = np.array([1, 0, 1, 0], bool)
    d = evaluate_system("m", [0.9, 0.2, 0.4, 0.5], y, threshold=0.45, B=10).to_dict()
    assert list(d) == ["name", "n", "n_positive", "threshold", "counts", "metrics", "ci95"]
    assert list(d["metrics"]) == ["auc", "tpr", "fpr", "f1", "accuracy", "precision"]


def test_drift_planted_ramp():
    rng = np.random.default_rng(10)
    months, covid, preds, labels = [], [], [], []
    for i in range(12):
        frac = i / 22
        fpr = 0.03 + 0.25 * frac + rng.normal(0, 0.005)
        n = 4000
        months += [f"2020-{i + 1:02d}"] * n
        covid += list(rng.random(n) < frac)
        labels += [False] * n
        preds += list(rng.random(n) < fpr)
    d = drift_series(months, covid, {"model": preds}, labels)
    assert d.correlation["model"]["r"] >= 0.9
    assert len(d.months) == 12 and d.months == sorted(d.months)


def test_drift_errors_and_exclusions():
    months = ["2020-01"] * 5 + ["2020-02"] * 5 + ["2020-03"] * 5 + ["2020-05"] * 5
    labels = [False] * 20
    with pytest.raises(DataError):
        drift_series(months, [False] * 20, {"m": [True, False] * 10}, labels)
    covid = [True, False, False, False, False] + [True] * 2 + [False] * 3 + [True] * 3 + [False] * 2 + [False] * 5
    preds = [True] + [False] * 4 + [True, True] + [False] * 3 + [True] * 3 + [False] * 2 + [False] * 5
    d = drift_series(months, covid, {"m": preds}, labels)
    assert d.excluded_months == ["2020-04"]
    with pytest.raises(DataError):
        drift_series(["2020-01", "2020-02"], [True, False], {"m": [True, False]}, [False, False])


def test_heatmap_single_record_and_conservation():
    g = heatmap_grid([38.5], [95.0], [True], [40.0])
    assert g.counts["sepsis"].sum() == 1 and np.count_nonzero(g.counts["sepsis"]) == 1
    rng = np.random.default_rng(11)
    x = rng.normal(37, 1.5, 500)
    y = rng.normal(90, 30, 500)
    x[:20] = np.nan
    lab = rng.random(500) < 0.3
    ages = rng.uniform(0, 90, 500)
    g = heatmap_grid(x, y, lab, ages)
    kept = ~np.isnan(x) & (ages >= 18)
    assert g.counts["sepsis"].sum() == np.sum(kept & lab)
    assert g.counts["non_sepsis"].sum() == np.sum(kept & ~lab)
    with pytest.raises(DataError):
        heatmap_grid([38.5], [95.0], [True], [10.0])
