"""Evaluation statistics: confusion metrics, AUC, bootstrap CIs, correlation, drift, heatmaps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .exceptions import ConfigError, DataError

METRIC_NAMES = ("auc", "tpr", "fpr", "f1", "accuracy", "precision")
THRESHOLD_POLICIES = ("target-fpr", "max-f1", "fixed")
DEFAULT_BOOTSTRAP = 2000
MAX_REDRAWS = 100


def _bool_array(values, name):
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise DataError(f"{name} must be one-dimensional")
    return arr.astype(bool)


def _check_lengths(**arrays):
    lengths = {k: len(v) for k, v in arrays.items()}
    if len(set(lengths.values())) > 1:
        raise DataError(f"length mismatch: {lengths}")


# --------------------------------------------------------------------------
# confusion metrics


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def tpr(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def fpr(self) -> float:
        d = self.fp + self.tn
        return self.fp / d if d else 0.0

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.tpr
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0

    def rates(self) -> dict:
        return {"tpr": self.tpr, "fpr": self.fpr, "f1": self.f1, "accuracy": self.accuracy,
                "precision": self.precision}


def confusion_metrics(predictions, labels) -> ConfusionCounts:
    pred = _bool_array(predictions, "predictions")
    y = _bool_array(labels, "labels")
    _check_lengths(predictions=pred, labels=y)
    if pred.size == 0:
        raise DataError("confusion metrics need at least one record")
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    return ConfusionCounts(tp, fp, fn, int(pred.size - tp - fp - fn))


# --------------------------------------------------------------------------
# AUC


def _midranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties given their average rank (exact halves)."""
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    ends = np.r_[starts[1:], s.size]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(s.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    s = np.asarray(scores, dtype=np.float64)
    y = _bool_array(labels, "labels")
    _check_lengths(scores=s, labels=y)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes present")
    if np.isnan(s).any():
        raise DataError("scores contain NaN")
    u = _midranks(s)[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


class _RankedScores:
    """Scores reduced to dense ranks, so resampled AUCs are two bincounts."""

    def __init__(self, scores):
        uniq, self.dense = np.unique(np.asarray(scores, dtype=np.float64), return_inverse=True)
        self.k = uniq.size

    def auc(self, idx, y):
        d = self.dense[idx]
        pos = np.bincount(d[y], minlength=self.k)
        neg = np.bincount(d[~y], minlength=self.k)
        n_pos, n_neg = pos.sum(), neg.sum()
        if n_pos == 0 or n_neg == 0:
            raise DataError("resample has a single class")
        below = np.cumsum(neg) - neg
        u = np.dot(pos, below) + 0.5 * np.dot(pos, neg)
        return u / (n_pos * n_neg)


# --------------------------------------------------------------------------
# bootstrap


def resample_rng(seed: int, b: int) -> np.random.Generator:
    """Generator for resample ``b``; keyed so parallel and serial runs agree."""
    return np.random.default_rng([seed, b])


def bootstrap_ci(statistic: Callable, data, B: int = DEFAULT_BOOTSTRAP, level: float = 0.95, seed: int = 0,
                 max_attempts: int = MAX_REDRAWS):
    """Percentile bootstrap interval of ``statistic``.

    ``data`` is an array or a tuple of equal-length arrays resampled jointly
    by row. ``statistic`` may return a scalar or a 1-D array; the interval is
    returned with the same shape (``(lo, hi)`` floats or two arrays). A resample
    on which the statistic raises ``ValueError`` (e.g. a single class) is
    redrawn, up to ``max_attempts`` times. The interval is widened, if needed,
    to contain the full-sample point estimate.
    """
    arrays = data if isinstance(data, tuple) else (data,)
    arrays = tuple(np.asarray(a) for a in arrays)
    n = len(arrays[0])
    _check_lengths(**{f"data[{i}]": a for i, a in enumerate(arrays)})
    if n < 2:
        raise DataError("bootstrap needs at least two records")
    if not 0 < level < 1:
        raise ConfigError("bootstrap level must be in (0, 1)")
    if B < 1:
        raise ConfigError("bootstrap B must be >= 1")

    point = np.asarray(statistic(*arrays), dtype=np.float64)
    stats = np.empty((B,) + point.shape)
    for b in range(B):
        rng = resample_rng(seed, b)
        for _ in range(max_attempts):
            idx = rng.integers(0, n, size=n)
            try:
                stats[b] = statistic(*(a[idx] for a in arrays))
                break
            except ValueError:
                continue
        else:
            raise DataError(f"statistic undefined on {max_attempts} consecutive resamples")
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(stats, [100 * alpha, 100 * (1 - alpha)], axis=0)
    lo = np.minimum(lo, point)
    hi = np.maximum(hi, point)
    if point.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


# --------------------------------------------------------------------------
# correlation


def _betacf_series(a, b, x):
    # I_x(a,b) = x^a (1-x)^b / (a B(a,b)) * sum_n (a+b)_n / (a+1)_n * x^n  (all terms positive)
    log_front = (a * math.log(x) + b * math.log1p(-x) - math.log(a)
                 - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)))
    term = 1.0
    total = 1.0
    for n in range(1, 100_000):
        term *= (a + b + n - 1) / (a + n) * x
        total += term
        if term < 1e-17 * total:
            break
    return math.exp(log_front) * total


def _betacf_fraction(a, b, x):
    # modified Lentz evaluation of the continued fraction for I_x(a,b)
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 10_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    log_front = (a * math.log(x) + b * math.log1p(-x)
                 - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)))
    return math.exp(log_front) * h / a


def regularized_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``.

    Power series below the distribution's mean region, continued fraction
    (through the symmetry ``I_x(a,b) = 1 - I_{1-x}(b,a)``) above it.
    """
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0 <= x <= 1:
        raise ValueError("x must lie in [0, 1]")
    if x == 0 or x == 1:
        return float(x)
    if x < (a + 1.0) / (a + b + 2.0):
        return _betacf_series(a, b, x)
    return 1.0 - _betacf_fraction(b, a, 1.0 - x)


def t_two_sided_pvalue(t: float, df: int) -> float:
    if math.isinf(t):
        return 0.0
    return regularized_beta(df / 2.0, 0.5, df / (df + t * t))


def pearson(x, y):
    """Sample correlation and its two-sided t-test p-value."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_lengths(x=x, y=y)
    n = x.size
    if n < 3:
        raise DataError("pearson needs at least 3 points")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx, syy = float(np.dot(xc, xc)), float(np.dot(yc, yc))
    if sxx == 0 or syy == 0:
        raise DataError("pearson undefined: zero variance in an input series")
    r = float(np.dot(xc, yc) / math.sqrt(sxx * syy))
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1 - r * r))
    return r, t_two_sided_pvalue(t, n - 2)


# --------------------------------------------------------------------------
# overlap, thresholds


def tp_overlap(preds_a, preds_b, labels) -> float:
    """Fraction of ``a``'s true positives that ``b`` also catches."""
    a = _bool_array(preds_a, "preds_a")
    b = _bool_array(preds_b, "preds_b")
    y = _bool_array(labels, "labels")
    _check_lengths(preds_a=a, preds_b=b, labels=y)
    tp_a = a & y
    n = int(tp_a.sum())
    if n == 0:
        raise DataError("tp_overlap undefined: first system has no true positives")
    return int(np.sum(tp_a & b)) / n


def select_threshold(scores, labels, policy: str = "target-fpr", target_fpr: Optional[float] = None,
                     value: Optional[float] = None) -> float:
    """Operating threshold on validation scores (positive when score >= threshold).

    ``target-fpr`` picks the candidate whose FPR is closest to ``target_fpr``;
    ``max-f1`` maximizes F1; ``fixed`` returns ``value``. Ties go to the
    lowest threshold.
    """
    if policy == "fixed":
        if value is None:
            raise ConfigError("fixed threshold policy needs a value")
        return float(value)
    if policy not in THRESHOLD_POLICIES:
        raise ConfigError(f"unknown threshold policy {policy!r}; expected one of {THRESHOLD_POLICIES}")
    s = np.asarray(scores, dtype=np.float64)
    y = _bool_array(labels, "labels")
    _check_lengths(scores=s, labels=y)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("threshold selection needs both classes in the validation split")
    # candidates: every distinct score, highest first, so position i means "top i+1 groups positive"
    uniq = np.unique(s)[::-1]
    order = np.argsort(-s, kind="stable")
    ss, yy = s[order], y[order]
    group_end = np.searchsorted(-ss, -uniq, side="right") - 1
    tp = np.cumsum(yy)[group_end]
    fp = np.cumsum(~yy)[group_end]
    if policy == "target-fpr":
        if target_fpr is None or not 0 <= target_fpr <= 1:
            raise ConfigError("target-fpr policy needs target_fpr in [0, 1]")
        obj = np.abs(fp / n_neg - target_fpr)
        best = np.flatnonzero(obj == obj.min())
    else:
        prec = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        rec = tp / n_pos
        f1 = np.where(prec + rec > 0, 2 * prec * rec / np.maximum(prec + rec, 1e-300), 0.0)
        best = np.flatnonzero(f1 == f1.max())
    return float(uniq[best.max()])


# --------------------------------------------------------------------------
# reports


@dataclass
class EvaluationReport:
    name: str
    n: int
    n_positive: int
    counts: ConfusionCounts
    auc: float
    ci: dict
    threshold: Optional[float] = None
    subgroups: dict = field(default_factory=dict)

    @property
    def tpr(self):
        return self.counts.tpr

    @property
    def fpr(self):
        return self.counts.fpr

    @property
    def f1(self):
        return self.counts.f1

    @property
    def accuracy(self):
        return self.counts.accuracy

    @property
    def precision(self):
        return self.counts.precision

    def metric(self, name: str) -> float:
        return self.auc if name == "auc" else getattr(self.counts, name)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "n": self.n,
            "n_positive": self.n_positive,
            "threshold": self.threshold,
            "counts": {"tp": self.counts.tp, "fp": self.counts.fp, "fn": self.counts.fn, "tn": self.counts.tn},
            "metrics": {m: self.metric(m) for m in METRIC_NAMES},
            "ci95": {m: list(self.ci[m]) for m in METRIC_NAMES if m in self.ci},
        }
        if self.subgroups:
            out["subgroups"] = {k: v.to_dict() for k, v in self.subgroups.items()}
        return out


def _report_statistic(scores, preds):
    ranked = _RankedScores(scores)

    def stat(idx, y):
        a = ranked.auc(idx, y)
        p = preds[idx]
        c = ConfusionCounts(int(np.sum(p & y)), int(np.sum(p & ~y)), int(np.sum(~p & y)), int(np.sum(~p & ~y)))
        return (a, c.tpr, c.fpr, c.f1, c.accuracy, c.precision)

    return stat


def evaluate_system(name: str, scores, labels, threshold: Optional[float] = None, B: int = DEFAULT_BOOTSTRAP,
                    seed: int = 0, level: float = 0.95) -> EvaluationReport:
    """Report for a scored model (``threshold`` given) or a boolean protocol (``threshold`` None)."""
    y = _bool_array(labels, "labels")
    if threshold is None:
        s = _bool_array(scores, "scores").astype(np.float64)
        preds = s > 0.5
    else:
        s = np.asarray(scores, dtype=np.float64)
        preds = s >= threshold
    _check_lengths(scores=s, labels=y)
    counts = confusion_metrics(preds, y)
    a = auc(s, y)
    ci = {}
    if B > 0:
        stat = _report_statistic(s, preds)
        lo, hi = bootstrap_ci(stat, (np.arange(y.size), y), B=B, level=level, seed=seed)
        ci = {m: (float(lo[i]), float(hi[i])) for i, m in enumerate(METRIC_NAMES)}
    return EvaluationReport(name, int(y.size), int(y.sum()), counts, a, ci, threshold)


def subgroup_mask(labels, subgroup) -> np.ndarray:
    """Records kept for a subgroup report: subgroup positives plus every negative."""
    y = _bool_array(labels, "labels")
    g = _bool_array(subgroup, "subgroup")
    _check_lengths(labels=y, subgroup=g)
    if not np.any(g & y):
        raise DataError("subgroup has no positive members")
    return (g & y) | ~y


def subgroup_evaluate(name: str, scores, labels, subgroup, threshold: Optional[float] = None,
                      B: int = DEFAULT_BOOTSTRAP, seed: int = 0) -> EvaluationReport:
    keep = subgroup_mask(labels, subgroup)
    s = np.asarray(scores)[keep]
    y = _bool_array(labels, "labels")[keep]
    return evaluate_system(name, s, y, threshold, B=B, seed=seed)


# --------------------------------------------------------------------------
# drift


@dataclass
class DriftSeries:
    months: list
    n: list
    n_negative: list
    covid_fraction: list
    fpr: dict
    excluded_months: list
    correlation: dict
    covid_stratified_fpr: dict

    def to_dict(self) -> dict:
        return {
            "months": [
                {
                    "month": m,
                    "n": self.n[i],
                    "n_negative": self.n_negative[i],
                    "covid_fraction": self.covid_fraction[i],
                    "fpr": {k: v[i] for k, v in self.fpr.items()},
                }
                for i, m in enumerate(self.months)
            ],
            "excluded_months": self.excluded_months,
            "correlation": self.correlation,
            "covid_stratified_fpr": self.covid_stratified_fpr,
        }


def _month_range(first: str, last: str) -> list:
    y, m = map(int, first.split("-"))
    ly, lm = map(int, last.split("-"))
    out = []
    while (y, m) <= (ly, lm):
        out.append(f"{y:04d}-{m:02d}")
        m += 1
        if m == 13:
            y, m = y + 1, 1
    return out


def drift_series(months: Sequence[str], covid, predictions: Mapping[str, Sequence[bool]], labels) -> DriftSeries:
    """Monthly covid fraction and per-system FPR, with Pearson r over months.

    Months without records or without label-negative records are listed in
    ``excluded_months`` and left out of the correlation.
    """
    months = np.asarray(months)
    cov = _bool_array(covid, "covid")
    y = _bool_array(labels, "labels")
    preds = {k: _bool_array(v, k) for k, v in predictions.items()}
    _check_lengths(months=months, covid=cov, labels=y, **preds)
    if months.size == 0:
        raise DataError("drift analysis needs records")
    all_months = _month_range(min(months.tolist()), max(months.tolist()))
    if len(all_months) < 3:
        raise DataError(f"drift analysis needs at least 3 months, got {len(all_months)}")
    n, n_neg, frac = [], [], []
    fpr = {k: [] for k in preds}
    excluded = []
    for m in all_months:
        sel = months == m
        neg = sel & ~y
        n.append(int(sel.sum()))
        n_neg.append(int(neg.sum()))
        frac.append(float(cov[sel].mean()) if sel.any() else None)
        for k, p in preds.items():
            fpr[k].append(float(p[neg].mean()) if neg.any() else None)
        if not neg.any():
            excluded.append(m)
    valid = [i for i, m in enumerate(all_months) if m not in excluded]
    if len(valid) < 3:
        raise DataError("fewer than 3 months with label-negative records")
    x = [frac[i] for i in valid]
    correlation = {}
    for k in preds:
        r, p = pearson(x, [fpr[k][i] for i in valid])
        correlation[k] = {"r": r, "p_value": p}
    stratified = {}
    for k, p in preds.items():
        entry = {}
        for label, grp in (("covid", cov & ~y), ("non_covid", ~cov & ~y)):
            entry[label] = float(p[grp].mean()) if grp.any() else None
            entry[f"n_{label}"] = int(grp.sum())
        stratified[k] = entry
    return DriftSeries(all_months, n, n_neg, frac, fpr, excluded, correlation, stratified)


# --------------------------------------------------------------------------
# heatmaps

HEATMAP_AXES = {
    "temperature": ((34.0, 41.0, 0.5), (36.0, 38.0)),
    "pulse_rate": ((40.0, 180.0, 10.0), (90.0,)),
    "respiratory_rate": ((8.0, 40.0, 2.0), (20.0,)),
}


def default_edges(axis: str) -> np.ndarray:
    try:
        (lo, hi, step), _ = HEATMAP_AXES[axis]
    except KeyError:
        raise ConfigError(f"unknown heatmap axis {axis!r}; expected one of {sorted(HEATMAP_AXES)}") from None
    return np.round(np.arange(lo, hi + step / 2, step), 10)


def _sirs_axis_hit(axis, values):
    if axis == "temperature":
        return (values < 36.0) | (values > 38.0)
    if axis == "pulse_rate":
        return values > 90.0
    return values > 20.0


@dataclass
class HeatmapGrid:
    x_axis: str
    y_axis: str
    x_edges: np.ndarray
    y_edges: np.ndarray
    counts: dict
    thresholds: dict
    outside_sirs_fraction: dict

    def sidecar(self) -> dict:
        return {
            "x_axis": self.x_axis,
            "y_axis": self.y_axis,
            "x_edges": self.x_edges.tolist(),
            "y_edges": self.y_edges.tolist(),
            "edge_rule": "bins are [edge_i, edge_i+1); values beyond the outer edges are counted in the end bins",
            "rows": "y bins (first row = lowest y)",
            "columns": "x bins (first column = lowest x)",
            "thresholds": self.thresholds,
            "n": {k: int(v.sum()) for k, v in self.counts.items()},
            "outside_sirs_fraction": self.outside_sirs_fraction,
        }


def _bin(values, edges):
    idx = np.searchsorted(edges, values, side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


def heatmap_grid(x, y, labels, ages, x_axis="temperature", y_axis="pulse_rate", x_edges=None,
                 y_edges=None, min_age: float = 18.0) -> HeatmapGrid:
    """Count grids of adult records for the non-sepsis and sepsis panels.

    ``x``/``y`` use NaN for absent vitals; such records are excluded. Also
    reports, per panel, the fraction of records whose two plotted vitals do
    not both meet their SIRS criterion.
    """
    if x_axis == y_axis:
        raise ConfigError("heatmap axes must differ")
    xe = np.asarray(default_edges(x_axis) if x_edges is None else x_edges, dtype=np.float64)
    ye = np.asarray(default_edges(y_axis) if y_edges is None else y_edges, dtype=np.float64)
    for e in (xe, ye):
        if e.size < 2 or np.any(np.diff(e) <= 0):
            raise ConfigError("heatmap edges must be strictly increasing with at least two values")
    x = np.asarray(x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    lab = _bool_array(labels, "labels")
    ages = np.asarray(ages, dtype=np.float64)
    _check_lengths(x=x, y=yv, labels=lab, ages=ages)
    keep = ~np.isnan(x) & ~np.isnan(yv) & (ages >= min_age)
    if not keep.any():
        raise DataError("heatmap selection is empty (needs adults with both vitals present)")
    xb, yb = _bin(x[keep], xe), _bin(yv[keep], ye)
    inside = _sirs_axis_hit(x_axis, x[keep]) & _sirs_axis_hit(y_axis, yv[keep])
    lk = lab[keep]
    counts, outside = {}, {}
    shape = (ye.size - 1, xe.size - 1)
    for panel, sel in (("non_sepsis", ~lk), ("sepsis", lk)):
        grid = np.zeros(shape, dtype=np.int64)
        np.add.at(grid, (yb[sel], xb[sel]), 1)
        counts[panel] = grid
        outside[panel] = float(np.mean(~inside[sel])) if sel.any() else None
    thresholds = {x_axis: list(HEATMAP_AXES[x_axis][1]), y_axis: list(HEATMAP_AXES[y_axis][1])}
    return HeatmapGrid(x_axis, y_axis, xe, ye, counts, thresholds, outside)
