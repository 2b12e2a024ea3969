"""Second-order gradient-boosted trees with a logistic stacking layer.

Trees are grown depth-wise with exact greedy split enumeration. Missing
values (NaN) are routed by a learned default direction. Gradients and
hessians are accumulated as fixed-point integers (``GRAD_SCALE``), which makes
every partition sum exact and independent of summation order, so threaded
and serial split search, and brute-force enumeration, agree bit for bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ConfigError, ConvergenceError, DataError

GRAD_SCALE = 2.0 ** 30
PROB_CLIP = 1e-6
STACK_TOL = 1e-8
STACK_MAX_ITER = 100


@dataclass(frozen=True)
class GbtParams:
    rounds: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    l2_reg: float = 1.0
    split_gain_min: float = 0.0
    min_child_hessian: float = 1.0
    subsample_rows: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if int(self.rounds) != self.rounds or self.rounds < 1:
            raise ConfigError("gbt.rounds must be an integer >= 1")
        if int(self.max_depth) != self.max_depth or self.max_depth < 0:
            raise ConfigError("gbt.max_depth must be an integer >= 0")
        if not 0 < self.learning_rate <= 1:
            raise ConfigError("gbt.learning_rate must be in (0, 1]")
        if self.l2_reg < 0 or self.split_gain_min < 0 or self.min_child_hessian < 0:
            raise ConfigError("gbt.l2_reg, split_gain_min and min_child_hessian must be >= 0")
        if not 0 < self.subsample_rows <= 1:
            raise ConfigError("gbt.subsample_rows must be in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ClassWeights:
    w_pos: float
    w_neg: float

    def for_labels(self, y) -> np.ndarray:
        return np.where(np.asarray(y, dtype=bool), self.w_pos, self.w_neg)


def class_weights(labels) -> ClassWeights:
    """Inverse-frequency ("balanced") weights: ``w_c = N / (2 N_c)``."""
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("class weights need both classes in the labels")
    return ClassWeights(y.size / (2.0 * n_pos), y.size / (2.0 * n_neg))


def quantize(values) -> np.ndarray:
    """Fixed-point representation used for all gradient/hessian sums."""
    return np.rint(np.asarray(values, dtype=np.float64) * GRAD_SCALE).astype(np.int64)


def split_gain(gl, hl, gr, hr, g, h, lam, gamma):
    """Loss reduction of a split; ``g``/``h`` are the parent totals (gl + gr, hl + hr)."""
    return 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - g * g / (h + lam)) - gamma


def leaf_weight(g, h, lam):
    return -g / (h + lam)


def midpoint(a: float, b: float) -> float:
    mid = (a + b) / 2.0
    # adjacent floats: the midpoint may round onto ``a``, which would send ``a`` right
    return b if mid <= a else mid


@dataclass(frozen=True)
class Split:
    gain: float
    feature: int
    threshold: float
    default_left: bool


# --------------------------------------------------------------------------
# trees


@dataclass
class Tree:
    """Flattened tree; ``feature == -1`` marks a leaf whose ``value`` is already scaled by eta."""

    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        n = X.shape[0]
        idx = np.zeros(n, dtype=np.int64)
        rows = np.arange(n)
        for _ in range(self.depth()):
            feat = self.feature[idx]
            internal = feat >= 0
            if not internal.any():
                break
            x = X[rows, np.where(internal, feat, 0)]
            go_left = np.where(np.isnan(x), self.default_left[idx], x < self.threshold[idx])
            nxt = np.where(go_left, self.left[idx], self.right[idx])
            idx = np.where(internal, nxt, idx)
        return idx

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "default_left": self.default_left.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["default_left"], dtype=bool),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
        )


@dataclass
class Ensemble:
    trees: list
    base_score: float
    params: GbtParams
    loss_trace: list = field(default_factory=list)

    def margin(self, X: np.ndarray) -> np.ndarray:
        out = np.full(X.shape[0], self.base_score, dtype=np.float64)
        for tree in self.trees:
            out += tree.predict(X)
        return out


# --------------------------------------------------------------------------
# split search


class _ColumnIndex:
    """Per-column structures built once per training run."""

    def __init__(self, X: np.ndarray):
        self.X = X
        nan = np.isnan(X)
        is_binary = ~nan.any(axis=0) & np.all((X == 0) | (X == 1), axis=0)
        self.binary_cols = np.flatnonzero(is_binary)
        self.general_cols = np.flatnonzero(~is_binary)
        # rows holding a 1, grouped by binary column (column position within binary_cols)
        sub = X[:, self.binary_cols] == 1
        rows, pos = np.nonzero(sub)
        self.ones_row = rows
        self.ones_col = pos
        # present rows sorted by value (ties by row index) for every general column
        self.sorted_rows = {}
        for f in self.general_cols:
            present = np.flatnonzero(~nan[:, f])
            order = np.argsort(X[present, f], kind="stable")
            self.sorted_rows[int(f)] = present[order]


def _to_float(a):
    return a.astype(np.float64) / GRAD_SCALE


def _general_column(cx, f, g_int, h_int, node_of, G, H, params):
    """Best (gain, threshold, default_left) per node for one column; gain -inf if none."""
    n_nodes = len(G)
    best_gain = np.full(n_nodes, -np.inf)
    best_thr = np.zeros(n_nodes)
    best_left = np.ones(n_nodes, dtype=bool)

    r = cx.sorted_rows[f]
    k = node_of[r]
    keep = k >= 0
    r, k = r[keep], k[keep]
    if r.size < 2:
        return best_gain, best_thr, best_left
    order = np.argsort(k.astype(np.int32), kind="stable")
    r, k = r[order], k[order]
    v = cx.X[r, f]
    cg = np.cumsum(g_int[r])
    ch = np.cumsum(h_int[r])

    starts = np.flatnonzero(np.r_[True, k[1:] != k[:-1]])
    ends = np.r_[starts[1:], len(k)] - 1
    base_g = np.zeros(n_nodes, dtype=np.int64)
    base_h = np.zeros(n_nodes, dtype=np.int64)
    tot_g = np.zeros(n_nodes, dtype=np.int64)
    tot_h = np.zeros(n_nodes, dtype=np.int64)
    gk = k[starts]
    base_g[gk] = np.where(starts > 0, cg[starts - 1], 0)
    base_h[gk] = np.where(starts > 0, ch[starts - 1], 0)
    tot_g[gk] = cg[ends] - base_g[gk]
    tot_h[gk] = ch[ends] - base_h[gk]

    cand = np.flatnonzero((k[1:] == k[:-1]) & (v[1:] != v[:-1]))
    if cand.size == 0:
        return best_gain, best_thr, best_left
    kc = k[cand]
    lp_g = cg[cand] - base_g[kc]
    lp_h = ch[cand] - base_h[kc]
    miss_g = G[kc] - tot_g[kc]
    miss_h = H[kc] - tot_h[kc]
    thr = (v[cand] + v[cand + 1]) / 2.0
    low = thr <= v[cand]
    thr[low] = v[cand + 1][low]

    lam, gamma, mch = params.l2_reg, params.split_gain_min, params.min_child_hessian
    g_par = _to_float(G[kc])
    h_par = _to_float(H[kc])
    cands = []
    for default_left, gl_i, hl_i in ((True, lp_g + miss_g, lp_h + miss_h), (False, lp_g, lp_h)):
        gl, hl = _to_float(gl_i), _to_float(hl_i)
        gr, hr = _to_float(G[kc] - gl_i), _to_float(H[kc] - hl_i)
        gain = split_gain(gl, hl, gr, hr, g_par, h_par, lam, gamma)
        ok = (hl >= mch) & (hr >= mch) & (gain > 0)
        cands.append((np.flatnonzero(ok), gain, default_left))

    node_l = np.concatenate([kc[i] for i, _, _ in cands])
    if node_l.size == 0:
        return best_gain, best_thr, best_left
    gains = np.concatenate([g[i] for i, g, _ in cands])
    thrs = np.concatenate([thr[i] for i, _, _ in cands])
    dirs = np.concatenate([np.full(i.size, 0 if d else 1) for i, _, d in cands])
    order = np.lexsort((dirs, thrs, -gains, node_l))
    node_l, gains, thrs, dirs = node_l[order], gains[order], thrs[order], dirs[order]
    first = np.r_[True, node_l[1:] != node_l[:-1]]
    sel = node_l[first]
    best_gain[sel] = gains[first]
    best_thr[sel] = thrs[first]
    best_left[sel] = dirs[first] == 0
    return best_gain, best_thr, best_left


def _binary_columns(cx, g_int, h_int, node_of, G, H, counts, params):
    """Best gain and column per node over all 0/1 columns (threshold 0.5, no missing)."""
    n_nodes = len(G)
    nb = len(cx.binary_cols)
    best_gain = np.full(n_nodes, -np.inf)
    best_col = np.full(n_nodes, -1, dtype=np.int64)
    if nb == 0:
        return best_gain, best_col
    k = node_of[cx.ones_row]
    keep = k >= 0
    rows = cx.ones_row[keep]
    key = k[keep] * nb + cx.ones_col[keep]
    g1 = np.zeros(n_nodes * nb, dtype=np.int64)
    h1 = np.zeros(n_nodes * nb, dtype=np.int64)
    np.add.at(g1, key, g_int[rows])
    np.add.at(h1, key, h_int[rows])
    c1 = np.bincount(key, minlength=n_nodes * nb).reshape(n_nodes, nb)
    g1 = g1.reshape(n_nodes, nb)
    h1 = h1.reshape(n_nodes, nb)
    c0 = counts[:, None] - c1
    # value 0 < 0.5 goes left
    gl_i = G[:, None] - g1
    hl_i = H[:, None] - h1
    gl, hl = _to_float(gl_i), _to_float(hl_i)
    gr, hr = _to_float(g1), _to_float(h1)
    gain = split_gain(gl, hl, gr, hr, _to_float(G)[:, None], _to_float(H)[:, None],
                      params.l2_reg, params.split_gain_min)
    mch = params.min_child_hessian
    ok = (c1 > 0) & (c0 > 0) & (hl >= mch) & (hr >= mch) & (gain > 0)
    gain = np.where(ok, gain, -np.inf)
    col = np.argmax(gain, axis=1)
    best_gain = gain[np.arange(n_nodes), col]
    best_col = np.where(np.isfinite(best_gain), cx.binary_cols[col], -1)
    return best_gain, best_col


def _node_totals(node_of, g_int, h_int, n_nodes):
    active = node_of >= 0
    k = node_of[active]
    G = np.zeros(n_nodes, dtype=np.int64)
    H = np.zeros(n_nodes, dtype=np.int64)
    np.add.at(G, k, g_int[active])
    np.add.at(H, k, h_int[active])
    counts = np.bincount(k, minlength=n_nodes)
    return G, H, counts


def _best_splits(cx, g_int, h_int, node_of, n_nodes, params, n_threads=1):
    """Best split for every active node slot; feature -1 where no valid split exists."""
    G, H, counts = _node_totals(node_of, g_int, h_int, n_nodes)
    best_gain = np.full(n_nodes, -np.inf)
    best_feat = np.full(n_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    best_left = np.ones(n_nodes, dtype=bool)

    def run(f):
        return _general_column(cx, int(f), g_int, h_int, node_of, G, H, params)

    cols = list(cx.general_cols)
    if n_threads > 1 and len(cols) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(run, cols))
    else:
        results = [run(f) for f in cols]

    candidates = [(f, res) for f, res in zip(cols, results)]
    bgain, bcol = _binary_columns(cx, g_int, h_int, node_of, G, H, counts, params)
    candidates.append((None, (bgain, bcol)))

    # merge in increasing feature order: a later feature must win strictly on gain
    merged = []
    for f, res in candidates:
        if f is None:
            gain, col = res
            merged.append((gain, col, np.full(n_nodes, 0.5), np.ones(n_nodes, dtype=bool)))
        else:
            gain, thr, left = res
            merged.append((gain, np.full(n_nodes, f, dtype=np.int64), thr, left))
    for gain, feat, thr, left in merged:
        better = (gain > best_gain) | ((gain == best_gain) & np.isfinite(gain) & (feat < best_feat))
        best_gain = np.where(better, gain, best_gain)
        best_feat = np.where(better, feat, best_feat)
        best_thr = np.where(better, thr, best_thr)
        best_left = np.where(better, left, best_left)
    best_feat[~np.isfinite(best_gain)] = -1
    return best_gain, best_feat, best_thr, best_left, G, H


def find_best_split(X, g_int, h_int, rows=None, params: GbtParams = GbtParams()) -> Optional[Split]:
    """Best split of the node holding ``rows`` (all rows by default), or ``None``.

    ``g_int``/``h_int`` are fixed-point gradients from :func:`quantize`. Ties
    go to the lowest feature index, then the lowest threshold, then default-left.
    """
    X = np.asarray(X, dtype=np.float64)
    node_of = np.full(X.shape[0], -1, dtype=np.int64)
    node_of[np.arange(X.shape[0]) if rows is None else np.asarray(rows)] = 0
    gain, feat, thr, left, _, _ = _best_splits(_ColumnIndex(X), np.asarray(g_int, dtype=np.int64),
                                               np.asarray(h_int, dtype=np.int64), node_of, 1, params)
    if feat[0] < 0:
        return None
    return Split(float(gain[0]), int(feat[0]), float(thr[0]), bool(left[0]))


def _grow_tree(cx, g_int, h_int, sampled, params, n_threads):
    X = cx.X
    n = X.shape[0]
    node_of = np.where(sampled, 0, -1).astype(np.int64)
    feature, threshold, default_left, left, right, value = [-1], [0.0], [True], [-1], [-1], [0.0]
    active = [0]
    lam, eta = params.l2_reg, params.learning_rate

    for depth in range(params.max_depth + 1):
        n_slots = len(active)
        if depth == params.max_depth:
            G, H, _ = _node_totals(node_of, g_int, h_int, n_slots)
            feat = np.full(n_slots, -1)
        else:
            _, feat, thr, dleft, G, H = _best_splits(cx, g_int, h_int, node_of, n_slots, params, n_threads)

        slot_map = np.full(n_slots, -1, dtype=np.int64)
        next_active = []
        for slot, node_id in enumerate(active):
            if feat[slot] < 0:
                value[node_id] = eta * leaf_weight(G[slot] / GRAD_SCALE, H[slot] / GRAD_SCALE, lam)
                continue
            feature[node_id] = int(feat[slot])
            threshold[node_id] = float(thr[slot])
            default_left[node_id] = bool(dleft[slot])
            for side in (left, right):
                side[node_id] = len(feature)
                feature.append(-1)
                threshold.append(0.0)
                default_left.append(True)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
            slot_map[slot] = len(next_active) // 2
            next_active.extend((left[node_id], right[node_id]))
        if not next_active:
            break

        rows = np.flatnonzero(node_of >= 0)
        slots = node_of[rows]
        split_rows = slot_map[slots] >= 0
        rows, slots = rows[split_rows], slots[split_rows]
        new_node_of = np.full(n, -1, dtype=np.int64)
        x = X[rows, feat[slots]]
        go_left = np.where(np.isnan(x), dleft[slots], x < thr[slots])
        new_node_of[rows] = 2 * slot_map[slots] + np.where(go_left, 0, 1)
        node_of = new_node_of
        active = next_active

    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(default_left, dtype=bool),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
    )


def weighted_log_loss(margin, y, w) -> float:
    losses = np.logaddexp(0.0, margin) - y * margin
    return float(np.dot(w, losses) / w.sum())


def _subsample_mask(n, params, round_index):
    if params.subsample_rows >= 1.0:
        return np.ones(n, dtype=bool)
    rng = np.random.Generator(np.random.Philox(key=[params.seed & (2**64 - 1), round_index]))
    return rng.random(n) < params.subsample_rows


def train_gbt(X, y, weights, params: GbtParams = GbtParams(), n_threads: int = 1) -> Ensemble:
    """Boost ``params.rounds`` trees on the weighted logistic loss."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or w.shape != y.shape:
        raise DataError(f"dimension mismatch: X {X.shape}, y {y.shape}, weights {w.shape}")
    if not ((y == 0) | (y == 1)).all() or y.min() == y.max():
        raise DataError("labels must be 0/1 with both classes present")
    wp = float(np.dot(w, y))
    wn = float(np.dot(w, 1.0 - y))
    if wp <= 0 or wn <= 0:
        raise DataError("both classes need positive total weight")
    base = math.log(wp / wn)

    cx = _ColumnIndex(X)
    margin = np.full(X.shape[0], base)
    ensemble = Ensemble([], base, params, [weighted_log_loss(margin, y, w)])
    for round_index in range(params.rounds):
        p = expit(margin)
        g_int = quantize(w * (p - y))
        h_int = quantize(w * p * (1.0 - p))
        sampled = _subsample_mask(X.shape[0], params, round_index)
        tree = _grow_tree(cx, g_int, h_int, sampled, params, n_threads)
        ensemble.trees.append(tree)
        margin = margin + tree.predict(X)
        ensemble.loss_trace.append(weighted_log_loss(margin, y, w))
    return ensemble


def predict_margin(ensemble: Ensemble, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n_features = _n_features(ensemble)
    if n_features is not None and X.shape[1] < n_features:
        raise DataError(f"dimension mismatch: model splits on column {n_features - 1}, input has {X.shape[1]}")
    return ensemble.margin(X)


def _n_features(ensemble):
    used = [int(t.feature.max()) for t in ensemble.trees if t.n_nodes > 1]
    return max(used) + 1 if used else None


# --------------------------------------------------------------------------
# stacking layer


def _newton_logistic(z, y, w, tol=STACK_TOL, max_iter=STACK_MAX_ITER):
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    a, b = 1.0, 0.0

    def loss(a_, b_):
        return weighted_log_loss(a_ * z + b_, y, w)

    current = loss(a, b)
    for _ in range(max_iter):
        p = expit(a * z + b)
        r = w * (p - y)
        s = w * p * (1.0 - p)
        grad = np.array([np.dot(r, z), r.sum()])
        hess = np.array([[np.dot(s, z * z), np.dot(s, z)], [np.dot(s, z), s.sum()]])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular Hessian in stacking regression", (a, b)) from None
        # damp only when the full step increases the loss; convergence is judged
        # on the undamped Newton step so separable data cannot stall into a fake fit
        t = 1.0
        while True:
            na, nb = a - t * step[0], b - t * step[1]
            new = loss(na, nb)
            if new <= current or t < 1e-10:
                break
            t *= 0.5
        a, b, current = na, nb, new
        if max(abs(step[0]), abs(step[1])) < tol:
            return a, b
    raise ConvergenceError(f"stacking regression did not converge in {max_iter} iterations", (a, b))


def fit_stack(probabilities, labels, weights):
    """Weighted logistic regression of the label on ``logit(p)``; returns (slope, intercept)."""
    p = np.clip(np.asarray(probabilities, dtype=np.float64), PROB_CLIP, 1.0 - PROB_CLIP)
    return _newton_logistic(np.log(p) - np.log1p(-p), labels, weights)


@dataclass
class BoostedStackModel:
    ensemble: Ensemble
    stack_a: float
    stack_b: float

    def stack_logit(self, X) -> np.ndarray:
        return self.stack_a * predict_margin(self.ensemble, X) + self.stack_b


def predict_stack(model: BoostedStackModel, X) -> np.ndarray:
    p = expit(model.stack_logit(X))
    return np.clip(p, np.finfo(float).tiny, 1.0 - np.finfo(float).eps / 2)


# --------------------------------------------------------------------------
# estimator


class BoostedStackClassifier(ClassifierMixin, BaseEstimator):
    """Boosted trees on class-weighted logistic loss, calibrated by a logistic stack.

    Missing values must be NaN. ``predict`` thresholds the stacked probability
    at ``threshold`` (score >= threshold is positive).
    """

    def __init__(self, rounds=200, max_depth=6, learning_rate=0.1, l2_reg=1.0, split_gain_min=0.0,
                 min_child_hessian=1.0, subsample_rows=1.0, seed=0, class_weight="balanced",
                 threshold=0.5, n_threads=1):
        self.rounds = rounds
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.l2_reg = l2_reg
        self.split_gain_min = split_gain_min
        self.min_child_hessian = min_child_hessian
        self.subsample_rows = subsample_rows
        self.seed = seed
        self.class_weight = class_weight
        self.threshold = threshold
        self.n_threads = n_threads

    def gbt_params(self) -> GbtParams:
        return GbtParams(self.rounds, self.max_depth, self.learning_rate, self.l2_reg,
                         self.split_gain_min, self.min_child_hessian, self.subsample_rows, self.seed)

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y, dtype=np.float64, ensure_all_finite="allow-nan")
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise DataError("training labels must contain both classes")
        y01 = (y == self.classes_[1]).astype(np.float64)
        if self.class_weight == "balanced":
            self.class_weights_ = class_weights(y01)
        elif self.class_weight is None:
            self.class_weights_ = ClassWeights(1.0, 1.0)
        else:
            raise ConfigError("class_weight must be 'balanced' or None")
        w = self.class_weights_.for_labels(y01)
        if sample_weight is not None:
            w = w * np.asarray(sample_weight, dtype=np.float64)
        ensemble = train_gbt(X, y01, w, self.gbt_params(), n_threads=self.n_threads)
        z = np.clip(ensemble.margin(X), -_LOGIT_CLIP, _LOGIT_CLIP)
        a, b = _newton_logistic(z, y01, w)
        self.model_ = BoostedStackModel(ensemble, a, b)
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def train_loss_(self):
        return self.model_.ensemble.loss_trace

    def _check(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan")
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"dimension mismatch: expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def margin(self, X) -> np.ndarray:
        return self.model_.ensemble.margin(self._check(X))

    def decision_function(self, X) -> np.ndarray:
        """Stacked log-odds ``a * margin + b``."""
        return self.model_.stack_a * self.margin(X) + self.model_.stack_b

    def predict_proba(self, X) -> np.ndarray:
        p = predict_stack(self.model_, self._check(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        positive = self.predict_proba(X)[:, 1] >= self.threshold
        return np.where(positive, self.classes_[1], self.classes_[0])


_LOGIT_CLIP = math.log((1.0 - PROB_CLIP) / PROB_CLIP)
