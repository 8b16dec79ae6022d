"""Cost-sensitive entropy decision tree over the seven blockwise features."""

import json
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import StratifiedKFold
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

logger = logging.getLogger(__name__)

FEATURE_NAMES = ("mdl", "ddl", "dde", "size_px", "major_axis_px", "minor_axis_px", "severity")
N_FEATURES = len(FEATURE_NAMES)
MODEL_FORMAT = "printdefect-tree"
MODEL_VERSION = 1

#: Operating point reported for a proprietary scanned-page dataset at
#: cost 2. Kept for reference; synthetic pages cannot reproduce it.
REFERENCE_COST = 2.0
REFERENCE_FALSE_ALARM = 0.088
REFERENCE_MISS_RATE = 0.266

# relative tolerance under which two split gains count as tied
_GAIN_RTOL = 1e-9
_PURE_ENTROPY = np.finfo(np.float64).eps


def cost_matrix(miss_cost=1.0, false_alarm_cost=1.0):
    """2x2 matrix ``c[i][j]``: cost of predicting ``j`` when the truth is ``i``."""
    c = np.array([[0.0, false_alarm_cost], [miss_cost, 0.0]])
    validate_cost(c)
    return c


def validate_cost(c):
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (2, 2):
        raise ValueError("cost matrix must be 2x2")
    if c[0, 0] != 0 or c[1, 1] != 0:
        raise ValueError("cost matrix diagonal must be zero")
    if not (c[0, 1] > 0 and c[1, 0] > 0):
        raise ValueError("cost matrix off-diagonal entries must be positive")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix must be finite")
    return c


def class_weights(c):
    """Per-class sample weights, normalised so that the class-0 weight is 1."""
    c = validate_cost(c)
    return np.array([1.0, c[1, 0] / c[0, 1]])


def entropy(w0, w1):
    """Binary Shannon entropy (bits) of weighted class masses; vectorised."""
    w0 = np.asarray(w0, dtype=np.float64)
    w1 = np.asarray(w1, dtype=np.float64)
    tot = w0 + w1
    with np.errstate(divide="ignore", invalid="ignore"):
        p0 = np.where(tot > 0, w0 / tot, 0.0)
        p1 = np.where(tot > 0, w1 / tot, 0.0)
        h = -(np.where(p0 > 0, p0 * np.log2(p0), 0.0) + np.where(p1 > 0, p1 * np.log2(p1), 0.0))
    return h


def weighted_gain(n0_left, n1_left, n0_right, n1_right, weights):
    """Information gain of a split with class counts weighted by ``weights``."""
    l0, l1 = weights[0] * np.asarray(n0_left), weights[1] * np.asarray(n1_left)
    r0, r1 = weights[0] * np.asarray(n0_right), weights[1] * np.asarray(n1_right)
    wl, wr = l0 + l1, r0 + r1
    tot = wl + wr
    return entropy(l0 + r0, l1 + r1) - (wl / tot) * entropy(l0, l1) - (wr / tot) * entropy(r0, r1)


def best_split(X, y, weights, min_samples_leaf=1):
    """Best (feature, threshold, gain) over midpoints of sorted unique values.

    Ties within a relative tolerance go to the lowest feature index, then the
    lowest threshold. Returns None when no admissible split exists.
    """
    n = y.size
    per_feature = []
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="mergesort")
        xs, ys = X[order, f], y[order]
        c1 = np.cumsum(ys)
        c0 = np.arange(1, n + 1) - c1
        # split after position i (left = first i+1 samples)
        pos = np.flatnonzero(xs[:-1] < xs[1:])
        left_n = pos + 1
        pos = pos[(left_n >= min_samples_leaf) & (n - left_n >= min_samples_leaf)]
        if pos.size == 0:
            continue
        n0l, n1l = c0[pos], c1[pos]
        gains = weighted_gain(n0l, n1l, c0[-1] - n0l, c1[-1] - n1l, weights)
        thresholds = (xs[pos] + xs[pos + 1]) / 2.0
        per_feature.append((f, thresholds, gains))
    if not per_feature:
        return None
    top = max(float(g.max()) for _, _, g in per_feature)
    cut = top - _GAIN_RTOL * abs(top)
    for f, thresholds, gains in per_feature:
        hits = np.flatnonzero(gains >= cut)
        if hits.size:
            k = int(hits[0])
            return f, float(thresholds[k]), float(gains[k])


def leaf_label(n0, n1, weights):
    w0, w1 = weights[0] * n0, weights[1] * n1
    return 1 if w1 > w0 * (1 + _GAIN_RTOL) else 0


class CostSensitiveTreeClassifier(ClassifierMixin, BaseEstimator):
    """Binary decision tree grown on cost-weighted entropy gain.

    Each training sample of class ``i`` carries weight ``c[i][1-i]``, which
    enters both the impurity of every node and the leaf vote.

    Parameters
    ----------
    cost : array-like of shape (2, 2), default=None
        Misclassification costs ``c[true][predicted]``. None means unit costs.
    max_depth : int or None, default=8
    min_samples_leaf : int, default=5
    """

    def __init__(self, cost=None, max_depth=8, min_samples_leaf=5):
        self.cost = cost
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf

    def _cost(self):
        return cost_matrix() if self.cost is None else validate_cost(self.cost)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, ensure_all_finite=True)
        y = y.astype(np.int64)
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if len(np.unique(y)) < 2:
            raise ValueError("training set needs samples of both classes")
        self.cost_ = self._cost()
        self.weights_ = class_weights(self.cost_)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        self.nodes_ = []
        self._grow(X, y, depth=0)
        self.depth_ = max(node["depth"] for node in self.nodes_)
        return self

    def _grow(self, X, y, depth):
        idx = len(self.nodes_)
        n1 = int(y.sum())
        n0 = y.size - n1
        node = {"depth": depth, "n0": n0, "n1": n1, "label": leaf_label(n0, n1, self.weights_),
                "feature": -1, "threshold": 0.0, "left": -1, "right": -1}
        self.nodes_.append(node)
        # weighted impurity at round-off level counts as pure, so an extreme
        # miss cost collapses the tree to the all-positive leaf
        if entropy(self.weights_[0] * n0, self.weights_[1] * n1) <= _PURE_ENTROPY:
            return idx
        if self.max_depth is not None and depth >= self.max_depth:
            return idx
        if y.size < 2 * self.min_samples_leaf:
            return idx
        split = best_split(X, y, self.weights_, self.min_samples_leaf)
        if split is None or split[2] < -1e-12:
            return idx
        f, thr, _ = split
        go_left = X[:, f] <= thr
        node["feature"], node["threshold"] = f, thr
        node["left"] = self._grow(X[go_left], y[go_left], depth + 1)
        node["right"] = self._grow(X[~go_left], y[~go_left], depth + 1)
        return idx

    def _leaf_index(self, x):
        i = 0
        while self.nodes_[i]["feature"] >= 0:
            node = self.nodes_[i]
            i = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
        return i

    def predict(self, X):
        check_is_fitted(self, "nodes_")
        X = check_array(X, dtype=np.float64, ensure_all_finite=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return np.array([self.nodes_[self._leaf_index(x)]["label"] for x in X], dtype=np.int64)

    @property
    def node_count(self):
        check_is_fitted(self, "nodes_")
        return len(self.nodes_)

    def structure(self):
        """Comparable nested description of the fitted tree."""
        check_is_fitted(self, "nodes_")

        def walk(i):
            n = self.nodes_[i]
            if n["feature"] < 0:
                return n["label"]
            return (n["feature"], n["threshold"], walk(n["left"]), walk(n["right"]))
        return walk(0)

    def to_dict(self, dataset_id=None):
        check_is_fitted(self, "nodes_")
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "feature_names": list(FEATURE_NAMES)[: self.n_features_in_],
            "cost": self.cost_.tolist(),
            "params": self.get_params(deep=False) | {"cost": self.cost_.tolist()},
            "train_meta": {"dataset": dataset_id, "node_count": len(self.nodes_), "depth": self.depth_},
            "nodes": [{k: v for k, v in n.items()} for n in self.nodes_],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not a printdefect tree model")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        params = dict(d["params"])
        model = cls(**params)
        model.cost_ = validate_cost(d["cost"])
        model.weights_ = class_weights(model.cost_)
        model.classes_ = np.array([0, 1])
        model.n_features_in_ = len(d["feature_names"])
        model.nodes_ = [dict(n) for n in d["nodes"]]
        for n in model.nodes_:
            if n["feature"] >= model.n_features_in_:
                raise ValueError("node feature index out of range")
        model.depth_ = d["train_meta"]["depth"]
        return model

    def save(self, path, dataset_id=None):
        with open(path, "w") as fh:
            json.dump(self.to_dict(dataset_id), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    @property
    def miss_rate(self):
        """FN / (TP + FN), or None without positives."""
        pos = self.tp + self.fn
        return self.fn / pos if pos else None

    @property
    def false_alarm(self):
        """FP / (FP + TN), or None without negatives."""
        neg = self.fp + self.tn
        return self.fp / neg if neg else None

    @classmethod
    def from_labels(cls, y_true, y_pred):
        y_true = np.asarray(y_true).astype(bool)
        y_pred = np.asarray(y_pred).astype(bool)
        return cls(
            tp=int(np.sum(y_true & y_pred)),
            fp=int(np.sum(~y_true & y_pred)),
            fn=int(np.sum(y_true & ~y_pred)),
            tn=int(np.sum(~y_true & ~y_pred)),
        )


def evaluate(model, X, y):
    if len(y) == 0:
        raise ValueError("no samples to evaluate")
    return ConfusionCounts.from_labels(y, model.predict(X))


@dataclass
class RocPoint:
    cost: float
    miss_rate: float
    false_alarm: float
    train_miss_rate: float
    train_false_alarm: float
    folds_used: int


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else float("nan")


def roc_sweep(X, y, costs, n_folds=5, max_depth=8, min_samples_leaf=5, random_state=0):
    """Cross-validated miss rate and false alarm for each cost.

    ``costs`` holds 2x2 matrices or scalars (a scalar ``k`` means
    ``c[1][0] = k`` and ``c[0][1] = 1``). Results are sorted by the miss
    cost. Folds whose training or test part lacks a class are skipped with
    a warning. Held-out rates are the fold means; training-set rates are
    reported alongside.
    """
    X = check_array(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if n_folds < 2:
        raise ValueError("need at least two folds")
    mats = [cost_matrix(float(c)) if np.ndim(c) == 0 else validate_cost(c) for c in costs]
    folds = list(StratifiedKFold(n_splits=n_folds, shuffle=True, random_state=random_state).split(X, y))
    out = []
    for c in sorted(mats, key=lambda m: (m[1, 0] / m[0, 1])):
        test_rates, train_rates, used = [], [], 0
        for k, (tr, te) in enumerate(folds):
            if len(np.unique(y[tr])) < 2 or len(np.unique(y[te])) < 2:
                warnings.warn(f"fold {k} skipped: single class")
                continue
            model = CostSensitiveTreeClassifier(c, max_depth, min_samples_leaf).fit(X[tr], y[tr])
            test_rates.append(evaluate(model, X[te], y[te]))
            train_rates.append(evaluate(model, X[tr], y[tr]))
            used += 1
        out.append(RocPoint(
            cost=float(c[1, 0] / c[0, 1]),
            miss_rate=_mean([r.miss_rate for r in test_rates]),
            false_alarm=_mean([r.false_alarm for r in test_rates]),
            train_miss_rate=_mean([r.miss_rate for r in train_rates]),
            train_false_alarm=_mean([r.false_alarm for r in train_rates]),
            folds_used=used,
        ))
    return out
