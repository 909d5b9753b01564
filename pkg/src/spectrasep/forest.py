"""Deterministic random forest with balanced class weights and RFE.

100 trees by default, each grown on a bootstrap resample of n rows with
ceil(sqrt(p)) candidate features per split, Gini impurity weighted by
balanced class weights w_k = n / (K * n_k), and nodes expanded until
pure or fewer than 2 resampled rows remain. Thresholds are midpoints of
adjacent sorted values; ties in impurity decrease break on the lowest
feature index, then the lowest threshold. Every tree derives its own
seed from sha256(seed, tree_index), so parallel training is bit-identical
to serial training regardless of worker count.

Recursive feature elimination refits the forest on each of the 5 inner
training folds, averages the impurity importances across folds, and
removes the single least important feature per round.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .errors import ValidationError
from .features import FeatureTable
from .seeding import subseed

MODEL_FORMAT = "spectrasep-rf"
MODEL_VERSION = 1

_NO_FEATURE = -1
_MIN_DECREASE = 1e-12


@dataclass
class Tree:
    """Array-encoded binary tree; children are -1 at leaves."""

    feature: np.ndarray  # int32, -1 for leaves
    threshold: np.ndarray  # float64
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    value: np.ndarray  # (n_nodes, n_classes) leaf class-weight mass, normalized
    importance: np.ndarray  # (n_features,) summed weighted impurity decrease

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int32)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            f = self.feature[node[idx]]
            go_left = x[idx, f] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
            active = self.feature[node] >= 0
        return self.value[node]


@dataclass
class RandomForestModel:
    trees: list[Tree]
    n_features: int
    classes: np.ndarray
    class_weights: np.ndarray
    seed: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _balanced_weights(y_codes: np.ndarray, n_classes: int) -> np.ndarray:
    counts = np.bincount(y_codes, minlength=n_classes)
    return y_codes.shape[0] / (n_classes * counts.astype(np.float64))


def _best_split(Xsub, y_codes, weights, n_classes):
    """Best (feature_column, threshold, decrease) over the candidate columns.

    Evaluates every threshold of every candidate feature in one pass.
    Ties in weighted impurity decrease resolve to the lowest column, then
    the lowest threshold, by scanning columns first and ascending sorted
    positions second and keeping the first maximum.
    """
    n, m = Xsub.shape
    order = np.argsort(Xsub, axis=0, kind="stable")
    xs = np.take_along_axis(Xsub, order, axis=0)
    boundary = xs[:-1] < xs[1:]
    if not boundary.any():
        return None
    class_tot = np.zeros(n_classes)
    np.add.at(class_tot, y_codes, weights)
    w_total = class_tot.sum()
    class_cum = np.empty((n_classes, n - 1, m))
    for k in range(n_classes):
        wk = np.where(y_codes == k, weights, 0.0)
        class_cum[k] = np.cumsum(wk[order], axis=0)[:-1]
    wl = class_cum.sum(axis=0)
    wr = w_total - wl
    sq_left = np.square(class_cum).sum(axis=0)
    sq_right = np.square(class_tot[:, None, None] - class_cum).sum(axis=0)
    weighted_gini_parent = w_total - np.square(class_tot).sum() / w_total
    with np.errstate(divide="ignore", invalid="ignore"):
        decrease = weighted_gini_parent - (wl - sq_left / wl) - (wr - sq_right / wr)
    decrease[~boundary] = -np.inf
    flat = np.argmax(decrease.T)  # column-major scan: lowest column, lowest threshold
    col, pos = divmod(int(flat), n - 1)
    best = decrease[pos, col]
    if not np.isfinite(best) or best <= _MIN_DECREASE:
        return None
    threshold = 0.5 * (xs[pos, col] + xs[pos + 1, col])
    return col, float(threshold), float(best)


def _grow_tree(X, y_codes, class_weights, n_classes, max_features, rng):
    n = X.shape[0]
    bootstrap = rng.integers(0, n, n)
    counts = np.bincount(bootstrap, minlength=n).astype(np.float64)
    rows0 = np.flatnonzero(counts > 0)

    feature, threshold = [], []
    left, right, value = [], [], []
    importance = np.zeros(X.shape[1])

    def leaf(rows):
        mass = np.zeros(n_classes)
        np.add.at(mass, y_codes[rows], counts[rows] * class_weights[y_codes[rows]])
        feature.append(_NO_FEATURE)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(mass / mass.sum())
        return len(feature) - 1

    def split(rows):
        n_samples = counts[rows].sum()
        if n_samples < 2 or np.unique(y_codes[rows]).size == 1:
            return leaf(rows)
        candidates = np.sort(rng.choice(X.shape[1], size=max_features, replace=False))
        weights = counts[rows] * class_weights[y_codes[rows]]
        found = _best_split(X[np.ix_(rows, candidates)], y_codes[rows], weights, n_classes)
        if found is None:
            return leaf(rows)
        col, thr, dec = found
        f = int(candidates[col])
        left_mask = X[rows, f] <= thr
        node = len(feature)
        feature.append(f)
        threshold.append(thr)
        left.append(-1)
        right.append(-1)
        value.append(np.zeros(n_classes))
        importance[f] += dec
        left[node] = split(rows[left_mask])
        right[node] = split(rows[~left_mask])
        return node

    split(rows0)
    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
        importance=importance,
    )


def _build_one(X, y_codes, class_weights, n_classes, max_features, tree_seed):
    rng = np.random.default_rng(tree_seed)
    return _grow_tree(X, y_codes, class_weights, n_classes, max_features, rng)


def fit(
    X,
    y,
    seed: int,
    n_trees: int = 100,
    class_weight: str | None = "balanced",
    n_jobs: int = 1,
) -> RandomForestModel:
    """Train the forest. Deterministic given the seed, whatever n_jobs is."""
    table = None
    if isinstance(X, FeatureTable):
        table = X
        X = table.values
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError(f"feature matrix must be nonempty 2-D, got shape {X.shape}")
    if y.shape[0] != X.shape[0]:
        raise ValidationError(f"{y.shape[0]} labels for {X.shape[0]} rows")
    if not np.isfinite(X).all():
        raise ValidationError("non-finite feature values (impute before fitting)")
    classes, y_codes = np.unique(y, return_inverse=True)
    if classes.size < 2:
        raise ValidationError("training data holds a single class")
    n_classes = classes.size
    if class_weight == "balanced":
        class_weights = _balanced_weights(y_codes, n_classes)
    elif class_weight is None:
        class_weights = np.ones(n_classes)
    else:
        raise ValidationError(f"unknown class_weight {class_weight!r}")
    max_features = int(np.ceil(np.sqrt(X.shape[1])))
    tree_seeds = [subseed(seed, t) for t in range(n_trees)]
    if n_jobs == 1:
        trees = [
            _build_one(X, y_codes, class_weights, n_classes, max_features, s)
            for s in tree_seeds
        ]
    else:
        trees = Parallel(n_jobs=n_jobs)(
            delayed(_build_one)(X, y_codes, class_weights, n_classes, max_features, s)
            for s in tree_seeds
        )
    return RandomForestModel(
        trees=trees,
        n_features=X.shape[1],
        classes=classes,
        class_weights=class_weights,
        seed=int(seed),
    )


def predict_proba(model: RandomForestModel, X) -> np.ndarray:
    """Average of per-tree leaf probability vectors; rows sum to 1."""
    if isinstance(X, FeatureTable):
        X = X.values
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValidationError(
            f"expected {model.n_features} features, got shape {X.shape}"
        )
    out = np.zeros((X.shape[0], model.classes.size))
    for tree in model.trees:
        out += tree.predict_proba(X)
    return out / model.n_trees


def predict(model: RandomForestModel, X) -> np.ndarray:
    return model.classes[np.argmax(predict_proba(model, X), axis=1)]


def feature_importance(model: RandomForestModel) -> np.ndarray:
    """Mean decrease in impurity over trees, normalized to sum 1.

    All-zero when no split ever improved impurity (constant data).
    """
    total = np.zeros(model.n_features)
    for tree in model.trees:
        total += tree.importance
    total /= model.n_trees
    s = total.sum()
    return total / s if s > 0 else total


@dataclass(frozen=True)
class RfeRanking:
    """Feature indices in elimination order, first eliminated first.

    The final survivor (the most important feature) is the last entry,
    so the sequence is a permutation of range(n_features).
    """

    elimination_order: tuple[int, ...]

    def top(self, k: int) -> tuple[int, ...]:
        """The k most important features, most important first."""
        if k <= 0:
            return ()
        return tuple(reversed(self.elimination_order[-k:]))


def rfe_rank(inner_folds: list[tuple[np.ndarray, np.ndarray]], seed: int,
             n_trees: int = 100, n_jobs: int = 1) -> RfeRanking:
    """Eliminate one feature per round from importances averaged over folds.

    inner_folds holds the 5 inner-fold training sets (X, y) over an
    identical feature set. Per round, a forest is fit on each fold, the
    normalized importances are averaged across folds, and the feature
    with the smallest mean importance is dropped (ties resolve to the
    lowest original feature index).
    """
    if not inner_folds:
        raise ValidationError("rfe_rank requires at least one fold")
    p = inner_folds[0][0].shape[1]
    if p < 2:
        raise ValidationError("rfe_rank requires at least 2 features")
    for X, _ in inner_folds:
        if X.shape[1] != p:
            raise ValidationError("inner folds must share an identical feature set")
    remaining = list(range(p))
    eliminated: list[int] = []
    for round_idx in range(p - 1):
        mean_importance = np.zeros(len(remaining))
        for fold_idx, (X, y) in enumerate(inner_folds):
            model = fit(
                X[:, remaining], y, seed=subseed(seed, round_idx, fold_idx),
                n_trees=n_trees, n_jobs=n_jobs,
            )
            mean_importance += feature_importance(model)
        mean_importance /= len(inner_folds)
        drop = int(np.argmin(mean_importance))  # first minimum = lowest index
        eliminated.append(remaining.pop(drop))
    eliminated.extend(remaining)
    return RfeRanking(elimination_order=tuple(eliminated))


def model_to_json(model: RandomForestModel) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "n_features": model.n_features,
        "classes": model.classes.tolist(),
        "class_weights": model.class_weights.tolist(),
        "seed": model.seed,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
                "importance": t.importance.tolist(),
            }
            for t in model.trees
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def model_from_json(text: str) -> RandomForestModel:
    doc = json.loads(text)
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ValidationError(
            f"unsupported model format {doc.get('format')!r} v{doc.get('version')!r}"
        )
    trees = [
        Tree(
            feature=np.asarray(t["feature"], dtype=np.int32),
            threshold=np.asarray(t["threshold"], dtype=np.float64),
            left=np.asarray(t["left"], dtype=np.int32),
            right=np.asarray(t["right"], dtype=np.int32),
            value=np.asarray(t["value"], dtype=np.float64),
            importance=np.asarray(t["importance"], dtype=np.float64),
        )
        for t in doc["trees"]
    ]
    return RandomForestModel(
        trees=trees,
        n_features=int(doc["n_features"]),
        classes=np.asarray(doc["classes"]),
        class_weights=np.asarray(doc["class_weights"], dtype=np.float64),
        seed=int(doc["seed"]),
    )


def save_model(model: RandomForestModel, path: str | Path) -> None:
    Path(path).write_text(model_to_json(model), encoding="utf-8")


def load_model(path: str | Path) -> RandomForestModel:
    return model_from_json(Path(path).read_text(encoding="utf-8"))
