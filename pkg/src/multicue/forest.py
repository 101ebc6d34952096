"""Random decision forest: CART trees with Gini impurity, bootstrap bags,
per-node feature subsampling and JSON serialization.

Training is deterministic given the seed; trees store class histograms at
the leaves so predictions are probability vectors (mean of leaf
histograms across trees).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SERIALIZATION_VERSION = 1


class TrainingError(ValueError):
    pass


@dataclass
class _Tree:
    # flat arrays; children index -1 marks a leaf
    feature: list[int]
    threshold: list[float]
    left: list[int]
    right: list[int]
    histogram: list[list[float] | None]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        if n == 0:
            width = len(next(h for h in self.histogram if h is not None))
            return np.zeros((0, width))
        node = np.zeros(n, dtype=int)
        active = np.arange(n)
        while active.size:
            feats = np.array([self.feature[i] for i in node[active]])
            decided = feats < 0
            still = active[~decided]
            active = still
            if still.size == 0:
                break
            cur = node[still]
            f = np.array([self.feature[i] for i in cur])
            thr = np.array([self.threshold[i] for i in cur])
            go_left = X[still, f] <= thr
            nxt = np.where(go_left,
                           np.array([self.left[i] for i in cur]),
                           np.array([self.right[i] for i in cur]))
            node[still] = nxt
        out = np.array([self.histogram[i] for i in node])
        return out


def _gini_best_split(X, y, n_classes, feature_ids, min_leaf, rng):
    """Best (feature, threshold, gain) over the sampled features."""
    n = y.shape[0]
    counts_total = np.bincount(y, minlength=n_classes).astype(float)
    best = (None, 0.0, 0.0)
    parent_gini = 1.0 - np.sum((counts_total / n) ** 2)
    for f in feature_ids:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), ys] = 1.0
        left_counts = np.cumsum(onehot, axis=0)
        nl = np.arange(1, n + 1, dtype=float)
        nr = n - nl
        valid = (xs[:-1] < xs[1:]) & (nl[:-1] >= min_leaf) & (nr[:-1] >= min_leaf)
        if not valid.any():
            continue
        lc = left_counts[:-1]
        rc = counts_total[None, :] - lc
        gini_l = 1.0 - np.sum((lc / nl[:-1, None]) ** 2, axis=1)
        gini_r = 1.0 - np.sum((rc / np.maximum(nr[:-1, None], 1)) ** 2, axis=1)
        weighted = (nl[:-1] * gini_l + nr[:-1] * gini_r) / n
        weighted[~valid] = np.inf
        k = int(np.argmin(weighted))
        gain = parent_gini - weighted[k]
        if gain > best[2] + 1e-12:
            thr = 0.5 * (xs[k] + xs[k + 1])
            best = (f, float(thr), float(gain))
    return best


def _grow_tree(X, y, n_classes, max_depth, min_leaf, n_sub_features, rng) -> _Tree:
    tree = _Tree([], [], [], [], [])

    def leaf(idx):
        hist = np.bincount(y[idx], minlength=n_classes).astype(float)
        hist /= hist.sum()
        node = len(tree.feature)
        tree.feature.append(-1)
        tree.threshold.append(0.0)
        tree.left.append(-1)
        tree.right.append(-1)
        tree.histogram.append(hist.tolist())
        return node

    def grow(idx, depth):
        ys = y[idx]
        if depth >= max_depth or idx.size < 2 * min_leaf or np.all(ys == ys[0]):
            return leaf(idx)
        feats = rng.choice(X.shape[1], size=n_sub_features, replace=False)
        f, thr, gain = _gini_best_split(X[idx], ys, n_classes, feats, min_leaf, rng)
        if f is None or gain <= 0.0:
            return leaf(idx)
        mask = X[idx, f] <= thr
        node = len(tree.feature)
        tree.feature.append(int(f))
        tree.threshold.append(thr)
        tree.left.append(-1)
        tree.right.append(-1)
        tree.histogram.append(None)
        tree.left[node] = grow(idx[mask], depth + 1)
        tree.right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(X.shape[0]), 0)
    return tree


@dataclass
class ForestModel:
    trees: list[_Tree]
    n_classes: int
    feature_dim: int
    class_names: list[str]
    oob_accuracy: float | None
    params: dict = field(default_factory=dict)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.feature_dim:
            raise ValueError(
                f"feature dim {X.shape[1]} != model dim {self.feature_dim}")
        probs = np.zeros((X.shape[0], self.n_classes))
        for tree in self.trees:
            probs += tree.predict_proba(X)
        probs /= len(self.trees)
        return probs

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Class indices; ties resolve to the lowest class index."""
        return np.argmax(self.predict_proba(X), axis=1)

    def to_json(self) -> str:
        doc = {
            "version": SERIALIZATION_VERSION,
            "n_classes": self.n_classes,
            "feature_dim": self.feature_dim,
            "class_names": self.class_names,
            "oob_accuracy": self.oob_accuracy,
            "params": self.params,
            "trees": [
                {
                    "feature": t.feature,
                    "threshold": t.threshold,
                    "left": t.left,
                    "right": t.right,
                    "histogram": t.histogram,
                }
                for t in self.trees
            ],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        doc = json.loads(text)
        if doc.get("version") != SERIALIZATION_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        trees = [
            _Tree(t["feature"], t["threshold"], t["left"], t["right"],
                  t["histogram"])
            for t in doc["trees"]
        ]
        return cls(trees=trees, n_classes=doc["n_classes"],
                   feature_dim=doc["feature_dim"],
                   class_names=doc["class_names"],
                   oob_accuracy=doc["oob_accuracy"], params=doc["params"])


def train_forest(X, y, n_trees: int = 60, max_depth: int = 16, min_leaf: int = 1,
                 feature_subsample: str | int = "sqrt", rng_seed: int = 0,
                 bootstrap: bool = True, class_names: list[str] | None = None
                 ) -> ForestModel:
    """Fit a forest; deterministic for a fixed rng_seed.

    Reports out-of-bag accuracy when bootstrap sampling is on and every
    sample was left out of at least one bag.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    n, d = X.shape
    classes = np.unique(y)
    if classes.size < 2:
        raise TrainingError("need at least two classes")
    if n < 2 * min_leaf:
        raise TrainingError("not enough samples for the requested min_leaf")
    n_classes = int(classes.max()) + 1
    if feature_subsample == "sqrt":
        n_sub = max(int(np.sqrt(d)), 1)
    elif feature_subsample == "all":
        n_sub = d
    else:
        n_sub = int(feature_subsample)
    n_sub = min(n_sub, d)
    rng = np.random.default_rng(rng_seed)
    trees = []
    oob_votes = np.zeros((n, n_classes))
    for _ in range(n_trees):
        if bootstrap:
            bag = rng.integers(0, n, size=n)
        else:
            bag = np.arange(n)
        tree = _grow_tree(X[bag], y[bag], n_classes, max_depth, min_leaf,
                          n_sub, rng)
        trees.append(tree)
        if bootstrap:
            out = np.setdiff1d(np.arange(n), bag, assume_unique=False)
            if out.size:
                oob_votes[out] += tree.predict_proba(X[out])
    oob_acc = None
    if bootstrap:
        seen = oob_votes.sum(axis=1) > 0
        if seen.any():
            oob_acc = float(np.mean(np.argmax(oob_votes[seen], axis=1) == y[seen]))
    names = class_names or [str(c) for c in range(n_classes)]
    return ForestModel(
        trees=trees, n_classes=n_classes, feature_dim=d, class_names=names,
        oob_accuracy=oob_acc,
        params={"n_trees": n_trees, "max_depth": max_depth, "min_leaf": min_leaf,
                "feature_subsample": feature_subsample, "rng_seed": rng_seed,
                "bootstrap": bootstrap},
    )


def stratified_folds(y: np.ndarray, k: int, rng_seed: int = 0) -> list[np.ndarray]:
    """Index arrays for k class-stratified folds, seeded shuffle."""
    y = np.asarray(y, dtype=int)
    if k > y.size:
        raise TrainingError(f"k={k} exceeds sample count {y.size}")
    rng = np.random.default_rng(rng_seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    cursor = 0
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        for sample in idx:
            folds[cursor % k].append(int(sample))
            cursor += 1
    return [np.array(sorted(f), dtype=int) for f in folds]


def cross_validate(X, y, k: int = 5, rng_seed: int = 0, **forest_kwargs) -> dict:
    """Stratified k-fold accuracy of the forest."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    folds = stratified_folds(y, k, rng_seed)
    accuracies = []
    for i, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(y.size), test_idx)
        model = train_forest(X[train_idx], y[train_idx],
                             rng_seed=rng_seed + i, **forest_kwargs)
        pred = model.predict(X[test_idx])
        accuracies.append(float(np.mean(pred == y[test_idx])))
    return {"fold_accuracy": accuracies, "mean_accuracy": float(np.mean(accuracies))}
