"""Random forest of Gini trees, trained natively on numpy arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateLabels, UntrainedModel


@dataclass
class Tree:
    # parallel arrays; leaves have feature == -1
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, n_classes) class counts at each node

    def leaf_of(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        c = self.counts[self.leaf_of(X)]
        return np.argmax(c, axis=1)  # ties to the lowest class index


def _gini_best_split(X, y, n_classes, features, min_leaf):
    """Best (gain, feature, threshold) over ``features`` by weighted Gini impurity."""
    n = len(y)
    total = np.bincount(y, minlength=n_classes).astype(float)
    parent = 1.0 - np.sum((total / n) ** 2)
    best = (0.0, -1, 0.0)
    onehot = np.eye(n_classes)[y]
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        left = np.cumsum(onehot[order], axis=0)[:-1]
        nl = np.arange(1, n, dtype=float)
        nr = n - nl
        right = total - left
        valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
        if not valid.any():
            continue
        gl = 1.0 - np.sum((left / nl[:, None]) ** 2, axis=1)
        gr = 1.0 - np.sum((right / nr[:, None]) ** 2, axis=1)
        imp = (nl * gl + nr * gr) / n
        imp[~valid] = np.inf
        k = int(np.argmin(imp))
        gain = parent - imp[k]
        if gain > best[0] + 1e-12:
            best = (gain, int(f), 0.5 * (xs[k] + xs[k + 1]))
    return best


def build_tree(X, y, n_classes, rng, max_features=None, max_depth=None, min_leaf=1) -> Tree:
    d = X.shape[1]
    m = max_features or max(1, int(np.sqrt(d)))
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y[idx], minlength=n_classes))
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if len(np.unique(y[idx])) < 2 or (max_depth is not None and depth >= max_depth) or len(idx) < 2 * min_leaf:
            continue
        feats = rng.choice(d, size=min(m, d), replace=False)
        gain, f, thr = _gini_best_split(X[idx], y[idx], n_classes, feats, min_leaf)
        if f < 0:
            continue
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(li), new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(counts))


@dataclass
class ForestModel:
    trees: list = field(default_factory=list)
    classes: np.ndarray | None = None  # original label of each class index
    train_accuracy: float = float("nan")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def _check(self):
        if not self.trees or self.classes is None:
            raise UntrainedModel("forest has not been trained")

    def votes(self, X) -> np.ndarray:
        """Per-sample vote counts, shape (n, n_classes)."""
        self._check()
        X = np.atleast_2d(np.asarray(X, dtype=float))
        v = np.zeros((len(X), len(self.classes)), dtype=int)
        rows = np.arange(len(X))
        for t in self.trees:
            v[rows, t.predict(X)] += 1
        return v

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.votes(X), axis=1)]


def train_forest(X, y, n_trees: int = 150, rng_seed: int = 0, max_features=None, max_depth=None,
                 min_leaf: int = 1) -> ForestModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if len(X) == 0 or len(X) != len(y):
        raise ValueError("need matching, non-empty X and y")
    classes, yi = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise DegenerateLabels(f"only one class present ({classes[0]!r})")
    root = np.random.SeedSequence(rng_seed)
    trees = []
    for child in root.spawn(n_trees):
        rng = np.random.default_rng(child)
        boot = rng.integers(0, len(X), size=len(X))
        trees.append(build_tree(X[boot], yi[boot], len(classes), rng, max_features, max_depth, min_leaf))
    model = ForestModel(trees, classes)
    model.train_accuracy = float(np.mean(model.predict(X) == y))
    return model


def forest_top_k(model: ForestModel, theta, k: int) -> list:
    """Labels ranked by vote count (ties to the lower label), at most ``k``."""
    if model is None:
        raise UntrainedModel("no forest given")
    v = model.votes(np.asarray(theta, dtype=float).reshape(1, -1))[0]
    order = sorted(range(len(v)), key=lambda c: (-v[c], model.classes[c]))
    return [model.classes[c].item() for c in order[:max(0, k)]]
