"""Random forest of Gini-split classification trees grown on bootstrap resamples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..seeding import derive_seed


@dataclass
class Tree:
    """Flat node arrays; ``feature[i] == -1`` marks a leaf.

    A row goes left at node ``i`` when ``x[feature[i]] <= threshold[i]``.
    ``value`` holds the class-1 proportion of the training rows in each node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row."""
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_json(cls, doc: dict) -> "Tree":
        return cls(np.array(doc["feature"], np.int64), np.array(doc["threshold"], float),
                   np.array(doc["left"], np.int64), np.array(doc["right"], np.int64),
                   np.array(doc["value"], float))


def _best_split(x: np.ndarray, y: np.ndarray):
    """Lowest weighted Gini split of one feature: (score, threshold) or None."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = len(xs)
    valid = np.flatnonzero(xs[:-1] < xs[1:])
    if valid.size == 0:
        return None
    pos_left = np.cumsum(ys)[valid]
    n_left = valid + 1.0
    n_right = n - n_left
    pos_right = ys.sum() - pos_left
    # n * weighted gini = n_l * (1 - p_l^2 - q_l^2) + n_r * (...) = 2 * (pos*neg/n) summed
    score = (pos_left * (n_left - pos_left) / n_left + pos_right * (n_right - pos_right) / n_right)
    k = int(np.argmin(score))
    i = valid[k]
    thr = 0.5 * (xs[i] + xs[i + 1])
    if not thr < xs[i + 1]:
        thr = xs[i]
    return float(score[k]), float(thr)


def grow_tree(X: np.ndarray, y: np.ndarray, max_features: int, rng: np.random.Generator) -> Tree:
    """Grow until leaves are pure or cannot be split (min one row per leaf)."""
    d = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)))]
    while stack:
        node, idx = stack.pop()
        yi = y[idx]
        pos = yi.sum()
        if len(idx) < 2 or pos == 0 or pos == len(idx):
            continue
        best = None
        perm = rng.permutation(d)
        tried = 0
        # draw max_features candidates; keep drawing past constant features
        for f in perm:
            res = _best_split(X[idx, f], yi)
            if res is None:
                continue
            tried += 1
            if best is None or res[0] < best[0]:
                best = (res[0], res[1], int(f))
            if tried >= max_features:
                break
        if best is None:
            continue
        _, thr, f = best
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        lnode = new_node(li)
        rnode = new_node(ri)
        left[node], right[node] = lnode, rnode
        stack.append((rnode, ri))
        stack.append((lnode, li))
    return Tree(np.array(feature, np.int64), np.array(threshold, float), np.array(left, np.int64),
                np.array(right, np.int64), np.array(value, float))


@dataclass
class Forest:
    trees: list[Tree]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, float)
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.predict(X)
        return total / len(self.trees)

    def to_json(self) -> dict:
        return {"trees": [t.to_json() for t in self.trees]}

    @classmethod
    def from_json(cls, doc: dict) -> "Forest":
        return cls([Tree.from_json(t) for t in doc["trees"]])


def fit(X, y, n_trees=100, max_features=None, seed=0, bootstrap=True, tree_seeds=None) -> Forest:
    """Each tree gets its own pre-assigned seed, so trees are independent of build order."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n, d = X.shape
    if max_features is None:
        max_features = max(1, int(np.floor(np.sqrt(d))))
    if tree_seeds is None:
        tree_seeds = [derive_seed(seed, "tree", k) for k in range(n_trees)]
    trees = []
    for ts in tree_seeds:
        rng = np.random.Generator(np.random.PCG64(ts))
        idx = rng.integers(0, n, n) if bootstrap else np.arange(n)
        trees.append(grow_tree(X[idx], y[idx], max_features, rng))
    return Forest(trees)
