"""Regression random forest with out-of-bag predictions.

Trees use axis-aligned threshold splits chosen greedily by variance
reduction over a random subset of candidate features, with mean-value
leaves. Each tree draws its bootstrap sample and feature subsets from its
own seed stream spawned from the forest seed, so fitting is deterministic
and order-independent (trees could be fit in parallel without changing the
result).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InsufficientDataError, ShapeError


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 1000
    max_features: int | None = None  # default: ceil(n_features / 3)
    min_samples_leaf: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigurationError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ConfigurationError("min_samples_leaf must be >= 1")


class _Tree:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            rows = np.nonzero(feat >= 0)[0]
            if rows.size == 0:
                break
            cur = node[rows]
            go_left = X[rows, feat[rows]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
        return self.value[node]


def _grow_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator,
               max_features: int, min_leaf: int) -> _Tree:
    n, d = X.shape
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    col = np.arange(max_features)
    root = new_node()
    stack = [(root, np.arange(n))]
    while stack:
        node_id, idx = stack.pop()
        ysub = y[idx]
        m = idx.size
        total_sum = np.add.reduce(ysub)
        value[node_id] = total_sum / m
        if m < 2 * min_leaf or np.minimum.reduce(ysub) == np.maximum.reduce(ysub):
            continue
        feats = rng.permutation(d)[:max_features]
        Xsub = X[idx[:, None], feats]
        order = np.argsort(Xsub, axis=0, kind="stable")
        xs = Xsub[order, col]
        ys = ysub[order]
        csum = np.cumsum(ys, axis=0)
        csq = np.cumsum(ys * ys, axis=0)
        total_sq = csq[-1, 0]
        c = np.arange(1, m, dtype=np.float64)[:, None]
        lsum, lsq = csum[:-1], csq[:-1]
        sse = (lsq - lsum * lsum / c) + ((total_sq - lsq) - (total_sum - lsum) ** 2 / (m - c))
        valid = (c >= min_leaf) & (c <= m - min_leaf) & (xs[1:] > xs[:-1])
        if not valid.any():
            continue
        sse = np.where(valid, sse, np.inf)
        flat = int(np.argmin(sse))
        i, j = divmod(flat, max_features)
        feat = int(feats[j])
        thr = 0.5 * (xs[i, j] + xs[i + 1, j])
        go = X[idx, feat] <= thr
        left_idx, right_idx = idx[go], idx[~go]
        if left_idx.size == 0 or right_idx.size == 0:  # adjacent-float midpoint
            continue
        feature[node_id] = feat
        threshold[node_id] = thr
        lid, rid = new_node(), new_node()
        left[node_id], right[node_id] = lid, rid
        stack.append((rid, right_idx))
        stack.append((lid, left_idx))
    return _Tree(feature, threshold, left, right, value)


class Forest:
    """A fitted forest; immutable, safe for shared reads."""

    def __init__(self, trees: list[_Tree], bootstrap_indices: list[np.ndarray],
                 config: ForestConfig, n_features: int, n_train: int):
        self.trees = trees
        self.bootstrap_indices = bootstrap_indices
        self.config = config
        self.n_features = n_features
        self.n_train = n_train


def forest_fit(X: np.ndarray, y: np.ndarray, config: ForestConfig = ForestConfig()) -> Forest:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("X must be 2-D")
    n, d = X.shape
    if n < 2 or len(y) != n:
        raise InsufficientDataError(f"need >= 2 aligned rows, got {n} and {len(y)}")
    k = config.max_features if config.max_features is not None else -(-d // 3)
    if not 1 <= k <= d:
        raise ConfigurationError(f"max_features {k} outside [1, {d}]")
    children = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    trees, boots = [], []
    for t in range(config.n_trees):
        rng = np.random.default_rng(children[t])
        boot = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X[boot], y[boot], rng, k, config.min_samples_leaf))
        boots.append(boot)
    return Forest(trees, boots, config, d, n)


def forest_predict(forest: Forest, x: np.ndarray) -> np.ndarray | float:
    """Mean over all tree predictions."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != forest.n_features:
        raise ShapeError(f"{X.shape[1]} features, forest expects {forest.n_features}")
    acc = np.zeros(X.shape[0])
    for tree in forest.trees:
        acc += tree.predict(X)
    out = acc / len(forest.trees)
    return float(out[0]) if single else out


def forest_oob_predict(forest: Forest, X_train: np.ndarray):
    """Out-of-bag prediction per training row.

    Returns (values, no_oob_flags): each row's mean over trees whose
    bootstrap excluded it. Rows no tree excluded fall back to the
    full-forest prediction and are flagged.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    n = X_train.shape[0]
    if n != forest.n_train:
        raise ShapeError(f"{n} rows but forest was fit on {forest.n_train}")
    acc = np.zeros(n)
    cnt = np.zeros(n)
    for tree, boot in zip(forest.trees, forest.bootstrap_indices):
        in_bag = np.zeros(n, dtype=bool)
        in_bag[boot] = True
        rows = np.nonzero(~in_bag)[0]
        if rows.size == 0:
            continue
        acc[rows] += tree.predict(X_train[rows])
        cnt[rows] += 1
    no_oob = cnt == 0
    values = np.empty(n)
    covered = ~no_oob
    values[covered] = acc[covered] / cnt[covered]
    if no_oob.any():
        values[no_oob] = forest_predict(forest, X_train[no_oob])
    return values, no_oob
