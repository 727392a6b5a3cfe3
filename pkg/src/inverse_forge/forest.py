"""Random regression forest baseline.

Trees grow on bootstrap subsamples with split candidates limited to a
random feature subset, variance-reduction splitting with midpoint
thresholds, and mean-over-trees prediction.  Multi-output targets use
summed per-output variance as the impurity.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

MIN_LEAF_ROWS = 5


class _Node:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, value=None):
        self.feature = -1
        self.threshold = 0.0
        self.left = None
        self.right = None
        self.value = value


def _best_split(x, y, features):
    """Best (feature, threshold, gain) over candidate features, or None."""
    n = len(x)
    total_sse = ((y - y.mean(axis=0)) ** 2).sum()
    best = None
    best_sse = total_sse - 1e-12
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        ys = y[order]
        # prefix sums for left/right SSE at every cut position
        csum = np.cumsum(ys, axis=0)
        csum2 = np.cumsum(ys**2, axis=0)
        idx = np.arange(1, n)
        left_n = idx[:, None]
        right_n = (n - idx)[:, None]
        left_sse = (csum2[:-1] - csum[:-1] ** 2 / left_n).sum(axis=1)
        right_sum = csum[-1] - csum[:-1]
        right_sum2 = csum2[-1] - csum2[:-1]
        right_sse = (right_sum2 - right_sum**2 / right_n).sum(axis=1)
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        sse = np.where(valid, left_sse + right_sse, np.inf)
        j = int(np.argmin(sse))
        if sse[j] < best_sse:
            best_sse = sse[j]
            best = (f, 0.5 * (xs[j] + xs[j + 1]))
    return best


def _grow(x, y, rng, max_features):
    node = _Node()
    if len(x) <= MIN_LEAF_ROWS or float(((y - y.mean(axis=0)) ** 2).sum()) <= 1e-12:
        node.value = y.mean(axis=0)
        return node
    k = min(max_features, x.shape[1])
    features = rng.choice(x.shape[1], size=k, replace=False)
    split = _best_split(x, y, features)
    if split is None:
        node.value = y.mean(axis=0)
        return node
    node.feature, node.threshold = split
    go_left = x[:, node.feature] <= node.threshold
    node.left = _grow(x[go_left], y[go_left], rng, max_features)
    node.right = _grow(x[~go_left], y[~go_left], rng, max_features)
    return node


def _tree_predict(node, row):
    while node.value is None:
        node = node.left if row[node.feature] <= node.threshold else node.right
    return node.value


class ForestModel:
    """Bagged regression trees; prediction is the mean over trees."""

    def __init__(self, trees, n_features, out_dim):
        self.trees = trees
        self.n_features = n_features
        self.out_dim = out_dim

    def predict(self, features) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != self.n_features:
            raise DimensionError(
                f"expected {self.n_features} features, got {features.shape[1]}")
        out = np.zeros((len(features), self.out_dim))
        for row_i, row in enumerate(features):
            acc = np.zeros(self.out_dim)
            for tree in self.trees:
                acc += _tree_predict(tree, row)
            out[row_i] = acc / len(self.trees)
        return out


def tree_to_array(root, out_dim: int) -> np.ndarray:
    """Flatten a tree to a float array: [feature, threshold, left, right, value...].

    Children are row indices; leaves carry feature -1 and child indices -1.
    """
    rows = []

    def visit(node):
        i = len(rows)
        rows.append(None)
        if node.value is not None:
            rows[i] = [-1.0, 0.0, -1.0, -1.0] + list(node.value)
        else:
            left = visit(node.left)
            right = visit(node.right)
            rows[i] = [float(node.feature), node.threshold, float(left),
                       float(right)] + [0.0] * out_dim
        return i

    visit(root)
    return np.array(rows, dtype=np.float64)


def tree_from_array(arr: np.ndarray, out_dim: int):
    arr = np.asarray(arr, dtype=np.float64).reshape(-1, 4 + out_dim)

    def build(i):
        row = arr[int(i)]
        node = _Node()
        if row[0] < 0:
            node.value = row[4:].copy()
        else:
            node.feature = int(row[0])
            node.threshold = float(row[1])
            node.left = build(row[2])
            node.right = build(row[3])
        return node

    return build(0)


def forest_fit(features, targets, n_trees: int = 30, max_features: int = 100,
               seed: int = 0) -> ForestModel:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if len(x) != len(y):
        raise DimensionError(f"row mismatch: {len(x)} features vs {len(y)} targets")
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(n_trees):
        rows = rng.integers(0, len(x), size=len(x))
        trees.append(_grow(x[rows], y[rows], rng, max_features))
    return ForestModel(trees, x.shape[1], y.shape[1])


def forest_predict(model: ForestModel, features) -> np.ndarray:
    return model.predict(features)
