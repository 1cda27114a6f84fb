"""Trainable node functions.

* :class:`SplineNode` -- clamped uniform cubic B-spline on ``[a, b]`` with
  ``G`` intervals (``G + 3`` coefficients).  Outside the domain the boundary
  polynomial piece is continued linearly (value and slope at the endpoint).
* :class:`LinearCoupling` -- weights over in-edges plus a bias.
* :class:`RegressionTree` / :class:`TreeEnsembleNode` -- greedy CART
  regression trees and their shrunken sums.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

DEGREE = 3


@numba.njit(cache=True, nogil=True)
def _heap_sum(XT, feat, thr, leaf, depth):
    """Sum of complete-heap trees over the columns of ``XT`` (features x rows)."""
    T = feat.shape[0]
    N = XT.shape[1]
    n_inner = feat.shape[1]
    out = np.zeros(N)
    for t in range(T):
        f = feat[t]
        th = thr[t]
        lv = leaf[t]
        for r in range(N):
            i = 0
            for _ in range(depth):
                i = 2 * i + 1 + (XT[f[i], r] > th[i])
            out[r] += lv[i - n_inner]
    return out


def _reject_fields(d: dict, allowed: set, where: str) -> None:
    from .topology import TopologyError

    if not isinstance(d, dict):
        raise TopologyError(f"{where}: expected an object")
    unknown = set(d) - allowed
    if unknown:
        raise TopologyError(f"{where}: unknown field(s) {sorted(unknown)}")


def _as_input(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.isnan(x).any():
        raise ValueError("NaN input to node function")
    return x


# ---------------------------------------------------------------------------
# splines

def clamped_knots(a: float, b: float, grid: int) -> np.ndarray:
    inner = np.linspace(a, b, grid + 1)
    return np.concatenate([np.full(DEGREE, a), inner, np.full(DEGREE, b)])


def _basis_inside(xc: np.ndarray, a: float, b: float, grid: int):
    """Cubic basis values and x-derivatives at points already clipped to [a, b].

    Returns two ``(N, grid + 3)`` arrays.
    """
    t = clamped_knots(a, b, grid)
    h = (b - a) / grid
    n_span = len(t) - 1
    span = DEGREE + np.minimum(np.floor((xc - a) / h).astype(int), grid - 1)
    span = np.maximum(span, DEGREE)
    B = np.zeros((xc.size, n_span))
    B[np.arange(xc.size), span] = 1.0
    x = xc[:, None]
    prev = B
    for d in range(1, DEGREE + 1):
        nb = n_span - d
        i = np.arange(nb)
        den_l = t[i + d] - t[i]
        den_r = t[i + d + 1] - t[i + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            wl = np.where(den_l > 0, (x - t[i]) / den_l, 0.0)
            wr = np.where(den_r > 0, (t[i + d + 1] - x) / den_r, 0.0)
        if d == DEGREE:
            with np.errstate(divide="ignore", invalid="ignore"):
                cl = np.where(den_l > 0, DEGREE / den_l, 0.0)
                cr = np.where(den_r > 0, DEGREE / den_r, 0.0)
            dB = cl * prev[:, :nb] - cr * prev[:, 1:nb + 1]
        prev = wl * prev[:, :nb] + wr * prev[:, 1:nb + 1]
    return prev, dB


def greville(a: float, b: float, grid: int) -> np.ndarray:
    """Greville abscissae; used as coefficients they reproduce ``f(x) = x``."""
    t = clamped_knots(a, b, grid)
    return np.array([t[i + 1:i + 1 + DEGREE].mean() for i in range(grid + DEGREE)])


@dataclass
class SplineNode:
    domain: tuple[float, float] = (-1.0, 1.0)
    grid: int = 8
    coefficients: np.ndarray | None = None

    def __post_init__(self):
        a, b = (float(v) for v in self.domain)
        if not a < b:
            raise ValueError(f"spline domain needs a < b, got {self.domain}")
        if int(self.grid) < 1:
            raise ValueError("grid must be a positive integer")
        self.domain = (a, b)
        self.grid = int(self.grid)
        if self.coefficients is None:
            self.coefficients = greville(a, b, self.grid)
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.grid + DEGREE,):
            raise ValueError(
                f"expected {self.grid + DEGREE} coefficients, got {self.coefficients.shape}")
        if not np.isfinite(self.coefficients).all():
            raise ValueError("spline coefficients must be finite")

    @property
    def n_params(self) -> int:
        return self.grid + DEGREE

    def basis(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Basis matrix and its x-derivative at ``x`` (1-D), linear extension outside."""
        x = _as_input(x).ravel()
        a, b = self.domain
        xc = np.clip(x, a, b)
        B, dB = _basis_inside(xc, a, b, self.grid)
        B = B + dB * (x - xc)[:, None]
        return B, dB

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        B, _ = self.basis(x)
        return (B @ self.coefficients).reshape(x.shape)

    def derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        _, dB = self.basis(x)
        return (dB @ self.coefficients).reshape(x.shape)

    def copy(self) -> "SplineNode":
        return SplineNode(self.domain, self.grid, self.coefficients.copy())

    def to_dict(self) -> dict:
        return {
            "domain": [float(self.domain[0]), float(self.domain[1])],
            "grid": self.grid,
            "coefficients": [float(c) for c in self.coefficients],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplineNode":
        _reject_fields(d, {"domain", "grid", "coefficients"}, "spline params")
        dom = d.get("domain", [-1.0, 1.0])
        return cls((dom[0], dom[1]), d.get("grid", 8), d.get("coefficients"))


def spline_eval(node: SplineNode, x):
    """Spline value at ``x`` (scalar or array)."""
    out = node(x)
    return float(out) if np.ndim(x) == 0 else out


def spline_grad(node: SplineNode, x):
    """``(d value / dx, d value / d coefficients)`` at ``x``.

    For scalar ``x`` the second item has shape ``(G + 3,)``; for an array of
    ``N`` points, ``(N, G + 3)``.
    """
    B, dB = node.basis(x)
    dx = dB @ node.coefficients
    if np.ndim(x) == 0:
        return float(dx[0]), B[0]
    return dx.reshape(np.shape(x)), B


def fit_spline(x, y, domain=(-1.0, 1.0), grid: int = 8) -> SplineNode:
    """Least-squares spline fit of ``y`` on ``x``."""
    node = SplineNode(domain, grid)
    B, _ = node.basis(x)
    coef, *_ = np.linalg.lstsq(B, np.asarray(y, dtype=float), rcond=None)
    node.coefficients = coef
    return node


# ---------------------------------------------------------------------------
# linear couplings

@dataclass
class LinearCoupling:
    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.bias = float(self.bias)
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias)):
            raise ValueError("linear coupling parameters must be finite")

    @property
    def n_params(self) -> int:
        return self.weights.size + 1

    def __call__(self, columns: np.ndarray) -> np.ndarray:
        columns = np.asarray(columns, dtype=float)
        if columns.shape[1] != self.weights.size:
            raise ValueError(f"linear node expects {self.weights.size} inputs, got {columns.shape[1]}")
        return columns @ self.weights + self.bias

    def copy(self) -> "LinearCoupling":
        return LinearCoupling(self.weights.copy(), self.bias)

    def to_dict(self) -> dict:
        return {"weights": [float(w) for w in self.weights], "bias": float(self.bias)}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearCoupling":
        _reject_fields(d, {"weights", "bias"}, "linear params")
        return cls(d.get("weights", []), d.get("bias", 0.0))


# ---------------------------------------------------------------------------
# regression trees

@dataclass
class RegressionTree:
    """Binary tree in flat arrays; ``feature[i] == -1`` marks a leaf.

    A sample goes left at an internal node when ``x[feature] <= threshold``.
    """
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int
    min_leaf_count: int

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def depth(self) -> int:
        def rec(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(rec(self.left[i]), rec(self.right[i]))
        return rec(0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row."""
        X = np.asarray(X, dtype=float)
        idx = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[idx]
            inner = f >= 0
            if not inner.any():
                return idx
            xv = X[rows, np.where(inner, f, 0)]
            nxt = np.where(xv <= self.threshold[idx], self.left[idx], self.right[idx])
            idx = np.where(inner, nxt, idx)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_heap(self, depth: int):
        """Complete binary heap of the given depth with identical predictions.

        Returns ``(feature, threshold, leaf_value)`` of sizes ``2**depth - 1``,
        ``2**depth - 1`` and ``2**depth``.  Leaves above the bottom level become
        pass-through nodes (threshold ``+inf``) whose descendants all carry the
        leaf value.
        """
        n_inner = 2**depth - 1
        feat = np.zeros(n_inner, dtype=np.int64)
        thr = np.full(n_inner, np.inf)
        leaf = np.zeros(2**depth)
        stack = [(0, 0, 0)]
        while stack:
            node, h, d = stack.pop()
            if self.feature[node] < 0:
                lo = hi = h
                for _ in range(depth - d):
                    lo, hi = 2 * lo + 1, 2 * hi + 2
                leaf[lo - n_inner:hi - n_inner + 1] = self.value[node]
                continue
            feat[h] = self.feature[node]
            thr[h] = self.threshold[node]
            stack.append((self.left[node], 2 * h + 1, d + 1))
            stack.append((self.right[node], 2 * h + 2, d + 1))
        return feat, thr, leaf

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(v) for v in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
            "max_depth": self.max_depth,
            "min_leaf_count": self.min_leaf_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        keys = {"feature", "threshold", "left", "right", "value", "max_depth", "min_leaf_count"}
        _reject_fields(d, keys, "tree")
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
            int(d["max_depth"]),
            int(d["min_leaf_count"]),
        )


def _seq_sum(v: np.ndarray) -> float:
    """Left-to-right sum (``ndarray.sum`` is pairwise and rounds differently)."""
    return float(np.cumsum(v)[-1])


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int, total: float):
    """Best (gain, feature, threshold) over all features and midpoints, or None."""
    n = y.size
    parent = total * total / n
    best = None
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cs = np.cumsum(y[order])[:-1]
        nl = np.arange(1, n)
        ok = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not ok.any():
            continue
        pos = np.flatnonzero(ok)
        sl = cs[pos]
        nlp = nl[pos]
        gain = sl * sl / nlp + (total - sl) ** 2 / (n - nlp) - parent
        j = int(np.argmax(gain))
        if best is None or gain[j] > best[0]:
            i = pos[j]
            thr = 0.5 * (xs[i] + xs[i + 1])
            if not xs[i] <= thr < xs[i + 1]:
                thr = xs[i]
            best = (float(gain[j]), f, float(thr))
    return best


def _check_xy(features, targets, max_depth, min_leaf_count):
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if y.size == 0 or X.shape[0] == 0:
        raise ValueError("cannot fit a tree to an empty dataset")
    if X.shape[0] != y.size:
        raise ValueError(f"row count {X.shape[0]} != target count {y.size}")
    if max_depth < 0 or min_leaf_count < 1:
        raise ValueError("max_depth must be >= 0 and min_leaf_count >= 1")
    return X, y


@numba.njit(cache=True, nogil=True)
def _grow(X, y, max_depth, min_leaf):
    N, d = X.shape
    order = np.empty((d, N), dtype=np.int64)
    for f in range(d):
        order[f] = np.argsort(X[:, f], kind="mergesort")
    cap = 2 ** (max_depth + 1) - 1
    feat = np.full(cap, -1, dtype=np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    val = np.zeros(cap)
    goes_left = np.zeros(N, dtype=np.bool_)
    buf = np.empty(N, dtype=np.int64)
    # stack rows: start, end, depth, parent, is_left
    stack = np.empty((cap, 5), dtype=np.int64)
    stack[0] = (0, N, 0, -1, 0)
    top = 1
    count = 0
    while top > 0:
        top -= 1
        start, end, depth, parent, is_left = stack[top]
        node = count
        count += 1
        if parent >= 0:
            if is_left:
                left[parent] = node
            else:
                right[parent] = node
        n = end - start
        total = 0.0
        for i in range(start, end):
            total += y[order[0, i]]
        mean = total / n
        val[node] = mean
        if depth >= max_depth or n < 2 * min_leaf:
            continue
        sse = 0.0
        for i in range(start, end):
            e = y[order[0, i]] - mean
            sse += e * e
        if sse <= 0.0:
            continue
        parent_score = total * total / n
        best_gain = -np.inf
        best_f = -1
        best_i = -1
        for f in range(d):
            sl = 0.0
            for i in range(start, end - 1):
                r = order[f, i]
                sl += y[r]
                nl = i - start + 1
                if nl < min_leaf or n - nl < min_leaf:
                    continue
                if not X[r, f] < X[order[f, i + 1], f]:
                    continue
                sr = total - sl
                gain = sl * sl / nl + sr * sr / (n - nl) - parent_score
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_i = i
        # roundoff guard: numerically zero gains do not split
        if best_f < 0 or best_gain <= 1e-12 * sse:
            continue
        lo = X[order[best_f, best_i], best_f]
        hi = X[order[best_f, best_i + 1], best_f]
        t = 0.5 * (lo + hi)
        if not (lo <= t and t < hi):
            t = lo
        feat[node] = best_f
        thr[node] = t
        for i in range(start, end):
            r = order[best_f, i]
            goes_left[r] = X[r, best_f] <= t
        n_left = best_i - start + 1
        for f in range(d):
            a = 0
            b = n_left
            for i in range(start, end):
                r = order[f, i]
                if goes_left[r]:
                    buf[a] = r
                    a += 1
                else:
                    buf[b] = r
                    b += 1
            for i in range(n):
                order[f, start + i] = buf[i]
        mid = start + n_left
        stack[top] = (mid, end, depth + 1, node, 0)
        stack[top + 1] = (start, mid, depth + 1, node, 1)
        top += 2
    return feat[:count], thr[:count], left[:count], right[:count], val[:count]


def fit_tree(features, targets, max_depth: int = 4, min_leaf_count: int = 5) -> RegressionTree:
    """Greedy variance-reduction CART.

    Every split maximises the sum-of-squares reduction over all features and
    midpoints between consecutive distinct values.  Ties go to the lowest
    feature index, then the lowest threshold.
    """
    X, y = _check_xy(features, targets, max_depth, min_leaf_count)
    feat, thr, left, right, val = _grow(np.ascontiguousarray(X), y, int(max_depth), int(min_leaf_count))
    return RegressionTree(feat.copy(), thr.copy(), left.copy(), right.copy(), val.copy(),
                          int(max_depth), int(min_leaf_count))


def fit_tree_reference(features, targets, max_depth: int = 4, min_leaf_count: int = 5) -> RegressionTree:
    """Recursive pure-numpy CART with the same split rule as :func:`fit_tree`.

    Slow; kept as an independent cross-check of the compiled builder.
    """
    X, y = _check_xy(features, targets, max_depth, min_leaf_count)

    feat, thr, left, right, val = [], [], [], [], []

    def grow(rows: np.ndarray, depth: int) -> int:
        node = len(feat)
        ys = y[rows]
        # node sums accumulate in feature-0 order, as in the compiled builder
        ys0 = ys[np.argsort(X[rows, 0], kind="stable")]
        total = _seq_sum(ys0)
        mean = total / rows.size
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        val.append(mean)
        if depth >= max_depth or rows.size < 2 * min_leaf_count:
            return node
        sse = _seq_sum((ys0 - mean) ** 2)
        split = _best_split(X[rows], ys, min_leaf_count, total)
        # roundoff guard: a zero-variance node must stay a leaf
        if split is None or split[0] <= 1e-12 * sse or sse <= 0.0:
            return node
        _, f, t = split
        go_left = X[rows, f] <= t
        feat[node] = f
        thr[node] = t
        left[node] = grow(rows[go_left], depth + 1)
        right[node] = grow(rows[~go_left], depth + 1)
        return node

    grow(np.arange(y.size), 0)
    return RegressionTree(
        np.asarray(feat, dtype=np.int64), np.asarray(thr, dtype=float),
        np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
        np.asarray(val, dtype=float), int(max_depth), int(min_leaf_count),
    )


@dataclass
class TreeEnsembleNode:
    n_features: int
    shrinkage: float = 0.1
    base_value: float = 0.0
    trees: list = field(default_factory=list)
    _stack: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError(f"shrinkage must lie in (0, 1], got {self.shrinkage}")
        self.base_value = float(self.base_value)

    def append(self, tree: RegressionTree) -> None:
        if not np.isfinite(tree.value).all():
            raise ValueError("tree leaf values must be finite")
        self.trees.append(tree)
        self._stack = None

    def _stacked(self):
        if self._stack is None:
            depth = max(t.depth() for t in self.trees)
            heaps = [t.to_heap(depth) for t in self.trees]
            self._stack = tuple(np.stack(h) for h in zip(*heaps)) + (depth,)
        return self._stack

    def tree_sum(self, X: np.ndarray) -> np.ndarray:
        """Unshrunk sum of tree outputs per row, accumulated in list order."""
        X = np.asarray(X, dtype=float)
        if not self.trees:
            return np.zeros(X.shape[0])
        feat, thr, leaf, depth = self._stacked()
        return _heap_sum(np.ascontiguousarray(X.T), feat, thr, leaf, depth)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"ensemble expects {self.n_features} feature columns, got shape {X.shape}")
        return self.base_value + self.shrinkage * self.tree_sum(X)

    def copy(self) -> "TreeEnsembleNode":
        return TreeEnsembleNode(self.n_features, self.shrinkage, self.base_value, list(self.trees))

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "shrinkage": float(self.shrinkage),
            "base_value": float(self.base_value),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsembleNode":
        _reject_fields(d, {"n_features", "shrinkage", "base_value", "trees"}, "ensemble")
        return cls(int(d["n_features"]), float(d["shrinkage"]), float(d["base_value"]),
                   [RegressionTree.from_dict(t) for t in d.get("trees", [])])


def ensemble_predict(node: TreeEnsembleNode, features) -> np.ndarray:
    return node.predict(features)


def boost(X, y, rounds: int, shrinkage: float = 0.1, max_depth: int = 4,
          min_leaf_count: int = 5) -> TreeEnsembleNode:
    """Plain least-squares gradient boosting of a single ensemble."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    node = TreeEnsembleNode(X.shape[1], shrinkage, float(y.mean()))
    pred = np.full(y.size, node.base_value)
    for _ in range(rounds):
        tree = fit_tree(X, y - pred, max_depth, min_leaf_count)
        node.append(tree)
        pred = pred + shrinkage * tree.predict(X)
    return node


def stack_columns(columns: Sequence[np.ndarray]) -> np.ndarray:
    return np.column_stack([np.asarray(c, dtype=float) for c in columns])
