"""CART regression trees on bootstrap samples, averaged into a random forest."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numba import njit

from .._threads import worker_count


@njit(cache=True, nogil=True)
def _best_split(X, y, rows, n_rows, min_leaf, mtry, order_buf, vals_buf):
    """Best variance-reduction split of ``rows[:n_rows]``.

    Visits features in random order and stops after ``mtry`` features that
    are non-constant within the node. Returns (feature, threshold, n_left)
    with feature = -1 when no admissible split exists.
    """
    p = X.shape[1]
    total = 0.0
    for i in range(n_rows):
        total += y[rows[i]]
    parent = total * total / n_rows
    best_gain = 0.0
    best_feat = -1
    best_thr = 0.0
    best_left = 0
    perm = np.random.permutation(p)
    vals = vals_buf[:n_rows]
    visited = 0
    for fi in range(p):
        if visited >= mtry:
            break
        f = perm[fi]
        for i in range(n_rows):
            vals[i] = X[rows[i], f]
        order = np.argsort(vals)
        if vals[order[0]] == vals[order[n_rows - 1]]:
            continue
        visited += 1
        left_sum = 0.0
        for i in range(n_rows - 1):
            left_sum += y[rows[order[i]]]
            n_left = i + 1
            n_right = n_rows - n_left
            if n_left < min_leaf:
                continue
            if n_right < min_leaf:
                break
            v0 = vals[order[i]]
            v1 = vals[order[i + 1]]
            if v0 == v1:
                continue
            right_sum = total - left_sum
            gain = left_sum * left_sum / n_left + right_sum * right_sum / n_right - parent
            if gain > best_gain + 1e-12 * (abs(parent) + 1.0):
                best_gain = gain
                best_feat = f
                best_thr = 0.5 * (v0 + v1)
                if best_thr >= v1:  # adjacent floats
                    best_thr = v0
                best_left = n_left
    if best_feat >= 0:
        # stable partition: left child rows first
        a = 0
        b = best_left
        for i in range(n_rows):
            r = rows[i]
            if X[r, best_feat] <= best_thr:
                order_buf[a] = r
                a += 1
            else:
                order_buf[b] = r
                b += 1
        for i in range(n_rows):
            rows[i] = order_buf[i]
    return best_feat, best_thr, best_left


@njit(cache=True, nogil=True)
def _build_tree(X, y, sample, max_depth, min_leaf, mtry, seed):
    np.random.seed(seed)
    n = sample.size
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    rows = sample.copy()
    buf = np.empty(n, dtype=np.int64)
    vals_buf = np.empty(n)
    # stack of (node, start, stop, depth)
    stack = np.empty((cap, 4), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        stop = stack[top, 2]
        depth = stack[top, 3]
        m = stop - start
        s = 0.0
        for i in range(start, stop):
            s += y[rows[i]]
        value[node] = s / m
        if (max_depth >= 0 and depth >= max_depth) or m < 2 * min_leaf:
            continue
        view = rows[start:stop]
        f, thr, n_left = _best_split(X, y, view, m, min_leaf, mtry, buf, vals_buf)
        if f < 0:
            continue
        feature[node] = f
        threshold[node] = thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top, 0] = n_nodes + 1
        stack[top, 1] = start + n_left
        stack[top, 2] = stop
        stack[top, 3] = depth + 1
        stack[top + 1, 0] = n_nodes
        stack[top + 1, 1] = start
        stack[top + 1, 2] = start + n_left
        stack[top + 1, 3] = depth + 1
        top += 2
        n_nodes += 2
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True, nogil=True)
def _predict_tree(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


def fit_tree(X, y, sample=None, max_depth: int | None = None, min_leaf: int = 1, mtry: int | None = None, seed: int = 0):
    """One CART tree as a tuple of node arrays ``(feature, threshold, left, right, value)``."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    sample = np.arange(len(y), dtype=np.int64) if sample is None else np.asarray(sample, dtype=np.int64)
    depth = -1 if max_depth is None else int(max_depth)
    k = X.shape[1] if mtry is None else max(1, min(int(mtry), X.shape[1]))
    return _build_tree(X, y, sample, depth, max(1, int(min_leaf)), k, int(seed))


def predict_tree(tree, X) -> np.ndarray:
    return _predict_tree(np.ascontiguousarray(X, dtype=float), *tree)


def fit_forest(
    X,
    y,
    n_trees: int = 200,
    max_depth: int | None = 8,
    min_leaf: int = 5,
    features_per_split: int | None = None,
    seed: int = 0,
    bootstrap: bool = True,
) -> list[tuple]:
    """Trees are independent given their seeds, so build order cannot change the result."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    n, p = X.shape
    if n < 2:
        raise ValueError("forest needs at least 2 rows")
    mtry = features_per_split or max(1, math.ceil(p / 3))
    children = np.random.SeedSequence(seed).spawn(n_trees)
    jobs = []
    for child in children:
        rng = np.random.default_rng(child)
        sample = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        tree_seed = int(rng.integers(0, 2**31 - 1))
        jobs.append((sample.astype(np.int64), tree_seed))

    def build(job):
        sample, tree_seed = job
        return fit_tree(X, y, sample, max_depth, min_leaf, mtry, tree_seed)

    workers = worker_count()
    if workers > 1 and n_trees > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(build, jobs))
    return [build(job) for job in jobs]


def predict_forest(trees, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=float)
    return np.mean([_predict_tree(X, *t) for t in trees], axis=0)
