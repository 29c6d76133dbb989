"""Least-squares regression tree (CART) kernel.

Exhaustive threshold scan: for every candidate feature the node's rows are
sorted and every midpoint between consecutive distinct values is scored by the
SSE reduction. Ties keep the first (feature order, then threshold) candidate so
fits are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np


@numba.njit(cache=True)
def _presort(Xs):
    n, p = Xs.shape
    S = np.empty((p, n), dtype=np.int64)
    for f in range(p):
        S[f] = np.argsort(Xs[:, f], kind="mergesort")
    return S


@numba.njit(cache=True)
def _build(Xs, ys, S, max_depth, min_leaf, mtry, seed):
    # Xs, ys are already gathered per sample slot; S[f] lists slots sorted by Xs[:, f]
    n_total, p = Xs.shape
    cap = 2 * n_total + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    n_samples = np.zeros(cap, dtype=np.int64)
    gain = np.zeros(cap)

    S = S.copy()
    buf = np.empty(n_total, dtype=np.int64)
    goes_left = np.zeros(n_total, dtype=np.bool_)
    feats = np.arange(p)
    if mtry < p:
        np.random.seed(seed)

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n_total
    st_depth[0] = 0
    sp = 1
    node_count = 1
    min_gain = -1.0
    row0 = S[0]

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        m = end - start
        s = 0.0
        for i in range(start, end):
            s += ys[row0[i]]
        mean = s / m
        sse = 0.0
        sc = 0.0
        for i in range(start, end):
            d = ys[row0[i]] - mean
            sse += d * d
            sc += d
        value[node] = mean
        n_samples[node] = m
        if min_gain < 0.0:
            min_gain = 1e-12 * sse
        if max_depth >= 0 and depth >= max_depth:
            continue
        if m < 2 * min_leaf or sse <= 0.0:
            continue

        if mtry < p:
            for t in range(mtry):
                r = t + np.random.randint(p - t)
                tmp = feats[t]
                feats[t] = feats[r]
                feats[r] = tmp
        n_try = mtry if mtry < p else p

        best_gain = min_gain
        best_f = -1
        best_thr = 0.0
        for t in range(n_try):
            f = feats[t]
            Sf = S[f]
            sl = 0.0
            for r in range(m - 1):
                slot = Sf[start + r]
                sl += ys[slot] - mean
                nl = r + 1
                nr = m - nl
                if nl < min_leaf:
                    continue
                if nr < min_leaf:
                    break
                v0 = Xs[slot, f]
                v1 = Xs[Sf[start + r + 1], f]
                if v1 <= v0:
                    continue
                sr = sc - sl
                g = sl * sl / nl + sr * sr / nr - sc * sc / m
                if g > best_gain:
                    best_gain = g
                    best_f = f
                    thr = 0.5 * (v0 + v1)
                    if thr >= v1:
                        thr = v0
                    best_thr = thr
        if best_f < 0:
            continue

        nl = 0
        for i in range(start, end):
            slot = S[best_f, i]
            lft = Xs[slot, best_f] <= best_thr
            goes_left[slot] = lft
            if lft:
                nl += 1
        for f in range(p):
            a = 0
            b = nl
            for i in range(start, end):
                slot = S[f, i]
                if goes_left[slot]:
                    buf[a] = slot
                    a += 1
                else:
                    buf[b] = slot
                    b += 1
            for i in range(m):
                S[f, start + i] = buf[i]

        feature[node] = best_f
        threshold[node] = best_thr
        gain[node] = best_gain
        lnode = node_count
        rnode = node_count + 1
        node_count += 2
        left[node] = lnode
        right[node] = rnode
        st_node[sp] = rnode
        st_start[sp] = start + nl
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lnode
        st_start[sp] = start
        st_end[sp] = start + nl
        st_depth[sp] = depth + 1
        sp += 1

    return (
        feature[:node_count].copy(),
        threshold[:node_count].copy(),
        left[:node_count].copy(),
        right[:node_count].copy(),
        value[:node_count].copy(),
        n_samples[:node_count].copy(),
        gain[:node_count].copy(),
    )


@numba.njit(cache=True)
def _predict(X, feature, threshold, left, right, value):
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


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    gain: np.ndarray
    n_features: int

    @property
    def n_nodes(self):
        return int(self.feature.size)

    @property
    def n_leaves(self):
        return int((self.feature < 0).sum())

    @property
    def n_splits(self):
        return int((self.feature >= 0).sum())

    def predict(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _predict(X, self.feature, self.threshold, self.left, self.right, self.value)

    def importances(self):
        """Unnormalised SSE reduction per feature."""
        out = np.zeros(self.n_features)
        split = self.feature >= 0
        np.add.at(out, self.feature[split], self.gain[split])
        return out

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "gain": self.gain.tolist(),
            "n_features": self.n_features,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
            n_samples=np.asarray(d["n_samples"], dtype=np.int64),
            gain=np.asarray(d["gain"], dtype=np.float64),
            n_features=int(d["n_features"]),
        )


def presort(X):
    """Per-feature sorted row order, reusable across fits on the same ``X``."""
    return _presort(np.ascontiguousarray(X, dtype=np.float64))


def fit_tree(X, y, idx=None, max_depth=None, min_leaf=1, mtry=None, seed=0, order=None) -> Tree:
    """Grow one regression tree on rows ``idx`` (duplicates allowed, for bootstraps).

    ``order`` is an optional :func:`presort` of ``X``; only valid with ``idx=None``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, p = X.shape
    if idx is None:
        Xs, ys = X, y
        S = _presort(Xs) if order is None else order
    else:
        idx = np.asarray(idx, dtype=np.int64)
        Xs = np.ascontiguousarray(X[idx])
        ys = np.ascontiguousarray(y[idx])
        S = _presort(Xs)
    depth = -1 if max_depth is None else int(max_depth)
    mtry = p if mtry is None else int(min(max(mtry, 1), p))
    parts = _build(Xs, ys, S, depth, int(max(min_leaf, 1)), mtry, int(seed) % (2**32 - 1))
    return Tree(*parts, n_features=p)
