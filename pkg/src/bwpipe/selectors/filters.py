"""Univariate and information-theoretic filter selectors."""

from __future__ import annotations

import numba
import numpy as np

from ..errors import DataError
from .base import INF_SCORE, SelectorConfig, make_report, prepare


def pearson_scores(X, y):
    xc = X - X.mean(axis=0)
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum(axis=0))
    sy = np.sqrt(yc @ yc)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (xc.T @ yc) / (sx * sy)
    return np.where((sx > 0) & (sy > 0), np.clip(r, -1.0, 1.0), 0.0)


def pearson_rank(X, y, config=SelectorConfig(), feature_names=None):
    X, y, names = prepare(X, y, feature_names)
    r = pearson_scores(X, y)
    return make_report("pearson", np.abs(r), names, config.top_k, {"signed_r": r})


def f_statistic(r, n):
    """Univariate regression F = (n-2) r^2 / (1 - r^2); perfect fits map to ``INF_SCORE``."""
    r2 = np.asarray(r, dtype=np.float64) ** 2
    denom = 1.0 - r2
    perfect = denom <= 1e-15
    with np.errstate(divide="ignore"):
        f = np.where(perfect, INF_SCORE, (n - 2) * r2 / np.where(perfect, 1.0, denom))
    return f, perfect


def anova_f_rank(X, y, config=SelectorConfig(), feature_names=None):
    X, y, names = prepare(X, y, feature_names)
    if X.shape[0] < 3:
        raise DataError("anova_f_rank needs n >= 3")
    f, perfect = f_statistic(pearson_scores(X, y), X.shape[0])
    meta = {"perfect_fit_columns": [names[j] for j in np.flatnonzero(perfect)]}
    return make_report("anova", f, names, config.top_k, meta)


# -- mutual information --------------------------------------------------------

def bin_codes(x, bins):
    """Integer codes: raw levels when there are at most ``bins`` of them, else
    equal-frequency bins cut at the empirical quantiles."""
    levels, inv = np.unique(x, return_inverse=True)
    if levels.size <= bins:
        return inv.astype(np.int64), int(levels.size)
    edges = np.unique(np.quantile(x, np.arange(1, bins) / bins))
    codes = np.searchsorted(edges, x, side="left")
    _, codes = np.unique(codes, return_inverse=True)
    return codes.astype(np.int64), int(codes.max()) + 1


def entropy(codes, k):
    c = np.bincount(codes, minlength=k)
    c = c[c > 0]
    p = c / codes.size
    return float(-(p * np.log(p)).sum())


def mutual_info(a, ka, b, kb):
    """Plug-in mutual information (nats) of two code vectors."""
    n = a.size
    joint = np.bincount(a * kb + b, minlength=ka * kb).reshape(ka, kb)
    ca = joint.sum(axis=1)
    cb = joint.sum(axis=0)
    i, j = np.nonzero(joint)
    c = joint[i, j].astype(np.float64)
    return float(max((c / n * np.log(c * n / (ca[i] * cb[j]))).sum(), 0.0))


def mutual_info_rank(X, y, config=SelectorConfig(), feature_names=None):
    X, y, names = prepare(X, y, feature_names)
    yc, ky = bin_codes(y, config.mi_bins)
    scores = np.empty(X.shape[1])
    for j in range(X.shape[1]):
        xc, kx = bin_codes(X[:, j], config.mi_bins)
        scores[j] = mutual_info(xc, kx, yc, ky)
    return make_report("mutual_info", scores, names, config.top_k,
                       {"bins": config.mi_bins, "estimator": "plug-in, equal-frequency bins"})


def normalized_mi(a, ka, ha, b, kb, hb):
    h = min(ha, hb)
    if h <= 0:
        return 0.0
    return mutual_info(a, ka, b, kb) / h


def inmifs_select(X, y, config=SelectorConfig(), feature_names=None):
    X, y, names = prepare(X, y, feature_names)
    p = X.shape[1]
    k = min(config.top_k, p)
    yc, ky = bin_codes(y, config.mi_bins)
    hy = entropy(yc, ky)
    codes = [bin_codes(X[:, j], config.mi_bins) for j in range(p)]
    hx = np.array([entropy(c, kc) for c, kc in codes])
    relevance = np.array([normalized_mi(c, kc, hx[j], yc, ky, hy) for j, (c, kc) in enumerate(codes)])
    redundancy = np.zeros(p)
    chosen = np.zeros(p, dtype=bool)
    order, scores = [], []
    for step in range(k):
        crit = relevance - redundancy if step else relevance.copy()
        crit[chosen] = -np.inf
        j = int(np.argmax(crit))  # first maximum = lowest index
        order.append(j)
        scores.append(float(crit[j]))
        chosen[j] = True
        cj, kj = codes[j]
        for i in np.flatnonzero(~chosen):
            ci, ki = codes[i]
            redundancy[i] = max(redundancy[i], normalized_mi(ci, ki, hx[i], cj, kj, hx[j]))
    full = np.zeros(p)
    full[order] = scores
    meta = {"criterion": "NI(x;y) - max_s NI(x;x_s), NI = MI / min(H)", "bins": config.mi_bins,
            "relevance": relevance}
    return make_report("inmifs", full, names, config.top_k, meta, order=np.array(order))


# -- Kendall tau-b ---------------------------------------------------------------

@numba.njit(cache=True)
def _count_inversions(a):
    # bottom-up merge sort counting pairs i<j with a[i] > a[j]
    n = a.size
    src = a.copy()
    dst = np.empty_like(src)
    swaps = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if src[i] <= src[j]:
                    dst[k] = src[i]
                    i += 1
                else:
                    dst[k] = src[j]
                    swaps += mid - i
                    j += 1
                k += 1
            while i < mid:
                dst[k] = src[i]
                i += 1
                k += 1
            while j < hi:
                dst[k] = src[j]
                j += 1
                k += 1
        src, dst = dst, src
        width *= 2
    return swaps


def _tie_pairs(sorted_vals):
    if sorted_vals.size == 0:
        return 0
    _, counts = np.unique(sorted_vals, return_counts=True)
    counts = counts.astype(np.int64)
    return int((counts * (counts - 1) // 2).sum())


def kendall_tau_b(x, y):
    """Tie-corrected Kendall tau-b in O(n log n); 0 when either side is all tied."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    if n < 2:
        return 0.0
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    n0 = n * (n - 1) // 2
    n1 = _tie_pairs(xs)
    # joint ties: consecutive equal (x, y) runs in lexicographic order
    brk = np.flatnonzero((np.diff(xs) != 0) | (np.diff(ys) != 0)) + 1
    runs = np.diff(np.concatenate(([0], brk, [n]))).astype(np.int64)
    n3 = int((runs * (runs - 1) // 2).sum())
    swaps = int(_count_inversions(ys))
    n2 = _tie_pairs(np.sort(ys))
    if n0 == n1 or n0 == n2:
        return 0.0
    s = n0 - n1 - n2 + n3 - 2 * swaps
    return s / np.sqrt(float(n0 - n1) * float(n0 - n2))


def kendall_rank(X, y, config=SelectorConfig(), feature_names=None):
    X, y, names = prepare(X, y, feature_names)
    if X.shape[0] < 2:
        raise DataError("kendall_rank needs n >= 2")
    tau = np.array([kendall_tau_b(X[:, j], y) for j in range(X.shape[1])])
    return make_report("kendall", np.abs(tau), names, config.top_k, {"tau_b": tau})
