"""Additive MARS: hinge-pair forward pass, GCV backward pruning.

The forward scan scores every (feature, knot) pair in O(n * M) per feature by
sweeping the feature's sorted values and keeping running sums of the current
orthonormal basis, so no candidate column is ever materialised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy import linalg

from ..errors import DataError
from .base import SelectorConfig, make_report, prepare, standardize_columns

KNOT_PENALTY = 3.0


@numba.njit(cache=True)
def _pair_reduction(g11, g22, g12, c1, c2):
    # RSS drop from adding the two (already orthogonalised) columns;
    # also reports which of the two columns are usable
    if g11 <= 0.0 and g22 <= 0.0:
        return 0.0, False, False
    if g11 <= 0.0:
        return c2 * c2 / g22, False, True
    if g22 <= 0.0:
        return c1 * c1 / g11, True, False
    det = g11 * g22 - g12 * g12
    if det <= 1e-9 * g11 * g22:
        a = c1 * c1 / g11
        b = c2 * c2 / g22
        if a >= b:
            return a, True, False
        return b, False, True
    return (g22 * c1 * c1 - 2.0 * g12 * c1 * c2 + g11 * c2 * c2) / det, True, True


@numba.njit(cache=True)
def _scan(X, order, Q, r):
    n, p = X.shape
    M = Q.shape[1]
    Tq = np.zeros(M)
    for i in range(n):
        for m in range(M):
            Tq[m] += Q[i, m]
    Tr = 0.0
    for i in range(n):
        Tr += r[i]
    best = 0.0
    best_j = -1
    best_t = 0.0
    best_plus = False
    best_minus = False
    TXq = np.empty(M)
    Pq = np.empty(M)
    PXq = np.empty(M)
    for j in range(p):
        TX1 = 0.0
        TXX = 0.0
        TXr = 0.0
        for m in range(M):
            TXq[m] = 0.0
        for i in range(n):
            x = X[i, j]
            TX1 += x
            TXX += x * x
            TXr += x * r[i]
            for m in range(M):
                TXq[m] += x * Q[i, m]
        P1 = 0.0
        PX1 = 0.0
        PXX = 0.0
        Pr = 0.0
        PXr = 0.0
        for m in range(M):
            Pq[m] = 0.0
            PXq[m] = 0.0
        for k in range(n):
            i = order[j, k]
            x = X[i, j]
            P1 += 1.0
            PX1 += x
            PXX += x * x
            Pr += r[i]
            PXr += x * r[i]
            for m in range(M):
                Pq[m] += Q[i, m]
                PXq[m] += x * Q[i, m]
            if k + 1 < n and X[order[j, k + 1], j] == x:
                continue
            t = x
            S1 = n - P1
            gpp = (TXX - PXX) - 2.0 * t * (TX1 - PX1) + t * t * S1
            gmm = t * t * P1 - 2.0 * t * PX1 + PXX
            cp = (TXr - PXr) - t * (Tr - Pr)
            cm = t * Pr - PXr
            app = 0.0
            amm = 0.0
            apm = 0.0
            for m in range(M):
                ap = (TXq[m] - PXq[m]) - t * (Tq[m] - Pq[m])
                am = t * Pq[m] - PXq[m]
                app += ap * ap
                amm += am * am
                apm += ap * am
            g11 = gpp - app
            g22 = gmm - amm
            if g11 <= 1e-9 * gpp:
                g11 = 0.0
            if g22 <= 1e-9 * gmm:
                g22 = 0.0
            red, up, um = _pair_reduction(g11, g22, -apm, cp, cm)
            if red > best:
                best = red
                best_j = j
                best_t = t
                best_plus = up
                best_minus = um
    return best, best_j, best_t, best_plus, best_minus


def hinge(x, knot, sign):
    return np.maximum(0.0, sign * (x - knot))


def _orthogonalize(Q, v):
    for _ in range(2):
        v = v - Q @ (Q.T @ v)
    return v


def effective_params(M):
    return M + KNOT_PENALTY * (M - 1) / 2.0


def gcv(rss, n, M):
    c = effective_params(M)
    if c >= n:
        return np.inf
    return rss / (n * (1.0 - c / n) ** 2)


@dataclass
class MarsFit:
    terms: list  # (feature, knot, sign) on the original feature scale
    coef: np.ndarray  # intercept first
    gcv: float
    rss: float

    def design(self, X):
        cols = [np.ones(X.shape[0])] + [hinge(X[:, j], t, s) for j, t, s in self.terms]
        return np.column_stack(cols)

    def predict(self, X):
        return self.design(np.asarray(X, dtype=np.float64)) @ self.coef


def _subset_rss(G, b, yy, idx):
    Gs = G[np.ix_(idx, idx)]
    bs = b[idx]
    try:
        c = linalg.cho_factor(Gs)
        beta = linalg.cho_solve(c, bs)
    except linalg.LinAlgError:
        beta = np.linalg.lstsq(Gs, bs, rcond=None)[0]
    return max(yy - bs @ beta, 0.0), beta


def mars_fit(X, y, max_terms=40):
    """Forward/backward additive MARS. Returns ``(MarsFit, info)``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if n < 10:
        raise DataError(f"insufficient rows for MARS: n={n} < 10")
    Z, _ = standardize_columns(X)
    mu, sd = X.mean(axis=0), X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    ym, ys = y.mean(), y.std()
    ys = ys if ys > 0 else 1.0
    yz = (y - ym) / ys
    order = np.argsort(Z, axis=0, kind="stable").T.copy()

    Q = np.ones((n, 1)) / np.sqrt(n)
    r = yz - Q @ (Q.T @ yz)
    tss = float(r @ r)
    terms = []  # on the standardised scale
    cols = [np.ones(n)]
    while len(cols) + 1 <= max_terms and tss > 0:
        rss = float(r @ r)
        if rss <= 1e-24 * tss:
            break
        red, j, t, up, um = _scan(Z, order, np.ascontiguousarray(Q), r)
        if j < 0 or red <= 1e-12 * tss:
            break
        added = False
        for use, sign in ((up, 1.0), (um, -1.0)):
            if not use or len(cols) >= max_terms:
                continue
            h = hinge(Z[:, j], t, sign)
            v = _orthogonalize(Q, h)
            nv = np.linalg.norm(v)
            if nv <= 1e-10 * max(np.linalg.norm(h), 1e-300):
                continue
            Q = np.column_stack([Q, v / nv])
            cols.append(h)
            terms.append((j, t, sign))
            added = True
        if not added:
            break
        r = yz - Q @ (Q.T @ yz)

    B = np.column_stack(cols)
    G = B.T @ B
    b = B.T @ yz
    yy = float(yz @ yz)
    active = list(range(B.shape[1]))
    rss, _ = _subset_rss(G, b, yy, active)
    path = [(list(active), rss, gcv(rss, n, len(active)))]
    while len(active) > 1:
        trial = []
        for pos in range(1, len(active)):
            idx = active[:pos] + active[pos + 1:]
            trial.append((_subset_rss(G, b, yy, idx)[0], pos))
        rss, pos = min(trial)
        active = active[:pos] + active[pos + 1:]
        path.append((list(active), rss, gcv(rss, n, len(active))))
    gcvs = [g for _, _, g in path]
    best = int(np.argmin(gcvs))
    final, final_rss, final_gcv = path[best]
    rss_f, beta_z = _subset_rss(G, b, yy, final)

    # per-term GCV improvement inside the final model
    term_gain = {}
    for pos in range(1, len(final)):
        idx = final[:pos] + final[pos + 1:]
        g_wo = gcv(_subset_rss(G, b, yy, idx)[0], n, len(idx))
        term_gain[final[pos]] = g_wo - final_gcv

    # back to the original scale: hinge(z, t) = hinge(x, mu + sd*t) / sd
    kept = [terms[c - 1] for c in final[1:]]
    orig_terms = [(j, float(mu[j] + sd[j] * t), s) for j, t, s in kept]
    coef = np.empty(len(final))
    coef[0] = ym + ys * beta_z[0]
    for k, (j, _, _) in enumerate(kept, start=1):
        coef[k] = beta_z[k] * ys / sd[j]
    model = MarsFit(orig_terms, coef, final_gcv * ys * ys, rss_f * ys * ys)
    feature_gain = np.zeros(p)
    for c, g in term_gain.items():
        feature_gain[terms[c - 1][0]] += g * ys * ys
    info = {
        "forward_terms": len(terms),
        "final_terms": len(final) - 1,
        "gcv_path": [g * ys * ys for g in gcvs],
        "forward_gcv": gcvs[0] * ys * ys,
        "final_gcv": final_gcv * ys * ys,
        "feature_gain": feature_gain,
    }
    return model, info


def mars_select(X, y, config=SelectorConfig(), feature_names=None):
    X, y, names = prepare(X, y, feature_names)
    model, info = mars_fit(X, y, config.mars_max_terms)
    scores = np.clip(info["feature_gain"], 0.0, None)
    meta = {
        "terms": [[names[j], t, s] for j, t, s in model.terms],
        "forward_terms": info["forward_terms"],
        "final_gcv": info["final_gcv"],
        "forward_gcv": info["forward_gcv"],
        "max_terms": config.mars_max_terms,
        "knot_penalty": KNOT_PENALTY,
    }
    return make_report("mars", scores, names, config.top_k, meta)
