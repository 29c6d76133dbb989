"""Sum-of-trees MCMC (grow / prune / change) with split-frequency variable scores."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from .base import SelectorConfig, make_report, prepare

P_GROW = 0.4
P_PRUNE = 0.4
ACCEPT_WINDOW = 100


class _Tree:
    __slots__ = ("var", "cut", "left", "right", "depth", "leaf_of", "free")

    def __init__(self, n):
        self.var = [-1]
        self.cut = [0.0]
        self.left = [-1]
        self.right = [-1]
        self.depth = [0]
        self.leaf_of = np.zeros(n, dtype=np.int64)
        self.free = []  # recycled node ids

    def leaves(self):
        return [i for i, v in enumerate(self.var) if v == -1]

    def prunable(self):
        out = []
        for i, v in enumerate(self.var):
            if v >= 0 and self.var[self.left[i]] == -1 and self.var[self.right[i]] == -1:
                out.append(i)
        return out

    def is_stump(self):
        return self.var[0] == -1

    def add_children(self, node):
        d = self.depth[node] + 1
        ids = []
        for _ in range(2):
            if self.free:
                i = self.free.pop()
                self.var[i] = -1
                self.depth[i] = d
            else:
                self.var.append(-1)
                self.cut.append(0.0)
                self.left.append(-1)
                self.right.append(-1)
                self.depth.append(d)
                i = len(self.var) - 1
            ids.append(i)
        self.left[node], self.right[node] = ids
        return ids

    def drop_children(self, node):
        for c in (self.left[node], self.right[node]):
            self.depth[c] = -1
            self.var[c] = -2  # tombstone until recycled
            self.free.append(c)
        self.left[node] = self.right[node] = -1
        self.var[node] = -1


def _cuts(x, min_leaf):
    """Admissible cut values (go left when x <= cut) leaving ``min_leaf`` rows per side."""
    m = x.size
    if m < 2 * min_leaf:
        return None
    s = np.sort(x)
    lo, hi = min_leaf - 1, m - min_leaf  # positions k with k+1 >= min_leaf and m-k-1 >= min_leaf
    k = np.arange(lo, hi)
    k = k[s[k] < s[k + 1]]
    return s[k] if k.size else None


def bart_select(X, y, config=SelectorConfig(), feature_names=None):
    X, y, names = prepare(X, y, feature_names)
    n, p = X.shape
    rng = np.random.default_rng(config.seed)
    m = config.bart_trees
    alpha, beta, min_leaf = config.bart_alpha, config.bart_beta, config.bart_min_leaf

    span = y.max() - y.min()
    meta = {"trees": m, "burn_in": config.bart_burn_in, "draws": config.bart_draws,
            "moves": ["grow", "prune", "change"], "warnings": []}
    if span <= 0:
        meta["total_splits"] = 0
        return make_report("bart", np.zeros(p), names, config.top_k, meta)
    ys = (y - y.min()) / span - 0.5
    tau2 = (0.5 / (config.bart_k * math.sqrt(m))) ** 2

    if n > p + 1:
        A = np.column_stack([np.ones(n), X])
        coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
        sig_hat2 = float(((ys - A @ coef) ** 2).sum() / (n - p - 1))
    else:
        sig_hat2 = float(ys.var(ddof=1))
    sig_hat2 = max(sig_hat2, 1e-12)
    nu = config.bart_nu
    lam = sig_hat2 * stats.chi2.ppf(1.0 - config.bart_q, nu) / nu
    sigma2 = sig_hat2

    def psplit(d):
        return alpha * (1.0 + d) ** (-beta)

    def log_tree_prior_split(d):
        return math.log(psplit(d)) + 2.0 * math.log(1.0 - psplit(d + 1)) - math.log(1.0 - psplit(d))

    def loglik(cnt, s):
        v = sigma2 + tau2 * cnt
        return 0.5 * math.log(sigma2 / v) + tau2 * s * s / (2.0 * sigma2 * v)

    trees = [_Tree(n) for _ in range(m)]
    fits = np.zeros((m, n))
    total = np.zeros(n)
    var_count = np.zeros(p, dtype=np.int64)
    score_acc = np.zeros(p)
    n_iter = config.bart_burn_in + config.bart_draws
    win_acc = win_prop = 0
    accepted_total = proposed_total = 0
    sigma_trace = []

    for it in range(n_iter):
        for t in range(m):
            tree = trees[t]
            R = ys - (total - fits[t])
            accepted = False
            stump = tree.is_stump()
            u = 1.0 if stump else rng.random()
            if stump or u < P_GROW:
                leaves = tree.leaves()
                leaf = leaves[int(rng.integers(len(leaves)))]
                v = int(rng.integers(p))
                idx = np.flatnonzero(tree.leaf_of == leaf)
                xv = X[idx, v]
                cuts = _cuts(xv, min_leaf)
                if cuts is not None:
                    c = float(cuts[int(rng.integers(cuts.size))])
                    go_left = xv <= c
                    rl = R[idx]
                    nl = int(go_left.sum())
                    sl = float(rl[go_left].sum())
                    s_all = float(rl.sum())
                    lr = (loglik(nl, sl) + loglik(idx.size - nl, s_all - sl)
                          - loglik(idx.size, s_all))
                    d = tree.depth[leaf]
                    # prunable count after the grow: the new node, minus its parent if that was prunable
                    w2 = len(tree.prunable()) + 1
                    par = _parent(tree, leaf)
                    if par >= 0 and leaf in (tree.left[par], tree.right[par]):
                        sib = tree.right[par] if tree.left[par] == leaf else tree.left[par]
                        if tree.var[sib] == -1:
                            w2 -= 1
                    p_grow = 1.0 if stump else P_GROW
                    log_a = (lr + log_tree_prior_split(d)
                             + math.log(P_PRUNE / w2) - math.log(p_grow / len(leaves)))
                    if math.log(rng.random()) < log_a:
                        lnode, rnode = tree.add_children(leaf)
                        tree.var[leaf] = v
                        tree.cut[leaf] = c
                        tree.leaf_of[idx[go_left]] = lnode
                        tree.leaf_of[idx[~go_left]] = rnode
                        var_count[v] += 1
                        accepted = True
            elif u < P_GROW + P_PRUNE:
                cand = tree.prunable()
                node = cand[int(rng.integers(len(cand)))]
                lnode, rnode = tree.left[node], tree.right[node]
                in_l = tree.leaf_of == lnode
                in_r = tree.leaf_of == rnode
                nl, nr = int(in_l.sum()), int(in_r.sum())
                sl, sr = float(R[in_l].sum()), float(R[in_r].sum())
                lr = loglik(nl + nr, sl + sr) - loglik(nl, sl) - loglik(nr, sr)
                d = tree.depth[node]
                b_after = len(tree.leaves()) - 1
                p_grow_after = 1.0 if node == 0 else P_GROW
                log_a = (lr - log_tree_prior_split(d)
                         + math.log(p_grow_after / b_after) - math.log(P_PRUNE / len(cand)))
                if math.log(rng.random()) < log_a:
                    var_count[tree.var[node]] -= 1
                    tree.leaf_of[in_l | in_r] = node
                    tree.drop_children(node)
                    accepted = True
            else:
                cand = tree.prunable()
                node = cand[int(rng.integers(len(cand)))]
                lnode, rnode = tree.left[node], tree.right[node]
                idx = np.flatnonzero((tree.leaf_of == lnode) | (tree.leaf_of == rnode))
                v = int(rng.integers(p))
                xv = X[idx, v]
                cuts = _cuts(xv, min_leaf)
                if cuts is not None:
                    c = float(cuts[int(rng.integers(cuts.size))])
                    go_left = xv <= c
                    rl = R[idx]
                    old_left = tree.leaf_of[idx] == lnode
                    nl_new, sl_new = int(go_left.sum()), float(rl[go_left].sum())
                    nl_old, sl_old = int(old_left.sum()), float(rl[old_left].sum())
                    s_all = float(rl.sum())
                    lr = (loglik(nl_new, sl_new) + loglik(idx.size - nl_new, s_all - sl_new)
                          - loglik(nl_old, sl_old) - loglik(idx.size - nl_old, s_all - sl_old))
                    if math.log(rng.random()) < lr:
                        var_count[tree.var[node]] -= 1
                        var_count[v] += 1
                        tree.var[node] = v
                        tree.cut[node] = c
                        tree.leaf_of[idx[go_left]] = lnode
                        tree.leaf_of[idx[~go_left]] = rnode
                        accepted = True

            # conjugate leaf draws
            size = len(tree.var)
            cnt = np.bincount(tree.leaf_of, minlength=size)
            sums = np.bincount(tree.leaf_of, weights=R, minlength=size)
            post_v = sigma2 * tau2 / (sigma2 + tau2 * cnt)
            post_m = tau2 * sums / (sigma2 + tau2 * cnt)
            mu = post_m + np.sqrt(post_v) * rng.standard_normal(size)
            new_fit = mu[tree.leaf_of]
            total += new_fit - fits[t]
            fits[t] = new_fit

            win_prop += 1
            win_acc += accepted
            proposed_total += 1
            accepted_total += accepted

        resid = ys - total
        sigma2 = (nu * lam + float(resid @ resid)) / rng.chisquare(nu + n)
        sigma_trace.append(math.sqrt(sigma2) * span)

        if (it + 1) % ACCEPT_WINDOW == 0:
            rate = win_acc / win_prop
            if rate < 0.01 or rate > 0.99:
                meta["warnings"].append(
                    f"acceptance rate {rate:.4f} in iterations {it + 2 - ACCEPT_WINDOW}-{it + 1}")
            win_acc = win_prop = 0

        if it >= config.bart_burn_in:
            tot = var_count.sum()
            if tot > 0:
                score_acc += var_count / tot

    scores = score_acc / config.bart_draws
    s = scores.sum()
    if s > 0:
        scores = scores / s
    meta.update(
        acceptance_rate=accepted_total / max(proposed_total, 1),
        sigma_posterior_mean=float(np.mean(sigma_trace[config.bart_burn_in:])),
        total_splits=int(var_count.sum()),
        split_counts_last_draw=var_count.tolist(),
    )
    return make_report("bart", scores, names, config.top_k, meta)


def _parent(tree, node):
    if node == 0:
        return -1
    for i, (l, r) in enumerate(zip(tree.left, tree.right)):
        if l == node or r == node:
            return i
    return -1
