"""Wrapper (forward, RFE) and embedded (lasso, ridge, tree) selectors."""

from __future__ import annotations

import numpy as np

from .._cart import fit_tree
from ..models import linear
from ..splits import kfold_split
from .base import SelectorConfig, make_report, prepare, standardize_columns

STABILIZE_LAMBDA = 1e-8


def _solve_spd(G, b):
    """Solve a Gram system, ridge-stabilising near-singular ones."""
    d = np.diag(G)
    try:
        L = np.linalg.cholesky(G)
        ld = np.diag(L) ** 2
        if ld.min() > 1e-10 * max(d.max(), 1e-300):
            return np.linalg.solve(G, b), False
    except np.linalg.LinAlgError:
        pass
    return np.linalg.solve(G + STABILIZE_LAMBDA * np.eye(G.shape[0]), b), True


def forward_select(X, y, config=SelectorConfig(), feature_names=None):
    """Greedy OLS forward selection scored by k-fold CV RMSE.

    Each candidate set is solved from fold-wise Gram matrices of ``[1, X]`` so a
    step costs one small solve per (candidate, fold).
    """
    X, y, names = prepare(X, y, feature_names)
    n, p = X.shape
    k = min(config.top_k, p)
    folds = kfold_split(n, config.forward_folds, config.seed)
    A = np.column_stack([np.ones(n), X])
    grams = [(A[tr].T @ A[tr], A[tr].T @ y[tr]) for tr, _ in folds]

    def cv_rmse(cols):
        idx = [0] + [c + 1 for c in cols]
        sq, stabilized = 0.0, False
        for (tr, va), (G, b) in zip(folds, grams):
            beta, st = _solve_spd(G[np.ix_(idx, idx)], b[idx])
            stabilized |= st
            r = y[va] - A[np.ix_(va, idx)] @ beta
            sq += r @ r
        return float(np.sqrt(sq / n)), stabilized

    current, any_stab = cv_rmse([])
    selected, gains, path = [], [], [current]
    remaining = list(range(p))
    while len(selected) < k and remaining:
        best, best_j = np.inf, -1
        for j in remaining:
            rmse, st = cv_rmse(selected + [j])
            any_stab |= st
            if rmse < best:
                best, best_j = rmse, j
        if current - best <= 1e-6:
            break
        selected.append(best_j)
        gains.append(current - best)
        path.append(best)
        remaining.remove(best_j)
        current = best
    scores = np.zeros(p)
    scores[selected] = gains
    meta = {"selection_order": [names[j] for j in selected], "cv_rmse_path": path,
            "n_selected": len(selected), "ridge_stabilized": bool(any_stab)}
    return make_report("forward", scores, names, config.top_k, meta)


def rfe_select(X, y, config=SelectorConfig(), feature_names=None):
    """Ridge-based recursive elimination; survivors ranked by |standardised coefficient|."""
    X, y, names = prepare(X, y, feature_names)
    p = X.shape[1]
    k = min(config.top_k, p)
    Z, _ = standardize_columns(X)
    alive = list(range(p))
    eliminated = []
    while len(alive) > k:
        _, _, bz = linear.ridge(Z[:, alive], y, config.rfe_lambda)
        mag = np.abs(bz)
        drop = min(config.rfe_step, len(alive) - k)
        # weakest first; among ties the higher column index goes first
        order = np.lexsort((-np.array(alive), mag))[:drop]
        for pos in sorted(order, reverse=True):
            eliminated.append(alive.pop(pos))
    _, _, bz = linear.ridge(Z[:, alive], y, config.rfe_lambda)
    scores = np.zeros(p)
    scores[alive] = np.abs(bz)
    meta = {"elimination_order": [names[j] for j in eliminated], "lambda": config.rfe_lambda}
    return make_report("rfe", scores, names, config.top_k, meta)


def lasso_select(X, y, config=SelectorConfig(), feature_names=None):
    X, y, names = prepare(X, y, feature_names)
    n, p = X.shape
    Z, _ = standardize_columns(X)
    yc = y - y.mean()
    lmax = linear.lambda_max(Z, yc)
    meta = {"lambda_max": lmax}
    if lmax <= 0:
        meta.update(chosen_lambda=0.0, cv_rmse=[], kkt_max=0.0)
        return make_report("lasso", np.zeros(p), names, config.top_k, meta)
    lambdas = lmax * np.logspace(0, np.log10(config.lasso_min_ratio), config.lasso_path_points)
    sq = np.zeros(lambdas.size)
    for tr, va in kfold_split(n, config.lasso_folds, config.seed):
        Zt, const = standardize_columns(X[tr])
        mu, sd = X[tr].mean(axis=0), X[tr].std(axis=0)
        sd = np.where(const, 1.0, sd)
        Zv = (X[va] - mu) / sd
        Zv[:, const] = 0.0
        ym = y[tr].mean()
        betas = linear.lasso_path(Zt, y[tr] - ym, lambdas)
        resid = (y[va] - ym)[None, :] - betas @ Zv.T
        sq += (resid ** 2).sum(axis=1)
    cv = np.sqrt(sq / n)
    best = int(np.argmin(cv))
    betas = linear.lasso_path(Z, yc, lambdas[: best + 1])
    kkt = max(linear.kkt_residual(Z, yc, b, lam) for b, lam in zip(betas, lambdas))
    coef = betas[-1]
    meta.update(chosen_lambda=float(lambdas[best]), cv_rmse=cv, kkt_max=kkt,
                n_nonzero=int((coef != 0).sum()))
    return make_report("lasso", np.abs(coef), names, config.top_k, meta)


def ridge_rank(X, y, config=SelectorConfig(), feature_names=None):
    X, y, names = prepare(X, y, feature_names)
    Z, _ = standardize_columns(X)
    yc = y - y.mean()
    beta = np.linalg.solve(Z.T @ Z + config.ridge_lambda * np.eye(Z.shape[1]), Z.T @ yc)
    return make_report("ridge", np.abs(beta), names, config.top_k,
                       {"lambda": config.ridge_lambda, "coefficients": beta})


def tree_importance_rank(X, y, config=SelectorConfig(), feature_names=None):
    X, y, names = prepare(X, y, feature_names)
    tree = fit_tree(X, y, max_depth=config.tree_max_depth, min_leaf=config.tree_min_leaf)
    imp = tree.importances()
    total = imp.sum()
    scores = imp / total if total > 0 else imp
    return make_report("decision_tree", scores, names, config.top_k,
                       {"n_splits": tree.n_splits, "max_depth": config.tree_max_depth,
                        "min_leaf": config.tree_min_leaf})
