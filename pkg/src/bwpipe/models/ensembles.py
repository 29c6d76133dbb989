"""Tree ensembles built on the CART kernel."""

from __future__ import annotations

import math

import numpy as np

from .._cart import Tree, fit_tree, presort


def resolve_mtry(mtry, q):
    if mtry is None or mtry == "all":
        return q
    if mtry == "third":
        return max(1, math.ceil(q / 3))
    if mtry == "sqrt":
        return max(1, math.ceil(math.sqrt(q)))
    return int(min(max(int(mtry), 1), q))


def tree_rng(seed, index):
    # one stream per (seed, tree index): growing the forest never perturbs earlier trees
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(index)])


def random_forest(X, y, n_trees, mtry, min_leaf, max_depth, bootstrap, seed):
    n, q = X.shape
    m = resolve_mtry(mtry, q)
    trees = []
    for t in range(n_trees):
        rng = tree_rng(seed, t)
        idx = rng.integers(0, n, size=n) if bootstrap else None
        tree_seed = int(rng.integers(0, 2**31 - 1))
        trees.append(fit_tree(X, y, idx=idx, max_depth=max_depth, min_leaf=min_leaf,
                              mtry=m, seed=tree_seed))
    return trees


def forest_predict(trees, X):
    out = np.zeros(X.shape[0])
    for tree in trees:  # fixed summation order
        out += tree.predict(X)
    return out / len(trees)


def gradient_boosting(X, y, n_stages, learning_rate, max_depth, min_leaf):
    """Least-squares boosting. Returns ``(init, trees, train_mse)``.

    ``train_mse[0]`` is the loss of the constant ``init`` model; entry ``m``
    follows stage ``m``.
    """
    order = presort(X)
    init = float(y.mean())
    F = np.full(y.shape[0], init)
    train_mse = [float(np.mean((y - F) ** 2))]
    trees = []
    for _ in range(n_stages):
        resid = y - F
        tree = fit_tree(X, resid, max_depth=max_depth, min_leaf=min_leaf, order=order)
        F = F + learning_rate * tree.predict(X)
        trees.append(tree)
        train_mse.append(float(np.mean((y - F) ** 2)))
    return init, trees, train_mse


def boosting_predict(init, trees, learning_rate, X):
    F = np.full(X.shape[0], init)
    for tree in trees:
        F = F + learning_rate * tree.predict(X)
    return F


def adaboost_r2(X, y, n_learners, max_depth, min_leaf, seed):
    """Drucker's AdaBoost.R2 with the linear loss and weighted resampling.

    Returns ``(trees, learner_weights, average_losses)``.
    """
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    w = np.full(n, 1.0 / n)
    trees, weights, losses = [], [], []
    for _ in range(n_learners):
        idx = rng.choice(n, size=n, replace=True, p=w)
        tree = fit_tree(X, y, idx=idx, max_depth=max_depth, min_leaf=min_leaf)
        err = np.abs(tree.predict(X) - y)
        top = err.max()
        if top <= 0:
            trees.append(tree)
            weights.append(1.0)
            losses.append(0.0)
            break
        loss = err / top
        avg = float(w @ loss)
        if avg >= 0.5:
            if not trees:
                trees.append(tree)
                weights.append(1.0)
                losses.append(avg)
            break
        beta = avg / (1.0 - avg)
        trees.append(tree)
        weights.append(math.log(1.0 / beta))
        losses.append(avg)
        w = w * beta ** (1.0 - loss)
        w = w / w.sum()
    return trees, np.asarray(weights), losses


def weighted_median_predict(trees, weights, X):
    preds = np.stack([t.predict(X) for t in trees])  # (T, m)
    order = np.argsort(preds, axis=0, kind="stable")
    sorted_w = weights[order]
    cum = np.cumsum(sorted_w, axis=0)
    pick = (cum >= 0.5 * cum[-1]).argmax(axis=0)
    chosen = order[pick, np.arange(X.shape[0])]
    return preds[chosen, np.arange(X.shape[0])]


def summed_importances(trees):
    total = np.zeros(trees[0].n_features)
    for t in trees:
        total += t.importances()
    return total


__all__ = [
    "Tree",
    "fit_tree",
    "random_forest",
    "forest_predict",
    "gradient_boosting",
    "boosting_predict",
    "adaboost_r2",
    "weighted_median_predict",
    "summed_importances",
    "resolve_mtry",
]
