"""Hybrid missing-data completion: KNN for discrete columns, MICE/PMM for continuous.

Both stages accept ``fit_rows``. When given, only those rows serve as donors,
regression training rows or standardisation references; the remaining rows are
still imputed but never read to fit anything. The leak-free evaluation mode
relies on this.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .dataset import DataMatrix
from .errors import DataError, ImputationError

MECHANISMS = ("mcar", "mar", "mnar")


@dataclass(frozen=True)
class ImputationConfig:
    mice_cycles: int = 10
    pmm_donors: int = 5
    knn_k: int = 5
    ridge_lambda: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.mice_cycles < 1 or self.pmm_donors < 1 or self.knn_k < 1:
            raise DataError("mice_cycles, pmm_donors and knn_k must be >= 1")
        if self.ridge_lambda < 0:
            raise DataError("ridge_lambda must be nonnegative")


@dataclass
class ImputationResult:
    completed: DataMatrix
    trace: list = field(default_factory=list)
    per_column_method: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def diagnostics_dict(self):
        return {
            "trace": list(self.trace),
            "per_column_method": dict(self.per_column_method),
            **self.diagnostics,
        }


def _rows_mask(n, fit_rows):
    if fit_rows is None:
        return np.ones(n, dtype=bool)
    fit = np.zeros(n, dtype=bool)
    fit[np.asarray(fit_rows)] = True
    return fit


def _mode(values):
    vals, counts = np.unique(values, return_counts=True)
    return vals[np.argmax(counts)]  # np.unique sorts, argmax takes the first -> smallest on ties


# ---------------------------------------------------------------------------
# KNN for discrete columns
# ---------------------------------------------------------------------------

def knn_impute_discrete(data: DataMatrix, config: ImputationConfig, fit_rows=None,
                        diagnostics: dict | None = None) -> DataMatrix:
    """Fill missing discrete cells with the mode of the k nearest donor rows.

    Distance is Euclidean over z-scored continuous coordinates plus a 0/1
    mismatch per discrete coordinate, over coordinates observed in both rows,
    rescaled by ``p / shared`` to compensate for the unshared ones.
    """
    n, p = data.shape
    disc = data.columns_of_kind("discrete")
    obs = np.asarray(data.mask)
    targets = [j for j in disc if not obs[:, j].all()]
    if diagnostics is not None:
        diagnostics.setdefault("knn_fallbacks", {})
        diagnostics.setdefault("knn_cells", 0)
    if not targets:
        return data
    fit = _rows_mask(n, fit_rows)
    for j in targets:
        if not (obs[:, j] & fit).any():
            raise ImputationError(f"column uninferrable: {data.column_names[j]!r} has no observed values")

    raw = data.filled(0.0)
    is_disc = np.zeros(p, dtype=bool)
    is_disc[disc] = True
    coords = raw.copy()
    for j in np.flatnonzero(~is_disc):
        ref = raw[obs[:, j] & fit, j]
        if ref.size == 0:
            continue
        sd = ref.std()
        coords[:, j] = (raw[:, j] - ref.mean()) / (sd if sd > 0 else 1.0)

    out = raw.copy()
    new_mask = obs.copy()
    fallbacks = {data.column_names[j]: 0 for j in targets}
    n_cells = 0
    rows_needing = np.flatnonzero((~obs[:, targets]).any(axis=1))
    fit_idx = np.flatnonzero(fit)
    c_fit = coords[fit_idx]
    o_fit = obs[fit_idx]
    for i in rows_needing:
        both = o_fit & obs[i]
        diff = c_fit - coords[i]
        contrib = np.where(is_disc, diff != 0, diff * diff)
        sq = np.where(both, contrib, 0.0).sum(axis=1)
        shared = both.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            d2 = np.where(shared > 0, sq * p / shared, np.inf)
        d2[fit_idx == i] = np.inf
        for j in targets:
            if obs[i, j]:
                continue
            n_cells += 1
            ok = o_fit[:, j] & np.isfinite(d2)
            cand = np.flatnonzero(ok)
            if cand.size == 0:
                fallbacks[data.column_names[j]] += 1
                out[i, j] = _mode(raw[obs[:, j] & fit, j])
            else:
                order = cand[np.argsort(d2[cand], kind="stable")][: config.knn_k]
                out[i, j] = _mode(raw[fit_idx[order], j])
            new_mask[i, j] = True
    if diagnostics is not None:
        for k, v in fallbacks.items():
            diagnostics["knn_fallbacks"][k] = diagnostics["knn_fallbacks"].get(k, 0) + v
        diagnostics["knn_cells"] += n_cells
    out[~new_mask] = np.nan
    return DataMatrix(out, new_mask, data.column_names, data.column_meta)


# ---------------------------------------------------------------------------
# MICE with predictive mean matching for continuous columns
# ---------------------------------------------------------------------------

def _ridge_predictor(x_train, y_train, lam, name):
    mean = x_train.mean(axis=0)
    sd = x_train.std(axis=0)
    keep = sd > 0
    z = (x_train[:, keep] - mean[keep]) / sd[keep]
    yc = y_train - y_train.mean()
    gram = z.T @ z + lam * np.eye(z.shape[1])
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise ImputationError(f"singular design while imputing column {name!r}") from None
    d = np.diag(chol)
    if d.size and d.min() <= 1e-7 * d.max():
        raise ImputationError(f"numerically singular design while imputing column {name!r}")
    beta = np.linalg.solve(chol.T, np.linalg.solve(chol, z.T @ yc))
    intercept = y_train.mean()

    def predict(x):
        return intercept + ((x[:, keep] - mean[keep]) / sd[keep]) @ beta

    return predict


def mice_impute_continuous(data: DataMatrix, config: ImputationConfig, fit_rows=None,
                           rng: np.random.Generator | None = None) -> ImputationResult:
    """Chained-equation imputation of continuous columns with predictive mean matching.

    Discrete columns must already be complete. Continuous gaps start at the
    column mean; columns are then revisited in increasing-missingness order,
    each regressed (ridge) on all other columns, and every missing cell takes the
    observed value of a donor drawn among the ``pmm_donors`` nearest predictions.
    """
    n, p = data.shape
    obs = np.asarray(data.mask)
    disc = data.columns_of_kind("discrete")
    if disc and not obs[:, disc].all():
        raise ImputationError("discrete columns must be complete before MICE; run KNN first")
    fit = _rows_mask(n, fit_rows)
    targets = [j for j in data.columns_of_kind("continuous") if not obs[:, j].all()]
    method = {name: "none" for name in data.column_names}
    if not targets:
        return ImputationResult(data, [], method, {})
    for j in targets:
        if (obs[:, j] & fit).sum() < 10:
            raise ImputationError(
                f"column {data.column_names[j]!r} has fewer than 10 observed training values"
            )
        method[data.column_names[j]] = "mice"

    rng = np.random.default_rng(config.seed) if rng is None else rng
    cur = data.filled(0.0)
    scale = {}
    for j in targets:
        ref = cur[obs[:, j] & fit, j]
        cur[~obs[:, j], j] = ref.mean()
        scale[j] = ref.std() if ref.std() > 0 else 1.0
    order = sorted(targets, key=lambda j: (int((~obs[:, j]).sum()), j))
    n_cells = int(sum((~obs[:, j]).sum() for j in targets))
    k = config.pmm_donors
    trace = []
    for _ in range(config.mice_cycles):
        total_change = 0.0
        for j in order:
            train = obs[:, j] & fit
            others = [c for c in range(p) if c != j]
            predict = _ridge_predictor(
                cur[np.ix_(train, others)], cur[train, j], config.ridge_lambda, data.column_names[j]
            )
            donor_vals = cur[train, j]
            pred_obs = predict(cur[np.ix_(train, others)])
            new_vals = cur[:, j].copy()
            # fit-row cells draw first so their donors never depend on other rows
            for group in (~obs[:, j] & fit, ~obs[:, j] & ~fit):
                rows = np.flatnonzero(group)
                if rows.size == 0:
                    continue
                pred_mis = predict(cur[np.ix_(rows, others)])
                dist = np.abs(pred_mis[:, None] - pred_obs[None, :])
                kk = min(k, pred_obs.size)
                nearest = np.argsort(dist, axis=1, kind="stable")[:, :kk]
                pick = rng.integers(0, kk, size=rows.size)
                new_vals[rows] = donor_vals[nearest[np.arange(rows.size), pick]]
            miss = ~obs[:, j]
            total_change += float(np.abs(new_vals[miss] - cur[miss, j]).sum() / scale[j])
            cur[:, j] = new_vals
        trace.append(total_change / n_cells)
    completed = DataMatrix(cur, np.ones((n, p), dtype=bool), data.column_names, data.column_meta)
    return ImputationResult(completed, trace, method, {"mice_cells": n_cells})


def hybrid_impute(data: DataMatrix, config: ImputationConfig | None = None, fit_rows=None) -> ImputationResult:
    """KNN on discrete gaps, then MICE on continuous gaps."""
    config = config or ImputationConfig()
    diagnostics: dict = {}
    obs = np.asarray(data.mask)
    rng = np.random.default_rng(config.seed)
    stage1 = knn_impute_discrete(data, config, fit_rows=fit_rows, diagnostics=diagnostics)
    result = mice_impute_continuous(stage1, config, fit_rows=fit_rows, rng=rng)
    method = dict(result.per_column_method)
    for j in data.columns_of_kind("discrete"):
        if not obs[:, j].all():
            method[data.column_names[j]] = "knn"
    diagnostics.update(result.diagnostics)
    diagnostics.setdefault("mice_cells", 0)
    diagnostics["assumption_note"] = (
        "MICE assumes MAR; check the MCAR/MNAR diagnosis before trusting imputed cells"
    )
    return ImputationResult(result.completed, result.trace, method, diagnostics)


def impute_chains(data: DataMatrix, config: ImputationConfig, n_chains: int):
    """Independent completions with seeds ``config.seed + c``."""
    from dataclasses import replace
    return [hybrid_impute(data, replace(config, seed=config.seed + c)) for c in range(n_chains)]


# ---------------------------------------------------------------------------
# Verification harness: mask known entries
# ---------------------------------------------------------------------------

def _solve_offset(z, slope, rate):
    f = lambda a: special.expit(a + slope * z).mean() - rate
    return optimize.brentq(f, -60.0, 60.0, xtol=1e-12)


def _standardize(x):
    sd = x.std()
    return (x - x.mean()) / (sd if sd > 0 else 1.0)


def mask_known_entries(data: DataMatrix, rate: float, mechanism: str = "mcar", seed: int = 0,
                       columns=None, slope: float = 2.0):
    """Hide a fraction of observed cells under a chosen mechanism.

    mcar: independent Bernoulli(rate) per cell. mar: columns are split into
    always-observed drivers and masked targets; a target's missingness is
    logistic in its driver (targets run at an inflated rate so the overall rate
    matches). mnar: logistic in the cell's own value.

    Returns the masked matrix and the hidden cells as ``(row, col, value)``.
    """
    if not 0 < rate < 0.5:
        raise DataError(f"rate must lie in (0, 0.5), got {rate}")
    if mechanism not in MECHANISMS:
        raise DataError(f"unknown mechanism {mechanism!r}")
    cols = list(range(data.n_cols)) if columns is None else [data.index(c) for c in columns]
    if not np.asarray(data.mask)[:, cols].all():
        raise DataError("mask_known_entries needs fully observed input columns")
    rng = np.random.default_rng(seed)
    x = data.filled(0.0)
    n = data.n_rows
    hide = np.zeros(data.shape, dtype=bool)
    if mechanism == "mcar":
        hide[:, cols] = rng.random((n, len(cols))) < rate
    elif mechanism == "mnar":
        u = rng.random((n, len(cols)))
        for k, j in enumerate(cols):
            z = _standardize(x[:, j])
            prob = special.expit(_solve_offset(z, slope, rate) + slope * z)
            hide[:, j] = u[:, k] < prob
    else:
        if len(cols) < 2:
            raise DataError("mar masking needs at least two columns")
        perm = [cols[i] for i in rng.permutation(len(cols))]
        n_drivers = len(perm) // 2
        drivers, masked = perm[:n_drivers], perm[n_drivers:]
        target_rate = rate * len(cols) / len(masked)
        u = rng.random((n, len(masked)))
        for k, j in enumerate(masked):
            z = _standardize(x[:, drivers[k % n_drivers]])
            prob = special.expit(_solve_offset(z, slope, target_rate) + slope * z)
            hide[:, j] = u[:, k] < prob
    rows, cs = np.nonzero(hide)
    cells = [(int(i), int(j), float(x[i, j])) for i, j in zip(rows, cs)]
    new_mask = np.asarray(data.mask) & ~hide
    return DataMatrix(x, new_mask, data.column_names, data.column_meta), cells
