"""Grid search, selector x model combos and the full evaluation grid."""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..dataset import DataMatrix
from ..errors import DataError, NumericalError
from ..imputation import ImputationConfig, hybrid_impute
from ..models import (
    ModelSpec,
    TrainedModel,
    fit,
    model_entry,
    predict,
)
from ..models import ensembles
from ..selectors import SelectorConfig, SelectorReport, run_selector
from ..splits import kfold_split
from .metrics import CVConfig, Metrics, ResidualBins, compute_metrics, mean_metrics, residual_bins

MODES = ("paper", "leak-free")
IMPUTER_LABEL = "MICE+KNN"
FIT_ERRORS = (DataError, NumericalError, ArithmeticError, ValueError, np.linalg.LinAlgError)


def holdout_split(n, fraction, seed):
    """Sorted ``(train, holdout)`` row indices; the holdout is ``round(n * fraction)`` rows."""
    k = int(round(n * fraction))
    if k == 0:
        return np.arange(n), np.arange(0)
    perm = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x5EED]).permutation(n)
    return np.sort(perm[k:]), np.sort(perm[:k])


def combo_seed(seed, selector, model):
    """Stable per-combo seed, independent of scheduling and of which combos run."""
    h = hashlib.sha256(f"{seed}|{selector}|{model}".encode()).digest()
    return int.from_bytes(h[:4], "little") & 0x7FFFFFFF


# -- grid search -----------------------------------------------------------------

@dataclass
class GridSearchResult:
    best_params: dict
    best_index: int
    cv_metrics: Metrics
    fold_metrics: list
    points: list  # [{"params", "mean_rmse", "error"}]


def _fold_predictions(family, points, seed, Xtr, ytr, Xva, names):
    """Predictions for every grid point on one fold; boosting points that differ
    only in stage count share one fit."""
    out = [None] * len(points)
    errors = [None] * len(points)
    if family == "gradient_boosting":
        groups = {}
        for i, h in enumerate(points):
            key = tuple(sorted((k, v) for k, v in h.items() if k != "n_stages"))
            groups.setdefault(key, []).append(i)
        for idxs in groups.values():
            top = max(points[i].get("n_stages", 100) for i in idxs)
            h = dict(points[idxs[0]], n_stages=top)
            try:
                model = fit(ModelSpec(family, h, seed), Xtr, ytr, names)
            except FIT_ERRORS as exc:
                for i in idxs:
                    errors[i] = f"{type(exc).__name__}: {exc}"
                continue
            lr = float(model.hyperparameters["learning_rate"])
            trees = model.params["trees"]
            for i in idxs:
                k = points[i].get("n_stages", 100)
                out[i] = ensembles.boosting_predict(model.params["init"], trees[:k], lr, Xva)
        return out, errors
    for i, h in enumerate(points):
        try:
            model = fit(ModelSpec(family, h, seed), Xtr, ytr, names)
            out[i] = predict(model, Xva)
        except FIT_ERRORS as exc:
            errors[i] = f"{type(exc).__name__}: {exc}"
    return out, errors


def grid_search_folds(family, grid, fold_data, seed=0, names=None) -> GridSearchResult:
    """Grid search over explicit folds ``[(Xtr, ytr, Xva, yva), ...]``."""
    grid = [dict(g) for g in grid]
    if not grid:
        raise DataError("grid is empty")
    fold_metrics = [[None] * len(fold_data) for _ in grid]
    errors = [None] * len(grid)
    for f, (Xtr, ytr, Xva, yva) in enumerate(fold_data):
        preds, errs = _fold_predictions(family, grid, seed, Xtr, ytr, Xva, names)
        for i in range(len(grid)):
            if errors[i] is not None:
                continue
            if errs[i] is not None:
                errors[i] = errs[i]
                continue
            try:
                fold_metrics[i][f] = compute_metrics(yva, preds[i])
            except ArithmeticError as exc:
                errors[i] = f"{type(exc).__name__}: {exc}"
            except ValueError as exc:
                errors[i] = f"{type(exc).__name__}: {exc}"
    points = []
    best, best_score = -1, math.inf
    for i, h in enumerate(grid):
        if errors[i] is None:
            score = float(np.mean([m.rmse for m in fold_metrics[i]]))
            if not math.isfinite(score):
                errors[i] = "non-finite CV RMSE"
        if errors[i] is not None:
            points.append({"params": h, "mean_rmse": None, "error": errors[i]})
            continue
        points.append({"params": h, "mean_rmse": score, "error": None})
        if score < best_score:  # strict: ties keep the earlier point
            best, best_score = i, score
    if best < 0:
        raise NumericalError(f"all {len(grid)} grid points failed for {family}: {errors[-1]}")
    return GridSearchResult(grid[best], best, mean_metrics(fold_metrics[best]), fold_metrics[best], points)


def grid_search(family, grid, X, y, cv: CVConfig = CVConfig(), seed=0, names=None) -> GridSearchResult:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    folds = kfold_split(X.shape[0], cv.folds, cv.seed)
    fold_data = [(X[tr], y[tr], X[va], y[va]) for tr, va in folds]
    return grid_search_folds(family, grid, fold_data, seed, names)


# -- records -----------------------------------------------------------------------

@dataclass
class EvalRecord:
    selector: str
    model: str
    family: str
    hyperparameters: dict
    features: list
    cv_metrics: Metrics | None
    holdout_metrics: Metrics | None
    residuals: ResidualBins | None = None
    note: str = ""
    mode: str = "paper"
    seed: int = 0
    grid_points: list = field(default_factory=list)
    error: str | None = None
    trained: TrainedModel | None = field(default=None, repr=False, compare=False)

    @property
    def ok(self):
        return self.error is None

    def sort_key(self):
        m = self.holdout_metrics or self.cv_metrics
        return (m.rmse, -m.r2)

    def to_dict(self):
        return {
            "selector": self.selector,
            "model": self.model,
            "family": self.family,
            "hyperparameters": self.hyperparameters,
            "features": list(self.features),
            "cv_metrics": self.cv_metrics.to_dict() if self.cv_metrics else None,
            "holdout_metrics": self.holdout_metrics.to_dict() if self.holdout_metrics else None,
            "residuals": self.residuals.to_dict() if self.residuals else None,
            "note": self.note,
            "mode": self.mode,
            "seed": self.seed,
            "grid_points": self.grid_points,
            "error": self.error,
        }


def _xy(data, target):
    if isinstance(data, DataMatrix):
        if not data.is_complete:
            raise DataError("evaluate_combo needs complete (imputed) data")
        jt = data.index(target)
        arr = data.to_array()
        names = [c for c in data.column_names if c != target]
        X = np.delete(arr, jt, axis=1)
        return X, arr[:, jt], names
    X, y, names = data
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64), list(names)


def _feature_list(report_names, extra_columns, available):
    feats = list(report_names)
    for c in extra_columns:
        if c not in available:
            raise DataError(f"extra column {c!r} not in data")
        if c not in feats:
            feats.append(c)
    return feats


def _finish(selector, entry, fam_seed, grid, fold_data, X_train, y_train, X_hold, y_hold,
            features, mode, note, keep_model):
    gs = grid_search_folds(entry.family, grid, fold_data, fam_seed, features)
    model = fit(ModelSpec(entry.family, gs.best_params, fam_seed), X_train, y_train, features)
    hold, bins = None, None
    if X_hold is not None and len(y_hold) >= 2:
        pred = predict(model, X_hold)
        hold = compute_metrics(y_hold, pred)
        bins = residual_bins(y_hold - pred)
    return EvalRecord(selector, entry.name, entry.family, dict(model.hyperparameters), features,
                      gs.cv_metrics, hold, bins, note, mode, fam_seed, gs.points,
                      trained=model if keep_model else None)


def evaluate_combo(report: SelectorReport, model, data, target=None, cv: CVConfig = CVConfig(),
                   extra_columns=(), seed=None, keep_model=True, note="") -> EvalRecord:
    """Paper-mode combo: ``data`` is already complete; selection happened upstream."""
    entry = model_entry(model)
    X, y, names = _xy(data, target)
    features = _feature_list(report.names, extra_columns, names)
    missing = [f for f in features if f not in names]
    if missing:
        raise DataError(f"selected features not in data: {missing}")
    cols = [names.index(f) for f in features]
    Xs = X[:, cols]
    seed = combo_seed(cv.seed, report.selector_name, entry.name) if seed is None else seed
    train, hold = holdout_split(len(y), cv.holdout_fraction, cv.seed)
    Xt, yt = Xs[train], y[train]
    folds = kfold_split(len(train), cv.folds, cv.seed)
    fold_data = [(Xt[tr], yt[tr], Xt[va], yt[va]) for tr, va in folds]
    return _finish(report.selector_name, entry, seed, entry.search_grid(), fold_data, Xt, yt,
                   Xs[hold] if hold.size else None, y[hold], features, "paper", note, keep_model)


# -- leak-free plumbing ------------------------------------------------------------

def _impute_features(features: DataMatrix, config, fit_rows):
    if features.is_complete:
        return features.to_array()
    return hybrid_impute(features, config, fit_rows=fit_rows).completed.to_array()


@dataclass
class _LeakFreeContext:
    y: np.ndarray
    names: list
    train: np.ndarray
    hold: np.ndarray
    folds: list  # (tr, va) positions within ``train``
    fold_X: list  # completed matrices, one per fold, imputation fitted on the fold's train rows
    final_X: np.ndarray  # imputation fitted on all training rows


def leak_free_context(data: DataMatrix, target, cv, imputation_config=ImputationConfig()):
    jt = data.index(target)
    if not data.mask[:, jt].all():
        raise DataError(f"target column {target!r} has missing values")
    y = data.filled(np.nan)[:, jt]
    feats = data.drop_columns([target])
    train, hold = holdout_split(data.n_rows, cv.holdout_fraction, cv.seed)
    folds = kfold_split(len(train), cv.folds, cv.seed)
    fold_X = [_impute_features(feats, imputation_config, train[tr]) for tr, _ in folds]
    final_X = _impute_features(feats, imputation_config, train)
    return _LeakFreeContext(y, list(feats.column_names), train, hold, folds, fold_X, final_X)


def leak_free_reports(ctx: _LeakFreeContext, selector, config=SelectorConfig()):
    """Selector fitted on each training fold plus once on the whole training part."""
    per_fold = []
    for (tr, _), Xf in zip(ctx.folds, ctx.fold_X):
        rows = ctx.train[tr]
        per_fold.append(run_selector(selector, Xf[rows], ctx.y[rows], config, ctx.names))
    final = run_selector(selector, ctx.final_X[ctx.train], ctx.y[ctx.train], config, ctx.names)
    return per_fold, final


def evaluate_combo_leak_free(ctx: _LeakFreeContext, reports, model, extra_columns=(), seed=0,
                             keep_model=True, note="") -> EvalRecord:
    entry = model_entry(model)
    per_fold, final = reports
    fold_data = []
    for (tr, va), Xf, rep in zip(ctx.folds, ctx.fold_X, per_fold):
        cols = [ctx.names.index(f) for f in _feature_list(rep.names, extra_columns, ctx.names)]
        rtr, rva = ctx.train[tr], ctx.train[va]
        fold_data.append((Xf[np.ix_(rtr, cols)], ctx.y[rtr], Xf[np.ix_(rva, cols)], ctx.y[rva]))
    features = _feature_list(final.names, extra_columns, ctx.names)
    cols = [ctx.names.index(f) for f in features]
    Xt = ctx.final_X[np.ix_(ctx.train, cols)]
    Xh = ctx.final_X[np.ix_(ctx.hold, cols)] if ctx.hold.size else None
    return _finish(final.selector_name, entry, seed, entry.search_grid(), fold_data, Xt,
                   ctx.y[ctx.train], Xh, ctx.y[ctx.hold], features, "leak-free", note, keep_model)


# -- full grid -------------------------------------------------------------------------

@dataclass
class GridRun:
    records: list
    failures: list
    leaderboard: list
    frequency: list  # [(selector, count in top rows)]
    mode: str
    reports: dict = field(default_factory=dict)

    def leaderboard_rows(self, extra_note=""):
        return leaderboard_rows(self.leaderboard)


_SHARED: dict = {}


def _init_worker(shared):
    _SHARED.clear()
    _SHARED.update(shared)


def _run_task(task):
    s = _SHARED
    sel_name, entry, seed = task
    try:
        if s["mode"] == "paper":
            rec = evaluate_combo(s["reports"][sel_name], entry, (s["X"], s["y"], s["names"]),
                                 cv=s["cv"], extra_columns=s["extra"], seed=seed,
                                 keep_model=False, note=s["note"])
        else:
            rec = evaluate_combo_leak_free(s["ctx"], s["reports"][sel_name], entry, s["extra"],
                                           seed, keep_model=False, note=s["note"])
        return rec
    except FIT_ERRORS as exc:
        return EvalRecord(sel_name, entry.name, entry.family, {}, [], None, None, None, s["note"],
                          s["mode"], seed, [], f"{type(exc).__name__}: {exc}")


def _note(mode, extra_columns):
    parts = [f"mode={mode}"]
    if extra_columns:
        parts.append("extra=" + "+".join(extra_columns))
    return "; ".join(parts)


def run_grid(selectors, models, data: DataMatrix, target, cv: CVConfig = CVConfig(), mode="paper",
             workers=1, extra_columns=(), selector_config=SelectorConfig(),
             imputation_config=ImputationConfig(), top_rows=20) -> GridRun:
    """Evaluate every selector x model pair.

    ``selectors`` holds selector names (or precomputed reports in paper mode);
    ``models`` holds model entry names, families or :class:`ModelEntry` objects.
    """
    if mode not in MODES:
        raise DataError(f"mode must be one of {MODES}, got {mode!r}")
    if not selectors or not models:
        raise DataError("run_grid needs at least one selector and one model")
    entries = [model_entry(m) for m in models]
    if len({e.name for e in entries}) != len(entries):
        raise DataError("duplicate model entries")
    extra = tuple(extra_columns)
    note = _note(mode, extra)
    failures, reports = [], {}
    sel_names = [s.selector_name if isinstance(s, SelectorReport) else s for s in selectors]
    if len(set(sel_names)) != len(sel_names):
        raise DataError("duplicate selectors")

    if mode == "paper":
        jt = data.index(target)
        if not data.mask[:, jt].all():
            raise DataError(f"target column {target!r} has missing values")
        y = data.filled(np.nan)[:, jt]
        feats = data.drop_columns([target])
        X = _impute_features(feats, imputation_config, None)
        names = list(feats.column_names)
        for s in selectors:
            if isinstance(s, SelectorReport):
                reports[s.selector_name] = s
                continue
            try:
                reports[s] = run_selector(s, X, y, selector_config, names)
            except FIT_ERRORS as exc:
                failures.append((s, "*", f"{type(exc).__name__}: {exc}"))
        shared = {"mode": mode, "X": X, "y": y, "names": names, "reports": reports, "cv": cv,
                  "extra": extra, "note": note}
    else:
        ctx = leak_free_context(data, target, cv, imputation_config)
        for s in sel_names:
            try:
                reports[s] = leak_free_reports(ctx, s, selector_config)
            except FIT_ERRORS as exc:
                failures.append((s, "*", f"{type(exc).__name__}: {exc}"))
        shared = {"mode": mode, "ctx": ctx, "reports": reports, "extra": extra, "note": note}

    tasks = [(s, e, combo_seed(cv.seed, s, e.name)) for s in sel_names if s in reports for e in entries]
    if workers <= 1 or len(tasks) <= 1:
        _init_worker(shared)
        results = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(shared,)) as ex:
            results = list(ex.map(_run_task, tasks))
    records = []
    for rec in results:
        if rec.ok:
            records.append(rec)
        else:
            failures.append((rec.selector, rec.model, rec.error))
    board = leaderboard(records, sel_names, [e.name for e in entries])
    freq = selector_frequency(board[:top_rows], sel_names)
    final_reports = {k: (v if isinstance(v, SelectorReport) else v[1]) for k, v in reports.items()}
    return GridRun(records, failures, board, freq, mode, final_reports)


def leaderboard(records, selector_order=None, model_order=None):
    """Records sorted by hold-out RMSE, then higher R^2, then input order."""
    sel_pos = {s: i for i, s in enumerate(selector_order or [])}
    mod_pos = {m: i for i, m in enumerate(model_order or [])}
    return sorted(records, key=lambda r: (*r.sort_key(), sel_pos.get(r.selector, 0),
                                          mod_pos.get(r.model, 0)))


def selector_frequency(rows, selector_order):
    counts = {s: 0 for s in selector_order}
    for r in rows:
        counts[r.selector] = counts.get(r.selector, 0) + 1
    pos = {s: i for i, s in enumerate(selector_order)}
    return sorted(counts.items(), key=lambda kv: (-kv[1], pos.get(kv[0], len(pos))))


LEADERBOARD_HEADER = ("selector", "imputer", "model", "r2", "rmse", "note")


def leaderboard_rows(records):
    rows = []
    for r in records:
        m = r.holdout_metrics or r.cv_metrics
        rows.append((r.selector, IMPUTER_LABEL, r.model, repr(m.r2), repr(m.rmse), r.note))
    return rows
