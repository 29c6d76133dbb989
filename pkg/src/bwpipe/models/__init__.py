"""Uniform fit/predict front end over eight regression families."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Any

import numpy as np

from .._cart import Tree, fit_tree
from ..errors import DataError, NotTreeModelError
from . import ensembles, linear

FAMILIES = (
    "ols",
    "ridge",
    "lasso",
    "bayesian_ridge",
    "cart",
    "random_forest",
    "gradient_boosting",
    "adaboost_r2",
)
LINEAR_FAMILIES = ("ols", "ridge", "lasso", "bayesian_ridge")
TREE_FAMILIES = ("cart", "random_forest", "gradient_boosting", "adaboost_r2")
STOCHASTIC_FAMILIES = ("random_forest", "adaboost_r2")
FORMAT_VERSION = 1

DEFAULTS: dict[str, dict[str, Any]] = {
    "ols": {},
    "ridge": {"lam": 1.0},
    "lasso": {"lam_ratio": 0.01},
    "bayesian_ridge": {"max_iter": 300, "tol": 1e-6},
    "cart": {"max_depth": 6, "min_leaf": 5},
    "random_forest": {"n_trees": 200, "mtry": "third", "min_leaf": 5, "max_depth": None,
                      "bootstrap": True},
    "gradient_boosting": {"learning_rate": 0.1, "n_stages": 100, "max_depth": 3, "min_leaf": 1},
    "adaboost_r2": {"n_learners": 50, "max_depth": 3, "min_leaf": 1},
}


@dataclass(frozen=True)
class ModelSpec:
    family: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown model family {self.family!r}")
        unknown = set(self.hyperparameters) - set(DEFAULTS[self.family]) - {"lam"}
        if unknown:
            raise DataError(f"unknown hyperparameters for {self.family}: {sorted(unknown)}")
        merged = {**DEFAULTS[self.family], **self.hyperparameters}
        _check_ranges(self.family, merged)
        object.__setattr__(self, "hyperparameters", merged)


_POSITIVE = ("lam_ratio", "learning_rate", "tol", "max_iter", "n_trees", "n_learners", "min_leaf")
_NON_NEGATIVE = ("lam", "n_stages", "max_depth")


def _check_ranges(family, h):
    for k, v in h.items():
        if v is None or isinstance(v, (str, bool)):
            continue
        if not math.isfinite(v) or (k in _POSITIVE and v <= 0) or (k in _NON_NEGATIVE and v < 0):
            raise DataError(f"{family}: hyperparameter {k}={v!r} out of range")


@dataclass
class TrainedModel:
    family: str
    hyperparameters: dict
    feature_names: tuple
    params: dict
    diagnostics: dict = field(default_factory=dict)
    seed: int = 0

    # -- serialisation ----------------------------------------------------
    def to_dict(self):
        params = {}
        for k, v in self.params.items():
            if isinstance(v, np.ndarray):
                params[k] = v.tolist()
            elif isinstance(v, list) and v and isinstance(v[0], Tree):
                params[k] = [t.to_dict() for t in v]
            elif isinstance(v, Tree):
                params[k] = v.to_dict()
            else:
                params[k] = v
        return {
            "format_version": FORMAT_VERSION,
            "family": self.family,
            "hyperparameters": self.hyperparameters,
            "feature_names": list(self.feature_names),
            "seed": self.seed,
            "params": params,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise DataError(f"unsupported model format version {d.get('format_version')!r}")
        params = dict(d["params"])
        for k in ("coef", "weights"):
            if k in params:
                params[k] = np.asarray(params[k], dtype=np.float64)
        if "tree" in params:
            params["tree"] = Tree.from_dict(params["tree"])
        if "trees" in params:
            params["trees"] = [Tree.from_dict(t) for t in params["trees"]]
        return cls(d["family"], d["hyperparameters"], tuple(d["feature_names"]), params,
                   d.get("diagnostics", {}), d.get("seed", 0))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _check_xy(X, y=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"X must be 2-D, got shape {X.shape}")
    if X.shape[1] == 0:
        raise DataError("X has no columns")
    if not np.isfinite(X).all():
        raise DataError("X contains NaN or Inf")
    if y is not None:
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise DataError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if not np.isfinite(y).all():
            raise DataError("y contains NaN or Inf")
    return X, y


def fit(spec: ModelSpec, X, y, feature_names=None) -> TrainedModel:
    X, y = _check_xy(X, y)
    q = X.shape[1]
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(q))
    if len(names) != q:
        raise DataError(f"{len(names)} feature names for {q} columns")
    h = spec.hyperparameters
    fam = spec.family
    params: dict = {}
    diag: dict = {}
    if fam == "ols":
        coef, intercept, stabilized = linear.ols_or_ridge(X, y)
        params = {"coef": coef, "intercept": float(intercept)}
        diag["ridge_stabilized"] = stabilized
    elif fam == "ridge":
        coef, intercept, _ = linear.ridge(X, y, float(h["lam"]))
        params = {"coef": coef, "intercept": float(intercept)}
    elif fam == "lasso":
        coef, intercept, lam, sweeps = linear.lasso(X, y, lam=h.get("lam"), lam_ratio=h["lam_ratio"])
        params = {"coef": coef, "intercept": float(intercept)}
        diag.update(lam=float(lam), sweeps=int(sweeps))
    elif fam == "bayesian_ridge":
        coef, intercept, alpha, lam, it = linear.bayesian_ridge(
            X, y, max_iter=int(h["max_iter"]), tol=float(h["tol"]))
        params = {"coef": coef, "intercept": float(intercept), "alpha": float(alpha),
                  "lambda": float(lam)}
        diag["n_iter"] = int(it)
    elif fam == "cart":
        params = {"tree": fit_tree(X, y, max_depth=h["max_depth"], min_leaf=int(h["min_leaf"]))}
    elif fam == "random_forest":
        trees = ensembles.random_forest(
            X, y, int(h["n_trees"]), h["mtry"], int(h["min_leaf"]), h["max_depth"],
            bool(h["bootstrap"]), spec.seed)
        params = {"trees": trees}
        diag["mtry"] = ensembles.resolve_mtry(h["mtry"], q)
    elif fam == "gradient_boosting":
        init, trees, mse = ensembles.gradient_boosting(
            X, y, int(h["n_stages"]), float(h["learning_rate"]), h["max_depth"], int(h["min_leaf"]))
        params = {"init": init, "trees": trees}
        diag["train_mse"] = mse
    elif fam == "adaboost_r2":
        trees, weights, losses = ensembles.adaboost_r2(
            X, y, int(h["n_learners"]), h["max_depth"], int(h["min_leaf"]), spec.seed)
        params = {"trees": trees, "weights": weights}
        diag["average_loss"] = losses
    diag["n_train"] = int(X.shape[0])
    return TrainedModel(fam, dict(h), names, params, diag, spec.seed)


def _align(model: TrainedModel, X, feature_names):
    X, _ = _check_xy(X)
    if feature_names is None:
        if X.shape[1] != len(model.feature_names):
            raise DataError(f"expected {len(model.feature_names)} columns, got {X.shape[1]}")
        return X
    names = list(feature_names)
    missing = [f for f in model.feature_names if f not in names]
    extra = [f for f in names if f not in model.feature_names]
    if missing or extra:
        raise DataError(f"feature mismatch: missing {missing}, unexpected {extra}")
    pos = [names.index(f) for f in model.feature_names]
    return X[:, pos]


def predict(model: TrainedModel, X, feature_names=None) -> np.ndarray:
    X = np.ascontiguousarray(_align(model, X, feature_names))
    p = model.params
    fam = model.family
    if fam in LINEAR_FAMILIES:
        return X @ p["coef"] + p["intercept"]
    if fam == "cart":
        return p["tree"].predict(X)
    if fam == "random_forest":
        return ensembles.forest_predict(p["trees"], X)
    if fam == "gradient_boosting":
        return ensembles.boosting_predict(
            p["init"], p["trees"], float(model.hyperparameters["learning_rate"]), X)
    if fam == "adaboost_r2":
        return ensembles.weighted_median_predict(p["trees"], p["weights"], X)
    raise DataError(f"unknown family {fam!r}")


def tree_importances(model: TrainedModel) -> np.ndarray:
    """Normalised SSE-reduction importances for tree families."""
    if model.family not in TREE_FAMILIES:
        raise NotTreeModelError(
            f"{model.family} is linear; use coefficient magnitudes (coefficient_magnitudes)")
    trees = [model.params["tree"]] if model.family == "cart" else model.params["trees"]
    raw = ensembles.summed_importances(trees)
    total = raw.sum()
    return raw / total if total > 0 else raw


def coefficient_magnitudes(model: TrainedModel) -> np.ndarray:
    if model.family not in LINEAR_FAMILIES:
        raise NotTreeModelError(f"{model.family} has no coefficients; use tree importances")
    return np.abs(np.asarray(model.params["coef"]))


# ---------------------------------------------------------------------------
# Grids and grid entries
# ---------------------------------------------------------------------------

def _grid(**axes):
    keys = list(axes)
    return [dict(zip(keys, vals)) for vals in product(*(axes[k] for k in keys))]


def default_grid(family: str) -> list[dict]:
    if family == "ols":
        return [{}]
    if family == "ridge":
        return _grid(lam=[0.01, 0.1, 1.0, 10.0])
    if family == "lasso":
        ratios = np.logspace(0, -3, 20)
        return [{"lam_ratio": float(r)} for r in ratios]
    if family == "bayesian_ridge":
        return [{}]
    if family == "cart":
        return _grid(max_depth=[3, 6, 10], min_leaf=[2, 5])
    if family == "random_forest":
        return _grid(n_trees=[200], mtry=["third", "sqrt"])
    if family == "gradient_boosting":
        return _grid(learning_rate=[0.05, 0.1], n_stages=[100, 300], max_depth=[2, 3])
    if family == "adaboost_r2":
        return _grid(n_learners=[50, 100])
    raise DataError(f"unknown model family {family!r}")


@dataclass(frozen=True)
class ModelEntry:
    """A named model line in the evaluation grid: a family plus its search grid."""

    name: str
    family: str
    grid: tuple = ()
    fixed: tuple = ()

    def search_grid(self):
        base = dict(self.fixed)
        grid = list(self.grid) if self.grid else default_grid(self.family)
        return [{**base, **g} for g in grid]


def _entry(name, family, grid=None, **fixed):
    return ModelEntry(name, family, tuple(grid or ()), tuple(sorted(fixed.items())))


DEFAULT_MODEL_ENTRIES = (
    _entry("ols", "ols"),
    _entry("ridge", "ridge"),
    _entry("lasso", "lasso"),
    _entry("bayesian_ridge", "bayesian_ridge"),
    _entry("cart", "cart"),
    _entry("random_forest", "random_forest"),
    _entry("gradient_boosting", "gradient_boosting"),
    _entry("adaboost_r2", "adaboost_r2"),
    _entry("bagged_trees", "random_forest", [{"n_trees": 200}], mtry="all"),
    _entry("boosted_stumps", "gradient_boosting",
           _grid(learning_rate=[0.05, 0.1], n_stages=[300, 600]), max_depth=1),
    _entry("adaboost_r2_stumps", "adaboost_r2", _grid(n_learners=[50, 100]), max_depth=1),
    _entry("deep_cart", "cart", _grid(min_leaf=[1, 10]), max_depth=None),
)
MODEL_ENTRIES = {e.name: e for e in DEFAULT_MODEL_ENTRIES}


def model_entry(name_or_entry) -> ModelEntry:
    if isinstance(name_or_entry, ModelEntry):
        return name_or_entry
    if name_or_entry in MODEL_ENTRIES:
        return MODEL_ENTRIES[name_or_entry]
    if name_or_entry in FAMILIES:
        return ModelEntry(name_or_entry, name_or_entry)
    raise DataError(f"unknown model entry {name_or_entry!r}")


def is_tree_family(family):
    return family in TREE_FAMILIES


__all__ = [
    "FAMILIES",
    "LINEAR_FAMILIES",
    "TREE_FAMILIES",
    "ModelSpec",
    "TrainedModel",
    "ModelEntry",
    "DEFAULT_MODEL_ENTRIES",
    "fit",
    "predict",
    "default_grid",
    "model_entry",
    "tree_importances",
    "coefficient_magnitudes",
]
