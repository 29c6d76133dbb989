"""Selector configuration, reports and the shared ranking rule."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from ..dataset import DataMatrix
from ..errors import DataError

# finite stand-in for an infinite score (perfect univariate fit)
INF_SCORE = sys.float_info.max


@dataclass(frozen=True)
class SelectorConfig:
    top_k: int = 20
    seed: int = 0
    mi_bins: int = 10
    rfe_step: int = 1
    rfe_lambda: float = 1.0
    ridge_lambda: float = 1.0
    forward_folds: int = 5
    lasso_path_points: int = 50
    lasso_min_ratio: float = 1e-3
    lasso_folds: int = 5
    tree_max_depth: int = 6
    tree_min_leaf: int = 5
    mars_max_terms: int = 40
    bart_trees: int = 50
    bart_burn_in: int = 200
    bart_draws: int = 500
    bart_alpha: float = 0.95
    bart_beta: float = 2.0
    bart_k: float = 2.0
    bart_nu: float = 3.0
    bart_q: float = 0.9
    bart_min_leaf: int = 5

    def __post_init__(self):
        if self.top_k < 1:
            raise DataError(f"top_k must be >= 1, got {self.top_k}")
        if self.mi_bins < 2:
            raise DataError("mi_bins must be >= 2")
        if self.rfe_step < 1:
            raise DataError("rfe_step must be >= 1")
        if self.forward_folds < 2 or self.lasso_folds < 2:
            raise DataError("CV folds must be >= 2")
        if self.bart_trees < 1 or self.bart_draws < 1 or self.bart_burn_in < 0:
            raise DataError("invalid BART budget")


@dataclass
class SelectorReport:
    selector_name: str
    ranked_features: list  # [(name, score), ...]
    columns: tuple = ()  # full candidate list, in column order
    metadata: dict = field(default_factory=dict)

    @property
    def names(self):
        return [f for f, _ in self.ranked_features]

    @property
    def scores(self):
        return np.array([s for _, s in self.ranked_features])

    def to_dict(self):
        return {
            "selector_name": self.selector_name,
            "ranked_features": [[f, float(s)] for f, s in self.ranked_features],
            "columns": list(self.columns),
            "metadata": _jsonable(self.metadata),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["selector_name"], [(f, float(s)) for f, s in d["ranked_features"]],
                   tuple(d.get("columns", ())), d.get("metadata", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def prepare(X, y, feature_names=None):
    """Normalise selector inputs to float arrays plus a name tuple."""
    if isinstance(X, DataMatrix):
        if feature_names is None:
            feature_names = X.column_names
        X = X.to_array()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[1] < 1:
        raise DataError(f"X must be a 2-D matrix with >= 1 column, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise DataError("selectors need complete, finite data")
    if feature_names is None:
        feature_names = [f"x{j}" for j in range(X.shape[1])]
    feature_names = tuple(feature_names)
    if len(feature_names) != X.shape[1]:
        raise DataError(f"{len(feature_names)} names for {X.shape[1]} columns")
    return X, y, feature_names


def rank_order(scores):
    """Indices sorted by score descending, ties by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(scores.size), -scores))


def make_report(name, scores, names, top_k, metadata=None, order=None):
    scores = np.nan_to_num(np.asarray(scores, dtype=np.float64), nan=0.0, posinf=INF_SCORE)
    if order is None:
        order = rank_order(scores)
    k = min(top_k, len(names))
    ranked = [(names[j], float(scores[j])) for j in order[:k]]
    return SelectorReport(name, ranked, tuple(names), dict(metadata or {}))


def standardize_columns(X):
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    const = sd <= 0
    Z = (X - mean) / np.where(const, 1.0, sd)
    Z[:, const] = 0.0
    return Z, const
