"""Metrics, residual binning, importance shares and the sex-gap interval."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..dataset import DataMatrix
from ..errors import DataError, MetricError
from ..models import TrainedModel, coefficient_magnitudes, predict, tree_importances

RESIDUAL_EDGES = (0.0, 50.0, 100.0, 500.0, 1000.0, math.inf)
RESIDUAL_LABELS = ("[0,50)", "[50,100)", "[100,500)", "[500,1000)", "[1000,inf)")


@dataclass(frozen=True)
class CVConfig:
    folds: int = 5
    holdout_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise DataError(f"folds must be >= 2, got {self.folds}")
        if not 0 <= self.holdout_fraction < 0.5:
            raise DataError(f"holdout_fraction must lie in [0, 0.5), got {self.holdout_fraction}")


@dataclass(frozen=True)
class Metrics:
    mse: float
    rmse: float
    r2: float

    def to_dict(self):
        return {"mse": self.mse, "rmse": self.rmse, "r2": self.r2}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mse"], d["rmse"], d["r2"])


def compute_metrics(y_true, y_pred) -> Metrics:
    y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise MetricError(f"length mismatch: {y_true.size} vs {y_pred.size}")
    if y_true.size < 2:
        raise MetricError("need at least two values")
    resid = y_true - y_pred
    ss_res = float(resid @ resid)
    dev = y_true - y_true.mean()
    ss_tot = float(dev @ dev)
    if ss_tot <= 0:
        raise MetricError("r2 undefined: target has zero variance")
    mse = ss_res / y_true.size
    return Metrics(mse, math.sqrt(mse), 1.0 - ss_res / ss_tot)


def mean_metrics(fold_metrics) -> Metrics:
    """Fold average: mean MSE (rmse is its root) and mean R^2."""
    mse = float(np.mean([m.mse for m in fold_metrics]))
    return Metrics(mse, math.sqrt(mse), float(np.mean([m.r2 for m in fold_metrics])))


# -- residuals -------------------------------------------------------------

@dataclass(frozen=True)
class ResidualBins:
    edges: tuple
    counts: tuple
    percentages: tuple
    mean_abs_error: float

    @property
    def n(self):
        return int(sum(self.counts))

    def to_dict(self):
        return {"edges": [e if math.isfinite(e) else "inf" for e in self.edges],
                "labels": list(RESIDUAL_LABELS), "counts": list(self.counts),
                "percentages": list(self.percentages), "mean_abs_error": self.mean_abs_error}

    def rows(self):
        return [(lab, c, pct) for lab, c, pct in zip(RESIDUAL_LABELS, self.counts, self.percentages)]


def residual_bins(residuals) -> ResidualBins:
    a = np.abs(np.asarray(residuals, dtype=np.float64).reshape(-1))
    if a.size == 0 or not np.isfinite(a).all():
        raise MetricError("residuals must be a nonempty finite vector")
    idx = np.searchsorted(np.array(RESIDUAL_EDGES), a, side="right") - 1
    counts = np.bincount(idx, minlength=len(RESIDUAL_EDGES) - 1)
    pct = 100.0 * counts / a.size
    return ResidualBins(RESIDUAL_EDGES, tuple(int(c) for c in counts),
                        tuple(float(p) for p in pct), float(a.mean()))


def residual_analysis(model: TrainedModel, X_eval, y_eval, feature_names=None) -> ResidualBins:
    return residual_bins(np.asarray(y_eval, dtype=np.float64) - predict(model, X_eval, feature_names))


# -- importances -------------------------------------------------------------

def feature_importance_report(model: TrainedModel) -> dict:
    """Normalised variance-reduction shares, largest first (tree families only)."""
    shares = tree_importances(model)
    order = np.lexsort((np.arange(shares.size), -shares))
    return {model.feature_names[j]: float(shares[j]) for j in order}


def coefficient_report(model: TrainedModel) -> dict:
    mags = coefficient_magnitudes(model)
    order = np.lexsort((np.arange(mags.size), -mags))
    return {model.feature_names[j]: float(mags[j]) for j in order}


# -- sex gap -------------------------------------------------------------------

@dataclass(frozen=True)
class SexGap:
    gap: float
    ci_low: float
    ci_high: float
    df: float
    n_male: int
    n_female: int
    confidence: float = 0.95

    def contains(self, value):
        return self.ci_low <= value <= self.ci_high

    def to_dict(self):
        return dict(self.__dict__)


def sex_gap(data, target=None, sex_column=None, male_value=1.0, confidence=0.95) -> SexGap:
    """mean(male) - mean(female) with a Welch t-interval.

    ``data`` is a DataMatrix (with column names) or a pair ``(y, sex)``.
    """
    if isinstance(data, DataMatrix):
        jt, js = data.index(target), data.index(sex_column)
        both = data.mask[:, jt] & data.mask[:, js]
        vals = data.filled(np.nan)
        y, sex = vals[both, jt], vals[both, js]
    else:
        y, sex = (np.asarray(a, dtype=np.float64) for a in data)
    levels = np.unique(sex)
    if levels.size > 2:
        raise DataError(f"sex column must be binary, found levels {levels.tolist()}")
    male = sex == male_value
    a, b = y[male], y[~male]
    if a.size < 2 or b.size < 2:
        raise DataError(f"each group needs >= 2 rows (male {a.size}, female {b.size})")
    gap = float(a.mean() - b.mean())
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 <= 0:
        return SexGap(gap, gap, gap, float(a.size + b.size - 2), int(a.size), int(b.size), confidence)
    df = se2**2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    half = stats.t.ppf(0.5 + confidence / 2, df) * math.sqrt(se2)
    return SexGap(gap, gap - half, gap + half, float(df), int(a.size), int(b.size), confidence)
