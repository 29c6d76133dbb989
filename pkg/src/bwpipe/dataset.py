"""Tabular data container, CSV ingestion and exploratory diagnostics.

Everything here is a pure function of its inputs. Missing cells are held
internally as NaN but no public accessor hands that sentinel out: callers go
through :meth:`DataMatrix.observed`, :meth:`DataMatrix.to_array` (complete
data only) or :meth:`DataMatrix.filled`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import special, stats

from .errors import CsvParseError, DataError, DuplicateHeaderError, NonNumericCellError

KINDS = ("continuous", "discrete")
DISTRIBUTIONS = (
    "gaussian",
    "lognormal",
    "gamma",
    "exponential",
    "uniform",
    "poisson",
    "discrete",
    "unknown",
)
MISSING_TOKENS = ("", "NA")
MAX_DISCRETE_LEVELS = 20
MIN_CLASSIFY_COUNT = 30
VUONG_Z = 1.6448536269514722  # one-sided 5%


@dataclass(frozen=True)
class ColumnMeta:
    kind: str = "continuous"
    distribution: str = "unknown"
    unit: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown column kind {self.kind!r}")
        if self.distribution not in DISTRIBUTIONS:
            raise DataError(f"unknown distribution {self.distribution!r}")
        is_discrete_dist = self.distribution in ("discrete", "poisson")
        if (self.kind == "discrete") != is_discrete_dist:
            raise DataError(
                f"kind {self.kind!r} inconsistent with distribution {self.distribution!r}"
            )

    @classmethod
    def for_kind(cls, kind, unit=""):
        return cls(kind=kind, distribution="discrete" if kind == "discrete" else "unknown", unit=unit)


class DataMatrix:
    """An n x p table of float64 values with an observation mask.

    ``mask[i, j]`` is True when cell (i, j) was observed.
    """

    def __init__(self, values, mask=None, column_names=None, column_meta=None):
        values = np.array(values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise DataError(f"values must be 2-D, got shape {values.shape}")
        n, p = values.shape
        if n < 1 or p < 1:
            raise DataError(f"need at least one row and one column, got {values.shape}")
        if mask is None:
            mask = ~np.isnan(values)
        mask = np.array(mask, dtype=bool, copy=True)
        if mask.shape != values.shape:
            raise DataError(f"mask shape {mask.shape} != values shape {values.shape}")
        if np.any(~np.isfinite(values[mask])):
            raise DataError("observed cells must be finite")
        if column_names is None:
            column_names = [f"x{j}" for j in range(p)]
        column_names = tuple(str(c) for c in column_names)
        if len(column_names) != p:
            raise DataError(f"{len(column_names)} column names for {p} columns")
        if len(set(column_names)) != p:
            dupes = sorted({c for c in column_names if column_names.count(c) > 1})
            raise DuplicateHeaderError(f"duplicate column names: {dupes}")
        if column_meta is None:
            column_meta = [ColumnMeta() for _ in range(p)]
        column_meta = tuple(column_meta)
        if len(column_meta) != p:
            raise DataError(f"{len(column_meta)} column metas for {p} columns")

        values[~mask] = np.nan
        values.setflags(write=False)
        mask.setflags(write=False)
        self._values = values
        self._mask = mask
        self.column_names = column_names
        self.column_meta = column_meta
        self._index = {c: j for j, c in enumerate(column_names)}

    # -- shape and lookup -------------------------------------------------
    @property
    def shape(self):
        return self._values.shape

    @property
    def n_rows(self):
        return self._values.shape[0]

    @property
    def n_cols(self):
        return self._values.shape[1]

    @property
    def mask(self):
        return self._mask

    @property
    def is_complete(self):
        return bool(self._mask.all())

    def index(self, column):
        if isinstance(column, (int, np.integer)):
            if not 0 <= column < self.n_cols:
                raise DataError(f"column index {column} out of range")
            return int(column)
        try:
            return self._index[column]
        except KeyError:
            raise DataError(f"unknown column {column!r}") from None

    def kind(self, column):
        return self.column_meta[self.index(column)].kind

    def columns_of_kind(self, kind):
        return [j for j, m in enumerate(self.column_meta) if m.kind == kind]

    # -- mask-aware reads -------------------------------------------------
    def observed(self, column):
        j = self.index(column)
        return self._values[self._mask[:, j], j].copy()

    def to_array(self, columns=None):
        """Dense copy of the selected columns. Only valid when they are complete."""
        cols = range(self.n_cols) if columns is None else [self.index(c) for c in columns]
        cols = list(cols)
        if not self._mask[:, cols].all():
            raise DataError("to_array on a matrix with missing cells; impute first")
        return self._values[:, cols].copy()

    def filled(self, fill):
        """Dense copy with missing cells replaced by ``fill`` (scalar or per-column)."""
        fill = np.broadcast_to(np.asarray(fill, dtype=np.float64), (self.n_cols,))
        out = self._values.copy()
        rows, cols = np.nonzero(~self._mask)
        out[rows, cols] = fill[cols]
        return out

    def to_masked(self):
        return np.ma.MaskedArray(self.filled(0.0), mask=~self._mask)

    # -- derivation -------------------------------------------------------
    def replace(self, values=None, mask=None, column_meta=None):
        v = self._values if values is None else values
        m = self._mask if mask is None else mask
        if values is not None and mask is None:
            m = np.ones(self.shape, dtype=bool) if not np.isnan(v).any() else ~np.isnan(v)
        return DataMatrix(
            v, m, self.column_names, self.column_meta if column_meta is None else column_meta
        )

    def select_rows(self, rows):
        rows = np.asarray(rows)
        return DataMatrix(self._values[rows], self._mask[rows], self.column_names, self.column_meta)

    def select_columns(self, columns):
        cols = [self.index(c) for c in columns]
        return DataMatrix(
            self._values[:, cols],
            self._mask[:, cols],
            [self.column_names[j] for j in cols],
            [self.column_meta[j] for j in cols],
        )

    def drop_columns(self, columns):
        drop = {self.index(c) for c in columns}
        return self.select_columns([j for j in range(self.n_cols) if j not in drop])

    def equals(self, other):
        """Bit-level equality of observed cells, mask and names."""
        if self.shape != other.shape or self.column_names != other.column_names:
            return False
        if not np.array_equal(self._mask, other._mask):
            return False
        a = self._values[self._mask].view(np.uint64)
        b = other._values[other._mask].view(np.uint64)
        return bool(np.array_equal(a, b))

    def __repr__(self):
        n, p = self.shape
        return f"DataMatrix({n}x{p}, missing={int((~self._mask).sum())})"


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def infer_kind(observed):
    observed = np.asarray(observed, dtype=float)
    if observed.size == 0:
        return "continuous"
    if np.all(observed == np.round(observed)) and np.unique(observed).size <= MAX_DISCRETE_LEVELS:
        return "discrete"
    return "continuous"


def load_csv(path, schema: Mapping[str, str | ColumnMeta] | None = None) -> DataMatrix:
    """Read a numeric CSV with a header row. Empty cells and ``NA`` are missing."""
    schema = dict(schema or {})
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError("empty file", row=1) from None
        except csv.Error as exc:
            raise CsvParseError(f"malformed CSV: {exc}", row=1) from None
        header = [h.strip() for h in header]
        seen = set()
        for h in header:
            if h in seen:
                raise DuplicateHeaderError(f"duplicate header {h!r}")
            seen.add(h)
        rows = []
        try:
            for lineno, record in enumerate(reader, start=2):
                if not record:
                    continue
                if len(record) != len(header):
                    raise CsvParseError(
                        f"expected {len(header)} fields, found {len(record)}", row=lineno
                    )
                parsed = []
                for j, cell in enumerate(record):
                    cell = cell.strip()
                    if cell in MISSING_TOKENS:
                        parsed.append(math.nan)
                        continue
                    try:
                        val = float(cell)
                    except ValueError:
                        raise NonNumericCellError(
                            f"non-numeric cell {cell!r}", row=lineno, column=header[j]
                        ) from None
                    if not math.isfinite(val):
                        raise NonNumericCellError(
                            f"non-finite cell {cell!r}", row=lineno, column=header[j]
                        )
                    parsed.append(val)
                rows.append(parsed)
        except csv.Error as exc:
            raise CsvParseError(f"malformed CSV: {exc}", row=reader.line_num) from None
    if not rows:
        raise CsvParseError("no data rows", row=2)
    values = np.array(rows, dtype=np.float64)
    mask = ~np.isnan(values)
    unknown = set(schema) - set(header)
    if unknown:
        raise DataError(f"schema names unknown columns: {sorted(unknown)}")
    meta = []
    for j, name in enumerate(header):
        override = schema.get(name)
        if isinstance(override, ColumnMeta):
            meta.append(override)
        elif override is not None:
            meta.append(ColumnMeta.for_kind(override))
        else:
            meta.append(ColumnMeta.for_kind(infer_kind(values[mask[:, j], j])))
    return DataMatrix(values, mask, header, meta)


def _format_cell(v):
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def save_csv(data: DataMatrix, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(data.column_names)
        filled = data.filled(0.0)
        for i in range(data.n_rows):
            w.writerow(
                [_format_cell(filled[i, j]) if data.mask[i, j] else "" for j in range(data.n_cols)]
            )


# ---------------------------------------------------------------------------
# Summary statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnSummary:
    count: int
    mean: float | None = None
    std: float | None = None
    min: float | None = None
    q25: float | None = None
    median: float | None = None
    q75: float | None = None
    max: float | None = None


@dataclass(frozen=True)
class SummaryStats:
    columns: dict = field(default_factory=dict)

    def __getitem__(self, name) -> ColumnSummary:
        return self.columns[name]

    def to_dict(self):
        return {k: vars(v).copy() for k, v in self.columns.items()}


def summarize(data: DataMatrix) -> SummaryStats:
    """Per-column statistics over observed entries; quartiles interpolate linearly."""
    out = {}
    for j, name in enumerate(data.column_names):
        x = data.observed(j)
        if x.size == 0:
            out[name] = ColumnSummary(count=0)
            continue
        q25, q50, q75 = np.percentile(x, [25, 50, 75])
        out[name] = ColumnSummary(
            count=int(x.size),
            mean=float(x.mean()),
            std=float(x.std(ddof=1)) if x.size > 1 else None,
            min=float(x.min()),
            q25=float(q25),
            median=float(q50),
            q75=float(q75),
            max=float(x.max()),
        )
    return SummaryStats(out)


# ---------------------------------------------------------------------------
# Distribution classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistributionFit:
    distribution: str
    aic: dict


def _gamma_mle(x):
    mean = x.mean()
    s = math.log(mean) - np.log(x).mean()
    if s <= 0:
        return math.inf, mean
    k = (3 - s + math.sqrt((s - 3) ** 2 + 24 * s)) / (12 * s)
    for _ in range(50):
        step = (math.log(k) - special.digamma(k) - s) / (1 / k - special.polygamma(1, k))
        k_new = k - step
        if k_new <= 0:
            k_new = k / 2
        if abs(k_new - k) < 1e-12 * k:
            k = k_new
            break
        k = k_new
    return k, mean / k


def candidate_loglik(x):
    """Maximised log-likelihood and parameter count per continuous candidate."""
    n = x.size
    out = {}
    var = x.var()
    out["gaussian"] = (-0.5 * n * (math.log(2 * math.pi * var) + 1), 2)
    lo, hi = x.min(), x.max()
    out["uniform"] = (-n * math.log(hi - lo), 2)
    if lo > 0:
        lx = np.log(x)
        lvar = lx.var()
        if lvar > 0:
            out["lognormal"] = (-lx.sum() - 0.5 * n * (math.log(2 * math.pi * lvar) + 1), 2)
        mean = x.mean()
        out["exponential"] = (-n * math.log(mean) - n, 1)
        k, theta = _gamma_mle(x)
        if math.isfinite(k):
            ll = ((k - 1) * lx - x / theta).sum() - n * (k * math.log(theta) + special.gammaln(k))
            out["gamma"] = (float(ll), 2)
    return out


def classify_distribution(values, kind="continuous") -> DistributionFit:
    """Minimum-AIC family for a column's observed values; a non-gaussian winner
    must also pass a one-sided Vuong test against the gaussian fit."""
    x = np.asarray(values, dtype=np.float64)
    x = x[np.isfinite(x)]
    if x.size < MIN_CLASSIFY_COUNT or np.all(x == x[0]):
        return DistributionFit("unknown", {})
    if kind == "discrete":
        mean, var = x.mean(), x.var(ddof=1)
        nonneg_int = bool(np.all(x >= 0) and np.all(x == np.round(x)))
        if nonneg_int and mean > 0 and abs(var - mean) <= 0.2 * mean:
            return DistributionFit("poisson", {})
        return DistributionFit("discrete", {})
    aic = {name: 2 * k - 2 * ll for name, (ll, k) in candidate_loglik(x).items()}
    best = min(aic, key=lambda name: (aic[name], name))
    if best != "gaussian" and not _beats_gaussian(x, best):
        best = "gaussian"
    return DistributionFit(best, aic)


def _pointwise_loglik(x, name):
    if name == "gaussian":
        return stats.norm.logpdf(x, x.mean(), x.std())
    if name == "lognormal":
        lx = np.log(x)
        return stats.norm.logpdf(lx, lx.mean(), lx.std()) - lx
    if name == "gamma":
        k, theta = _gamma_mle(x)
        return stats.gamma.logpdf(x, k, scale=theta)
    if name == "exponential":
        return stats.expon.logpdf(x, scale=x.mean())
    return np.full(x.size, -math.log(x.max() - x.min()))


def _beats_gaussian(x, name):
    """One-sided Vuong test (5%) of ``name`` against the gaussian fit.

    A gamma with a large shape parameter is numerically almost a gaussian, so a
    bare AIC comparison flips on sampling noise; the alternative has to win
    significantly on pointwise log-likelihood.
    """
    d = _pointwise_loglik(x, name) - _pointwise_loglik(x, "gaussian")
    sd = d.std()
    if sd == 0:
        return False
    return math.sqrt(x.size) * d.mean() / sd > VUONG_Z


def classify_columns(data: DataMatrix):
    return {
        name: classify_distribution(data.observed(j), data.column_meta[j].kind)
        for j, name in enumerate(data.column_names)
    }


# ---------------------------------------------------------------------------
# Missingness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MissingnessProfile:
    overall_rate: float
    per_column_rate: dict
    pattern_count: int

    def to_dict(self):
        return {
            "overall_rate": self.overall_rate,
            "per_column_rate": dict(self.per_column_rate),
            "pattern_count": self.pattern_count,
        }


def missingness_profile(data: DataMatrix) -> MissingnessProfile:
    missing = ~data.mask
    n, p = data.shape
    overall = int(missing.sum()) / (n * p)
    per_col = {name: float(missing[:, j].mean()) for j, name in enumerate(data.column_names)}
    patterns = np.unique(data.mask, axis=0).shape[0]
    return MissingnessProfile(overall, per_col, int(patterns))


@dataclass(frozen=True)
class McarTestResult:
    d2: float
    df: int
    p_value: float
    applicable: bool
    pattern_count: int = 0
    columns: tuple = ()
    em_iterations: int = 0
    em_converged: bool = True
    ridge_stabilized: bool = False
    mean: np.ndarray | None = field(default=None, repr=False, compare=False)
    cov: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_dict(self):
        return {
            "d2": self.d2,
            "df": self.df,
            "p_value": self.p_value,
            "applicable": self.applicable,
            "pattern_count": self.pattern_count,
            "columns": list(self.columns),
            "em_iterations": self.em_iterations,
            "em_converged": self.em_converged,
            "ridge_stabilized": self.ridge_stabilized,
        }


def nearest_pd(cov, floor_rel=1e-8):
    cov = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(cov)
    floor = floor_rel * max(float(np.abs(w).max()), 1e-300)
    if w.min() >= floor:
        return cov
    w = np.maximum(w, floor)
    out = (v * w) @ v.T
    return 0.5 * (out + out.T)


def _pairwise_cov(y, obs):
    z = np.where(obs, y, 0.0)
    o = obs.astype(np.float64)
    n_ij = o.T @ o
    s_ij = z.T @ o  # sum of column i over rows where j observed
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = (z.T @ z) / n_ij - (s_ij * s_ij.T) / n_ij**2
    cov[~np.isfinite(cov)] = 0.0
    return cov


def _group_patterns(obs):
    patterns, inverse = np.unique(obs, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    return [(patterns[k], np.flatnonzero(inverse == k)) for k in range(patterns.shape[0])]


def em_mvn(y, obs, max_iter=100, tol=1e-8):
    """ML mean and covariance of a multivariate normal with missing entries.

    Returns ``(mu, sigma, iterations, converged)``.
    """
    n, p = y.shape
    groups = _group_patterns(obs)
    with np.errstate(invalid="ignore"):
        mu = np.nanmean(np.where(obs, y, np.nan), axis=0)
    mu = np.where(np.isfinite(mu), mu, 0.0)
    sigma = nearest_pd(_pairwise_cov(y, obs))

    def loglik(mu, sigma):
        ll = 0.0
        for pat, rows in groups:
            o = np.flatnonzero(pat)
            if o.size == 0:
                continue
            s_oo = sigma[np.ix_(o, o)]
            chol = np.linalg.cholesky(s_oo)
            d = y[np.ix_(rows, o)] - mu[o]
            sol = np.linalg.solve(chol, d.T)
            logdet = 2 * np.log(np.diag(chol)).sum()
            ll -= 0.5 * (rows.size * (o.size * math.log(2 * math.pi) + logdet) + (sol**2).sum())
        return ll

    ll = loglik(mu, sigma)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        t1 = np.zeros(p)
        t2 = np.zeros((p, p))
        for pat, rows in groups:
            o = np.flatnonzero(pat)
            m = np.flatnonzero(~pat)
            xhat = np.empty((rows.size, p))
            xhat[:, o] = y[np.ix_(rows, o)]
            if m.size:
                if o.size:
                    s_oo = sigma[np.ix_(o, o)]
                    s_mo = sigma[np.ix_(m, o)]
                    b = np.linalg.solve(s_oo, s_mo.T).T
                    xhat[:, m] = mu[m] + (xhat[:, o] - mu[o]) @ b.T
                    c = sigma[np.ix_(m, m)] - b @ s_mo.T
                else:
                    xhat[:, m] = mu[m]
                    c = sigma[np.ix_(m, m)]
                t2[np.ix_(m, m)] += rows.size * c
            t1 += xhat.sum(axis=0)
            t2 += xhat.T @ xhat
        mu = t1 / n
        sigma = t2 / n - np.outer(mu, mu)
        sigma = nearest_pd(sigma)
        ll_new = loglik(mu, sigma)
        gain = ll_new - ll
        ll = ll_new
        if gain < tol:
            converged = True
            break
    return mu, sigma, it, converged


def little_mcar_test(data: DataMatrix, columns: Sequence | None = None, max_iter=100, tol=1e-8):
    """Little's chi-square test of the MCAR hypothesis.

    ``columns`` defaults to every continuous column.
    """
    if columns is None:
        cols = data.columns_of_kind("continuous")
    else:
        cols = [data.index(c) for c in columns]
    names = tuple(data.column_names[j] for j in cols)
    not_applicable = McarTestResult(0.0, 0, 1.0, False, columns=names)
    if not cols:
        return not_applicable
    obs = np.asarray(data.mask[:, cols])
    keep = obs.any(axis=1)
    obs = obs[keep]
    y = data.filled(0.0)[:, cols][keep]
    groups = _group_patterns(obs)
    n_groups = len(groups)
    sizable = sum(1 for _, rows in groups if rows.size >= 2)
    p = len(cols)
    df = sum(int(pat.sum()) for pat, _ in groups) - p
    if n_groups <= 1 or sizable < 2 or df <= 0:
        return McarTestResult(0.0, 0, 1.0, False, pattern_count=n_groups, columns=names)

    mu, sigma, iters, converged = em_mvn(y, obs, max_iter=max_iter, tol=tol)
    eps = 1e-8 * np.trace(sigma) / p
    d2 = 0.0
    stabilized = False
    for pat, rows in groups:
        o = np.flatnonzero(pat)
        diff = y[np.ix_(rows, o)].mean(axis=0) - mu[o]
        s_oo = sigma[np.ix_(o, o)]
        try:
            chol = np.linalg.cholesky(s_oo)
        except np.linalg.LinAlgError:
            stabilized = True
            chol = np.linalg.cholesky(s_oo + eps * np.eye(o.size))
        z = np.linalg.solve(chol, diff)
        d2 += rows.size * float(z @ z)
    pval = float(stats.chi2.sf(d2, df))
    return McarTestResult(
        d2=float(d2),
        df=int(df),
        p_value=pval,
        applicable=True,
        pattern_count=n_groups,
        columns=names,
        em_iterations=iters,
        em_converged=converged,
        ridge_stabilized=stabilized,
        mean=mu,
        cov=sigma,
    )


# ---------------------------------------------------------------------------
# EDA report
# ---------------------------------------------------------------------------

TABLE_ROWS = (
    ("Gaussian (Normal)", ("gaussian",)),
    ("Log-Normal", ("lognormal",)),
    ("Uniform", ("uniform",)),
    ("Gamma", ("gamma",)),
    ("Discrete", ("discrete", "poisson")),
)


def distribution_table(fits: Mapping[str, DistributionFit]):
    counts = {}
    for fit in fits.values():
        counts[fit.distribution] = counts.get(fit.distribution, 0) + 1
    rows = [{"distribution": label, "count": sum(counts.get(d, 0) for d in members)}
            for label, members in TABLE_ROWS]
    other = {d: counts.get(d, 0) for d in ("exponential", "unknown")}
    return rows, other


def eda_report(data: DataMatrix, mcar_columns=None) -> dict:
    fits = classify_columns(data)
    rows, other = distribution_table(fits)
    mcar = little_mcar_test(data, mcar_columns)
    kinds = [m.kind for m in data.column_meta]
    return {
        "shape": list(data.shape),
        "kinds": {"continuous": kinds.count("continuous"), "discrete": kinds.count("discrete")},
        "summary": summarize(data).to_dict(),
        "distribution_table": rows,
        "distribution_other": other,
        "column_distributions": {k: v.distribution for k, v in fits.items()},
        "missingness": missingness_profile(data).to_dict(),
        "mcar_test": mcar.to_dict(),
    }
