"""Linear solvers: OLS, ridge, coordinate-descent lasso and Bayesian ridge."""

from __future__ import annotations

import math
import warnings

import numba
import numpy as np

from ..errors import NumericalError


def standardize(X):
    """Column means and population standard deviations; zero sd is reported as 1."""
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return mean, sd


def ols(X, y):
    """Least squares with intercept via SVD of the centred design."""
    xm = X.mean(axis=0)
    ym = y.mean()
    coef, *_ = np.linalg.lstsq(X - xm, y - ym, rcond=None)
    return coef, ym - xm @ coef


def ridge(X, y, lam):
    """Ridge on internally standardised features, unpenalised intercept.

    Minimises ``||y - b0 - Z b||^2 + lam ||b||^2`` on the standardised design and
    returns coefficients on the original feature scale.
    """
    mean, sd = standardize(X)
    Z = (X - mean) / sd
    yc = y - y.mean()
    q = Z.shape[1]
    beta_z = np.linalg.solve(Z.T @ Z + lam * np.eye(q), Z.T @ yc)
    coef = beta_z / sd
    return coef, y.mean() - mean @ coef, beta_z


# -- lasso -------------------------------------------------------------------

@numba.njit(cache=True)
def _cd_lasso(Z, y, lam, beta, tol, max_sweeps):
    n, p = Z.shape
    r = y.copy()
    for i in range(n):
        for j in range(p):
            r[i] -= Z[i, j] * beta[j]
    norms = np.empty(p)
    for j in range(p):
        acc = 0.0
        for i in range(n):
            acc += Z[i, j] * Z[i, j]
        norms[j] = acc / n
    for sweep in range(max_sweeps):
        total = 0.0
        for j in range(p):
            if norms[j] <= 0.0:
                beta[j] = 0.0
                continue
            bj = beta[j]
            acc = 0.0
            for i in range(n):
                acc += Z[i, j] * r[i]
            rho = acc / n + norms[j] * bj
            if rho > lam:
                new = (rho - lam) / norms[j]
            elif rho < -lam:
                new = (rho + lam) / norms[j]
            else:
                new = 0.0
            delta = new - bj
            if delta != 0.0:
                for i in range(n):
                    r[i] -= Z[i, j] * delta
                total += abs(delta) * math.sqrt(norms[j])
                beta[j] = new
        if total < tol:
            return beta, sweep + 1, True
    return beta, max_sweeps, False


def lasso_cd(Z, y, lam, beta0=None, tol=1e-7, max_sweeps=10_000):
    """Minimise ``(1/2n)||y - Z b||^2 + lam ||b||_1`` by cyclic coordinate descent.

    No intercept and no scaling: callers pass centred/standardised data. Stops
    when a full sweep moves the coefficients by less than ``tol`` in total
    (each change weighted by the column's RMS norm).
    """
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    beta = np.zeros(Z.shape[1]) if beta0 is None else np.array(beta0, dtype=np.float64)
    beta, sweeps, ok = _cd_lasso(Z, y, float(lam), beta, float(tol), int(max_sweeps))
    if not ok:
        raise NumericalError(f"lasso did not converge at lambda={lam!r} after {sweeps} sweeps")
    return beta, sweeps


def lambda_max(Z, y):
    return float(np.abs(Z.T @ y).max() / Z.shape[0])


def lasso_path(Z, y, lambdas, tol=1e-7, max_sweeps=10_000):
    """Warm-started solutions along ``lambdas`` (rows of the returned array)."""
    betas = np.zeros((len(lambdas), Z.shape[1]))
    beta = np.zeros(Z.shape[1])
    for k, lam in enumerate(lambdas):
        beta, _ = lasso_cd(Z, y, lam, beta, tol, max_sweeps)
        betas[k] = beta
    return betas


def kkt_residual(Z, y, beta, lam):
    """Largest violation of the lasso subgradient conditions."""
    grad = Z.T @ (y - Z @ beta) / Z.shape[0]
    active = beta != 0
    viol = np.where(active, np.abs(grad - lam * np.sign(beta)), np.maximum(np.abs(grad) - lam, 0.0))
    return float(viol.max()) if viol.size else 0.0


def lasso(X, y, lam=None, lam_ratio=None, tol=1e-7, max_sweeps=10_000):
    mean, sd = standardize(X)
    Z = (X - mean) / sd
    yc = y - y.mean()
    if lam is None:
        lam = lam_ratio * lambda_max(Z, yc)
    beta_z, sweeps = lasso_cd(Z, yc, lam, tol=tol, max_sweeps=max_sweeps)
    coef = beta_z / sd
    return coef, y.mean() - mean @ coef, lam, sweeps


# -- Bayesian ridge ----------------------------------------------------------

def bayesian_ridge(X, y, max_iter=300, tol=1e-6, a1=1e-6, a2=1e-6, l1=1e-6, l2=1e-6):
    """Evidence maximisation for noise precision ``alpha`` and weight precision ``lam``.

    Returns ``(coef, intercept, alpha, lam, n_iter)``.
    """
    n = X.shape[0]
    xm = X.mean(axis=0)
    ym = y.mean()
    Xc = X - xm
    yc = y - ym
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    eig = s**2
    uty = U.T @ yc
    var_y = yc.var()
    alpha = 1.0 / (var_y if var_y > 0 else 1.0)
    lam = 1.0

    def coef_for(alpha, lam):
        return Vt.T @ (s / (eig + lam / alpha) * uty)

    it = 0
    for it in range(1, max_iter + 1):
        coef = coef_for(alpha, lam)
        sse = float(((yc - Xc @ coef) ** 2).sum())
        gamma = float((alpha * eig / (lam + alpha * eig)).sum())
        lam_new = (gamma + 2 * l1) / (float(coef @ coef) + 2 * l2)
        alpha_new = (n - gamma + 2 * a1) / (sse + 2 * a2)
        done = abs(lam_new - lam) <= tol * lam and abs(alpha_new - alpha) <= tol * alpha
        alpha, lam = alpha_new, lam_new
        if done:
            break
    coef = coef_for(alpha, lam)
    return coef, ym - xm @ coef, alpha, lam, it


def ols_or_ridge(X, y):
    """OLS, ridge-stabilised (lam=1e-8) with a warning when n < 2q."""
    n, q = X.shape
    if n < 2 * q:
        warnings.warn(f"ols with n={n} < 2q={2 * q}; ridge-stabilising", RuntimeWarning)
        coef, intercept, _ = ridge(X, y, 1e-8)
        return coef, intercept, True
    coef, intercept = ols(X, y)
    return coef, intercept, False
