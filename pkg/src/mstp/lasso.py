"""Cyclic coordinate descent for l1-penalized least squares.

Objective convention (note the 1/n and the absence of a 1/2)::

    (1/n) ||y - X beta||^2 + lam * sum_j pf_j |beta_j|

``pf`` are per-column penalty factors; ``pf_j = 0`` leaves a column
unpenalized (used for the intercept column of a basis). The solver adds
no intercept of its own.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np


@dataclass(frozen=True, eq=False)
class LassoProblem:
    X: np.ndarray
    y: np.ndarray
    lam: float
    penalty_factor: Optional[np.ndarray] = None
    max_iter: int = 100_000
    tol: float = 1e-8

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError("X must be (n, p) and y must be (n,)")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite entries in the lasso problem")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lambda must be finite and non-negative")
        pf = np.ones(X.shape[1]) if self.penalty_factor is None else np.asarray(self.penalty_factor, float)
        if pf.shape != (X.shape[1],) or np.any(pf < 0):
            raise ValueError("penalty factors must be non-negative, one per column")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "penalty_factor", pf)

    def objective(self, beta) -> float:
        r = self.y - self.X @ beta
        return float(r @ r / self.X.shape[0] + self.lam * np.sum(self.penalty_factor * np.abs(beta)))


@dataclass(frozen=True, eq=False)
class LassoResult:
    coef: np.ndarray
    converged: bool
    n_sweeps: int


def soft_threshold(z, lam):
    """``sgn(z) * max(|z| - lam, 0)``."""
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


@numba.njit(cache=True)
def _cd_gram(G, b, thresh, beta, max_iter, tol):
    p = beta.shape[0]
    Gb = G @ beta
    for sweep in range(1, max_iter + 1):
        max_delta = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                if beta[j] != 0.0:
                    beta[j] = 0.0
                continue
            c = b[j] - Gb[j] + gjj * beta[j]
            if c > thresh[j]:
                new = (c - thresh[j]) / gjj
            elif c < -thresh[j]:
                new = (c + thresh[j]) / gjj
            else:
                new = 0.0
            delta = new - beta[j]
            if delta != 0.0:
                for k in range(p):
                    Gb[k] += G[k, j] * delta
                beta[j] = new
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        if max_delta < tol:
            return sweep, True
    return max_iter, False


def _gram(X, y):
    n = X.shape[0]
    return X.T @ X / n, X.T @ y / n


def solve_lasso(prob: LassoProblem, warm_start=None, gram=None) -> LassoResult:
    """Coordinate descent until the largest coordinate move is below ``tol``.

    ``gram`` may pass a precomputed ``(X'X/n, X'y/n)`` pair to share work
    across a lambda path.
    """
    G, b = gram if gram is not None else _gram(prob.X, prob.y)
    p = G.shape[0]
    beta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float, copy=True)
    # stationarity of the 1/n objective: |b_j - (G beta)_j| <= lam * pf_j / 2
    thresh = 0.5 * prob.lam * prob.penalty_factor
    n_sweeps, converged = _cd_gram(
        np.ascontiguousarray(G), np.ascontiguousarray(b), thresh, beta, int(prob.max_iter), float(prob.tol)
    )
    return LassoResult(beta, bool(converged), int(n_sweeps))


def kkt_residual(prob: LassoProblem, beta) -> float:
    """Largest violation of the lasso optimality conditions."""
    grad = 2.0 * prob.X.T @ (prob.y - prob.X @ beta) / prob.X.shape[0]
    lam = prob.lam * prob.penalty_factor
    nz = beta != 0
    viol = np.where(nz, np.abs(grad - lam * np.sign(beta)), np.maximum(np.abs(grad) - lam, 0.0))
    return float(viol.max()) if viol.size else 0.0


def lambda_max(X, y, penalty_factor=None) -> float:
    """Smallest lambda at which every penalized coefficient is zero."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    pf = np.ones(X.shape[1]) if penalty_factor is None else np.asarray(penalty_factor, float)
    free = pf == 0
    r = y
    if free.any():
        coef, *_ = np.linalg.lstsq(X[:, free], y, rcond=None)
        r = y - X[:, free] @ coef
    grad = np.abs(2.0 * X.T @ r / X.shape[0])
    pen = ~free
    if not pen.any():
        return 0.0
    return float(np.max(grad[pen] / pf[pen]))


def lambda_grid(lam_max: float, n_lambda: int = 50, ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced grid from ``lam_max`` down to ``ratio * lam_max``."""
    if lam_max <= 0:
        return np.zeros(1)
    return np.geomspace(lam_max, ratio * lam_max, n_lambda)


def lasso_path(X, y, lambdas: Sequence[float], penalty_factor=None, tol=1e-8, max_iter=100_000):
    """Warm-started solutions along a decreasing lambda sequence, shape (L, p)."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    gram = _gram(X, y)
    beta = None
    out = np.empty((len(lambdas), X.shape[1]))
    for k, lam in enumerate(lambdas):
        prob = LassoProblem(X, y, float(lam), penalty_factor, max_iter=max_iter, tol=tol)
        beta = solve_lasso(prob, warm_start=beta, gram=gram).coef
        out[k] = beta
    return out


def refit_support(X, y, beta, always=None) -> np.ndarray:
    """Unpenalized least squares restricted to the nonzero pattern of ``beta``.

    Columns flagged in ``always`` are kept in the support. An empty support
    yields the zero vector.
    """
    support = beta != 0
    if always is not None:
        support = support | np.asarray(always, bool)
    out = np.zeros_like(beta)
    if support.any():
        coef, *_ = np.linalg.lstsq(X[:, support], y, rcond=None)
        out[support] = coef
    return out


@dataclass(frozen=True, eq=False)
class LassoCVResult:
    lam: float
    lambdas: np.ndarray
    cv_error: np.ndarray
    cv_se: np.ndarray
    coef: np.ndarray
    refit_coef: np.ndarray


def cv_lasso(X, y, folds, lambdas=None, penalty_factor=None, n_lambda=50, ratio=1e-3, refit=True) -> LassoCVResult:
    """Choose lambda by k-fold validation MSE, then fit (and refit) on all rows."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    pf = np.ones(X.shape[1]) if penalty_factor is None else np.asarray(penalty_factor, float)
    if lambdas is None:
        lambdas = lambda_grid(lambda_max(X, y, pf), n_lambda, ratio)
    lambdas = np.sort(np.asarray(lambdas, float))[::-1]
    errs = np.empty((len(folds), len(lambdas)))
    for f, (tr, va) in enumerate(folds):
        path = lasso_path(X[tr], y[tr], lambdas, pf)
        resid = y[va][None, :] - path @ X[va].T
        errs[f] = np.mean(resid ** 2, axis=1)
    mean = errs.mean(axis=0)
    se = errs.std(axis=0, ddof=1) / np.sqrt(len(folds)) if len(folds) > 1 else np.zeros_like(mean)
    best = int(np.argmin(mean))
    lam = float(lambdas[best])
    coef = lasso_path(X, y, lambdas[: best + 1], pf)[-1]
    refit_coef = refit_support(X, y, coef, always=(pf == 0)) if refit else coef
    return LassoCVResult(lam, lambdas, mean, se, coef, refit_coef)
