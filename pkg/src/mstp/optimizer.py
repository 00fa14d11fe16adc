"""Sparse estimation on the unit sphere.

Proximal coordinate descent with an l1 penalty where the full vector is
renormalized after every coordinate update, preceded by a per-coordinate
multi-start scan and followed by an unpenalized refit on the selected
support. Lambda is chosen by subject-level cross-validation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from mstp.data import Dataset, split_folds
from mstp.errors import ConvergenceError, NumericError
from mstp.lasso import soft_threshold
from mstp.loss import LossContext
from mstp.nuisance import QModel
from mstp.policy import DEFAULT_TAU

log = logging.getLogger(__name__)

DEFAULT_OFFSETS = (-0.8, -0.4, 0.0, 0.4, 0.8)
FLAT_RTOL = 1e-12
DEFAULT_LAMBDAS = tuple(float(v) for v in np.geomspace(1e-4, 1e-1, 20))


@dataclass(frozen=True)
class OptimizerConfig:
    offsets: Tuple[float, ...] = DEFAULT_OFFSETS
    tol: float = 1e-5  # stop when successive sweeps move less than this (l2)
    max_iter: int = 100  # sweeps
    line_tol: float = 1e-8
    line_maxiter: int = 50
    line_radius: float = 1.0  # 1-d search interval is current value +- radius
    lambdas: Tuple[float, ...] = DEFAULT_LAMBDAS
    folds: int = 5
    seed: int = 0
    refit_gtol: float = 1e-6
    refit_maxiter: int = 200
    compiled_line_search: bool = True  # use the loss's compiled Brent search when it offers one
    cv_warm_start: bool = True  # within a fold, start each lambda from the previous (larger) one

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("error threshold must be positive")
        if self.max_iter < 1:
            raise ValueError("need at least one sweep")
        if len(self.offsets) == 0:
            raise ValueError("offset set must be non-empty")
        if len(self.lambdas) == 0:
            raise ValueError("lambda grid must be non-empty")


@dataclass(frozen=True, eq=False)
class SparseEstimate:
    theta: np.ndarray
    support: Tuple[int, ...]
    converged: bool
    objective: float
    lam: float = 0.0
    penalized_theta: Optional[np.ndarray] = None
    n_iter: int = 0
    history: Tuple[float, ...] = ()
    cv_lambdas: Tuple[float, ...] = ()
    cv_errors: Tuple[float, ...] = ()

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float, copy=True)
        if abs(np.linalg.norm(theta) - 1.0) > 1e-10:
            raise ValueError("estimate must be unit-norm")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "support", tuple(int(j) for j in np.flatnonzero(theta)))


def _safe(f):
    def g(t):
        v = f(t)
        return v if np.isfinite(v) else np.inf
    return g


def _along(objective, theta, j):
    if hasattr(objective, "along"):
        return objective.along(theta, j)
    base = np.array(theta, dtype=float)

    def f(t):
        base[j] = t
        return float(objective(base))

    return f


def _line_search(objective, f, theta, j, lo, hi, config):
    fast = objective.line_minimize(theta, j, lo, hi, config.line_tol, config.line_maxiter) \
        if config.compiled_line_search and hasattr(objective, "line_minimize") else None
    if fast is not None:
        return fast
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded",
                          options={"xatol": config.line_tol, "maxiter": config.line_maxiter})
    return float(res.x), float(res.fun)


def penalized(objective, theta, lam) -> float:
    """Objective plus ``lam`` times the l1 norm of the slopes (the intercept is unpenalized)."""
    return float(objective(theta)) + lam * float(np.sum(np.abs(np.asarray(theta)[1:])))


def coordinate_descent_sphere(objective: Callable, config: OptimizerConfig, start, lam: float) -> SparseEstimate:
    """l1-penalized minimization of ``objective`` over the unit sphere.

    1. For each coordinate separately, pick the best of ``start_j + offset``
       (other coordinates held at ``start``, vector not renormalized).
    2. Normalize.
    3. Sweep coordinates 0..d: bounded 1-d minimization, soft-threshold by
       ``lam`` (slopes only), renormalize the whole vector. Stop when a sweep moves the
       vector by less than ``config.tol`` or after ``config.max_iter`` sweeps.

    Among the sweep end points the one with the smallest penalized
    objective is returned. If a soft-threshold would zero the entire
    vector, that coordinate keeps its previous value.
    """
    theta0 = np.asarray(start, dtype=float)
    p = theta0.size
    first = theta0.copy()
    for j in range(p):
        f = _along(objective, theta0, j)
        best_v, best_t = np.inf, None
        for xi in config.offsets:
            t = theta0[j] + xi
            v = f(t)
            if np.isfinite(v) and v < best_v:
                best_v, best_t = v, t
        if best_t is None:
            raise NumericError(f"objective non-finite at every starting probe of coordinate {j}")
        first[j] = best_t
    norm = np.linalg.norm(first)
    if not norm > 0:
        raise NumericError("starting scan produced the zero vector")
    theta = first / norm

    best_theta = theta.copy()
    best_obj = penalized(objective, theta, lam)
    history = [best_obj]
    converged = False
    m = 0
    while m < config.max_iter:
        m += 1
        prev = theta.copy()
        for j in range(p):
            f = _safe(_along(objective, theta, j))
            cur = theta[j]
            t, ft = _line_search(objective, f, theta, j, cur - config.line_radius, cur + config.line_radius, config)
            fc = f(cur)
            if not ft < fc - FLAT_RTOL * max(1.0, abs(fc)):
                # no improvement beyond rounding: stay, so flat directions are only shrunk
                t = cur
            new = float(soft_threshold(t, lam)) if j > 0 else float(t)
            cand = theta.copy()
            cand[j] = new
            norm = np.linalg.norm(cand)
            if norm > 0:
                theta = cand / norm
            else:
                theta = theta / np.linalg.norm(theta)
        obj = penalized(objective, theta, lam)
        history.append(obj)
        if obj < best_obj:
            best_obj, best_theta = obj, theta.copy()
        if np.linalg.norm(theta - prev) < config.tol:
            converged = True
            break
    return SparseEstimate(
        best_theta, (), converged, best_obj, lam=lam, penalized_theta=best_theta, n_iter=m, history=tuple(history)
    )


def _tangential_grad_norm(f, u, h=1e-6) -> float:
    g = np.empty_like(u)
    for k in range(u.size):
        e = np.zeros_like(u)
        e[k] = h
        g[k] = (f(u + e) - f(u - e)) / (2 * h)
    return float(np.linalg.norm(g - (g @ u) * u))


def refit_on_support(objective: Callable, support: Sequence[int], start, gtol: float = 1e-6,
                     maxiter: int = 200) -> Tuple[np.ndarray, bool]:
    """Unpenalized minimization over unit vectors vanishing off ``support``.

    Uses the radial parametrization ``theta_S = u / |u|`` so every trial
    point is feasible, and runs BFGS on ``u`` with central-difference
    gradients. The result is never worse than ``start``. Returns
    ``(theta, converged)`` where convergence means a tangential gradient
    norm below ``gtol``. An empty support returns ``start`` and ``False``.
    """
    start = np.asarray(start, dtype=float)
    support = np.array(sorted(set(int(j) for j in support)), dtype=int)
    if support.size == 0:
        return start.copy(), False

    def embed(u):
        th = np.zeros_like(start)
        th[support] = u / np.linalg.norm(u)
        return th

    if support.size == 1:
        e = np.zeros_like(start)
        e[support[0]] = 1.0
        return (e if objective(e) <= objective(-e) else -e), True

    def f(u):
        v = float(objective(embed(u)))
        return v if np.isfinite(v) else np.inf

    u0 = start[support].copy()
    if not np.linalg.norm(u0) > 0:
        u0 = np.ones(support.size)
    u0 = u0 / np.linalg.norm(u0)
    f0 = f(u0)
    res = minimize(f, u0, method="BFGS", jac="3-point", options={"gtol": gtol, "maxiter": maxiter})
    u = res.x / np.linalg.norm(res.x)
    if not (np.isfinite(res.fun) and f(u) <= f0):
        u = u0
    converged = _tangential_grad_norm(f, u) < gtol
    return embed(u), converged


def fit_at_lambda(objective: Callable, lam: float, config: OptimizerConfig, start=None, refit: bool = True) -> SparseEstimate:
    """Coordinate descent at a fixed lambda followed by the support refit."""
    p = objective.d + 1 if start is None else len(start)
    if start is None:
        start = np.zeros(p)
        start[0] = 1.0
    cd = coordinate_descent_sphere(objective, config, start, lam)
    theta = cd.theta
    refit_ok = True
    if refit:
        theta, refit_ok = refit_on_support(objective, cd.support, cd.theta, config.refit_gtol, config.refit_maxiter)
    return SparseEstimate(
        theta, (), cd.converged, float(objective(theta)), lam=lam, penalized_theta=cd.theta,
        n_iter=cd.n_iter, history=cd.history,
    )


def cross_validate_lambda(make_ctx: Callable[[Dataset], LossContext], ds: Dataset, config: OptimizerConfig):
    """Mean held-out loss over folds for every lambda in the grid.

    ``make_ctx`` builds the loss on a subset of subjects, so the weighted
    normalizers are recomputed within each training and validation fold.
    Returns ``(lambdas, mean_errors)``; the caller picks the minimizer.
    """
    lambdas = np.asarray(config.lambdas, dtype=float)
    order = np.argsort(-lambdas, kind="stable")
    folds = split_folds(ds, config.folds, config.seed)
    errs = np.zeros((len(folds), lambdas.size))
    for f, (tr, va) in enumerate(folds):
        train = make_ctx(ds.subset(tr))
        val = make_ctx(ds.subset(va))
        start = None
        for k in order:
            est = fit_at_lambda(train, float(lambdas[k]), config, start=start)
            errs[f, k] = val(est.theta)
            if config.cv_warm_start:
                start = est.penalized_theta
    return lambdas, errs.mean(axis=0)


def _estimate(make_ctx, ds: Dataset, config: OptimizerConfig, lam: Optional[float]) -> SparseEstimate:
    cv_l, cv_e = (), ()
    if lam is None:
        if len(config.lambdas) == 1:
            lam = float(config.lambdas[0])
        else:
            lambdas, errs = cross_validate_lambda(make_ctx, ds, config)
            # ties go to the larger lambda
            best = max(range(lambdas.size), key=lambda k: (-errs[k], lambdas[k]))
            lam = float(lambdas[best])
            cv_l, cv_e = tuple(lambdas), tuple(errs)
    est = fit_at_lambda(make_ctx(ds), lam, config)
    if not np.isfinite(est.objective):
        raise ConvergenceError("estimate has a non-finite objective")
    return SparseEstimate(
        est.theta, (), est.converged, est.objective, lam=lam, penalized_theta=est.penalized_theta,
        n_iter=est.n_iter, history=est.history, cv_lambdas=cv_l, cv_errors=cv_e,
    )


def estimate_initial(ds: Dataset, config: OptimizerConfig = OptimizerConfig(), tau: float = DEFAULT_TAU,
                     lam: Optional[float] = None) -> SparseEstimate:
    """Weighted importance-sampling estimate (no augmentation)."""
    return _estimate(lambda sub: LossContext(sub, None, tau, weighted=True), ds, config, lam)


def estimate_sparse(ds: Dataset, q: QModel, config: OptimizerConfig = OptimizerConfig(), tau: float = DEFAULT_TAU,
                    lam: Optional[float] = None) -> SparseEstimate:
    """Weighted augmented estimate with a fixed working model ``q``."""
    return _estimate(lambda sub: LossContext(sub, q, tau, weighted=True), ds, config, lam)
