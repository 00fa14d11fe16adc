"""Debiased one-step inference for individual policy coefficients.

For slope ``j`` with nuisance slopes ``nu`` (all other slopes), a sparse
projection vector ``w`` solves the Dantzig program::

    min |w|_1   s.t.   |H[j, nu] - H[nu, nu] w|_inf <= lambda_w

and gives the decorrelated score ``S = g[j] - w'g[nu]``, the partial
information ``I = H[j, j] - w'H[nu, j]`` and the one-step estimate
``theta_hat[j] - S / I``. All derivatives are finite differences on the
sphere (:mod:`mstp.sphere_diff`). Intervals come from the normal
approximation or from a subject-level bootstrap that refits the sparse
estimate at a frozen lambda and reruns the one-step correction.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.stats import norm

from mstp.data import Dataset, format_float, split_folds
from mstp.errors import (
    ConvergenceError,
    DegenerateInformationError,
    InfeasibleDantzigError,
    MSTPError,
    NumericError,
)
from mstp.loss import LossContext
from mstp.nuisance import QModel
from mstp.optimizer import OptimizerConfig, fit_at_lambda
from mstp.policy import DEFAULT_TAU, normalize_to_sphere
from mstp.seeding import derive_rng
from mstp.sphere_diff import gradient_vector, hessian_matrix

log = logging.getLogger(__name__)

INFO_EPS = 1e-8
FEAS_TOL = 1e-6
MAX_DROP_FRACTION = 0.10


# -- derivatives -----------------------------------------------------------

def slope_gradient(ctx: LossContext, theta, step: Optional[float] = None) -> np.ndarray:
    return gradient_vector(ctx, theta, ctx.n, ctx.T, step)


def slope_hessian(ctx: LossContext, theta, step: Optional[float] = None) -> np.ndarray:
    return hessian_matrix(ctx, theta, ctx.n, ctx.T, step)


def per_sample_gradients(ctx: LossContext, theta, step: Optional[float] = None) -> np.ndarray:
    """Slope gradients of every per-sample loss, shape (n, d)."""
    return gradient_vector(ctx.per_sample, theta, ctx.n, ctx.T, step).T


def nuisance_index(d: int, j: int) -> np.ndarray:
    """0-based slope positions other than slope ``j`` (1-based)."""
    return np.array([k for k in range(d) if k != j - 1], dtype=int)


# -- Dantzig program -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DecorrelationFit:
    j: int
    w_hat: np.ndarray
    lambda_w: float
    residual: float


def min_feasible_lambda(H, c) -> float:
    """Smallest ``lam`` with some ``w`` satisfying ``|c - H w|_inf <= lam``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    c = np.asarray(c, dtype=float)
    m = c.size
    if m == 0:
        return 0.0
    # variables (w, t); minimize t subject to +-(c - H w) <= t
    obj = np.zeros(m + 1)
    obj[-1] = 1.0
    ones = np.ones((m, 1))
    A = np.block([[-H, -ones], [H, -ones]])
    b = np.concatenate([-c, c])
    res = linprog(obj, A_ub=A, b_ub=b, bounds=[(None, None)] * m + [(0, None)], method="highs")
    if res.status != 0:
        raise NumericError(f"feasibility program failed: {res.message}")
    return float(res.x[-1])


def dantzig_solve(H, c, lambda_w: float, j: int = 0) -> DecorrelationFit:
    """Minimum-l1 ``w`` with ``|c - H w|_inf <= lambda_w``, as a linear program.

    ``w = w_plus - w_minus`` with both parts non-negative. Raises
    :class:`InfeasibleDantzigError` (carrying the smallest feasible
    ``lambda_w``) when no such ``w`` exists.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    c = np.asarray(c, dtype=float)
    m = c.size
    if H.shape != (m, m):
        raise ValueError("H must be square and match c")
    if not (np.isfinite(lambda_w) and lambda_w >= 0):
        raise ValueError("lambda_w must be finite and non-negative")
    if m == 0:
        return DecorrelationFit(j, np.zeros(0), float(lambda_w), 0.0)
    if np.max(np.abs(c)) <= lambda_w:
        return DecorrelationFit(j, np.zeros(m), float(lambda_w), float(np.max(np.abs(c))))
    A = np.block([[-H, H], [H, -H]])
    b = np.concatenate([lambda_w - c, lambda_w + c])
    res = linprog(np.ones(2 * m), A_ub=A, b_ub=b, bounds=[(0, None)] * (2 * m), method="highs")
    if res.status == 2:
        raise InfeasibleDantzigError(
            f"Dantzig program infeasible at lambda_w={lambda_w:g}", min_feasible_lambda(H, c)
        )
    if res.status != 0:
        raise NumericError(f"Dantzig program failed: {res.message}")
    w = res.x[:m] - res.x[m:]
    w[np.abs(w) < 1e-14] = 0.0
    residual = float(np.max(np.abs(c - H @ w)))
    return DecorrelationFit(j, w, float(lambda_w), residual)


def decorrelation(H, j: int, lambda_w: float) -> DecorrelationFit:
    """Dantzig fit for slope ``j`` (1-based) from the (d, d) slope Hessian."""
    H = np.asarray(H, dtype=float)
    nu = nuisance_index(H.shape[0], j)
    return dantzig_solve(H[np.ix_(nu, nu)], H[j - 1, nu], lambda_w, j)


# -- score, information, one step -----------------------------------------

def decorrelated_score(grad_j: float, grad_nu, w_hat) -> float:
    return float(grad_j - np.dot(np.asarray(w_hat, float), np.asarray(grad_nu, float)))


def partial_information(H, j: int, w_hat) -> float:
    H = np.asarray(H, dtype=float)
    nu = nuisance_index(H.shape[0], j)
    return float(H[j - 1, j - 1] - np.dot(np.asarray(w_hat, float), H[nu, j - 1]))


def one_step(theta_hat_j: float, score: float, info: float, eps: float = INFO_EPS) -> float:
    """``theta_hat_j - score / info``; refuses near-zero information."""
    if not abs(info) > eps:
        raise DegenerateInformationError(f"information {info:g} is within {eps:g} of zero")
    return float(theta_hat_j - score / info)


def sigma_s_hat(per_sample_grads, w_hat) -> float:
    """``mean_i (v' g_i)^2`` with ``v = (1, -w)``.

    Rows of ``per_sample_grads`` are ordered as ``(slope j, nuisance slopes)``.
    """
    G = np.atleast_2d(np.asarray(per_sample_grads, dtype=float))
    v = np.concatenate([[1.0], -np.asarray(w_hat, dtype=float)])
    proj = G @ v
    return float(np.mean(proj * proj))


def asymptotic_ci(theta_tilde: float, sigma_s: float, info: float, n: int, alpha: float = 0.05):
    """Normal interval ``theta_tilde -+ z sqrt(sigma_s) / (sqrt(n) |info|)``."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    half = norm.ppf(1.0 - alpha / 2.0) * np.sqrt(max(sigma_s, 0.0)) / (np.sqrt(n) * abs(info))
    return float(theta_tilde - half), float(theta_tilde + half)


@dataclass(frozen=True, eq=False)
class OneStepResult:
    j: int
    theta_hat: float
    theta_tilde: float
    score: float
    info: float
    sigma_s_hat: float
    w_hat: np.ndarray
    lambda_w: float
    degenerate: bool = False
    ci: Dict[str, Tuple[float, float]] = field(default_factory=dict)


def one_step_all(ctx: LossContext, theta_hat, lambda_w: float, alpha: float = 0.05,
                 with_sigma: bool = True, step: Optional[float] = None) -> List[OneStepResult]:
    """One-step estimates (and asymptotic intervals) for every slope."""
    theta_hat = normalize_to_sphere(theta_hat)
    d = theta_hat.size - 1
    g = slope_gradient(ctx, theta_hat, step)
    H = slope_hessian(ctx, theta_hat, step)
    G = per_sample_gradients(ctx, theta_hat, step) if with_sigma else None
    out = []
    for j in range(1, d + 1):
        nu = nuisance_index(d, j)
        fit = decorrelation(H, j, lambda_w)
        S = decorrelated_score(g[j - 1], g[nu], fit.w_hat)
        info = partial_information(H, j, fit.w_hat)
        degenerate = False
        try:
            tilde = one_step(theta_hat[j], S, info)
        except DegenerateInformationError:
            log.warning("slope %d: degenerate information %.3g, keeping the sparse estimate", j, info)
            tilde, degenerate = float(theta_hat[j]), True
        sig = float("nan")
        ci = {}
        if G is not None:
            sig = sigma_s_hat(G[:, np.concatenate([[j - 1], nu])], fit.w_hat)
            if not degenerate:
                ci["asymptotic"] = asymptotic_ci(tilde, sig, info, ctx.n, alpha)
        out.append(OneStepResult(j, float(theta_hat[j]), tilde, S, info, sig, fit.w_hat, float(lambda_w),
                                 degenerate, ci))
    return out


def full_vector(theta_hat, theta_tilde_slopes) -> np.ndarray:
    """Unit vector ``(theta_hat_0, theta_tilde_1..d)`` used to evaluate the debiased policy."""
    v = np.concatenate([[np.asarray(theta_hat, float)[0]], np.asarray(theta_tilde_slopes, float)])
    return normalize_to_sphere(v)


# -- lambda_w tuning -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LambdaWSelection:
    lambda_w: float
    grid: np.ndarray
    mean_error: np.ndarray
    se_error: np.ndarray


def projection_error(H_val, H_train, j: int, lambda_w: float) -> float:
    """Validation sup-norm projection error of the training-fold Dantzig fit."""
    nu = nuisance_index(H_train.shape[0], j)
    w = decorrelation(H_train, j, lambda_w).w_hat
    return float(np.max(np.abs(H_val[j - 1, nu] - H_val[np.ix_(nu, nu)] @ w))) if nu.size else 0.0


def one_se_choice(grid, mean_error, se_error) -> float:
    """Largest grid value whose mean error is within one SE of the minimum."""
    grid = np.asarray(grid, float)
    mean_error = np.asarray(mean_error, float)
    se_error = np.asarray(se_error, float)
    finite = np.isfinite(mean_error)
    if not finite.any():
        raise InfeasibleDantzigError("every lambda_w in the grid is infeasible")
    best = int(np.argmin(np.where(finite, mean_error, np.inf)))
    cut = mean_error[best] + (se_error[best] if np.isfinite(se_error[best]) else 0.0)
    ok = finite & (mean_error <= cut)
    return float(grid[ok].max())


def default_lambda_w_grid(H, n_grid: int = 10, ratio: float = 1e-3) -> np.ndarray:
    """``scale * logspace`` with ``scale = max_j |H[j, nu]|_inf`` (where w = 0 is feasible)."""
    H = np.asarray(H, float)
    off = H - np.diag(np.diag(H))
    scale = float(np.max(np.abs(off))) if off.size else 1.0
    if not scale > 0:
        scale = 1.0
    return scale * np.logspace(np.log10(ratio), 0.0, n_grid)


def tune_lambda_w(ds: Dataset, theta_hat, q: Optional[QModel] = None, folds: int = 5, grid=None, seed: int = 0,
                  tau: float = DEFAULT_TAU, step: Optional[float] = None) -> LambdaWSelection:
    """Cross-validated lambda_w under the one-standard-error rule.

    For each fold the Hessian at ``theta_hat`` is estimated on the training
    and validation subjects; the validation error of a grid value is the
    sup-norm projection error averaged over all slopes. Infeasible grid
    values count as infinite error.
    """
    theta_hat = normalize_to_sphere(theta_hat)
    d = theta_hat.size - 1
    if grid is None:
        grid = default_lambda_w_grid(slope_hessian(LossContext(ds, q, tau), theta_hat, step))
    grid = np.asarray(grid, dtype=float)
    errs = np.full((folds, grid.size), np.inf)
    for f, (tr, va) in enumerate(split_folds(ds, folds, seed)):
        H_tr = slope_hessian(LossContext(ds.subset(tr), q, tau), theta_hat, step)
        H_va = slope_hessian(LossContext(ds.subset(va), q, tau), theta_hat, step)
        for k, lam in enumerate(grid):
            try:
                errs[f, k] = np.mean([projection_error(H_va, H_tr, j, lam) for j in range(1, d + 1)])
            except InfeasibleDantzigError:
                errs[f, k] = np.inf
    with np.errstate(invalid="ignore"):
        mean = errs.mean(axis=0)
        se = errs.std(axis=0, ddof=1) / np.sqrt(folds)
    lam = one_se_choice(grid, mean, se)
    return LambdaWSelection(lam, grid, mean, se)


# -- bootstrap -------------------------------------------------------------

def bootstrap_indices(n: int, seed: int, b: int) -> np.ndarray:
    return derive_rng(seed, "bootstrap", b).integers(0, n, size=n)


def _bootstrap_replicate(ds, q, lambda_theta, lambda_w, config, tau, seed, b, resample, step):
    idx = resample(ds.n, seed, b)
    ctx = LossContext(ds.subset(idx), q, tau)
    est = fit_at_lambda(ctx, lambda_theta, config)
    res = one_step_all(ctx, est.theta, lambda_w, with_sigma=False, step=step)
    return np.array([r.theta_tilde for r in res]), np.array(est.theta[1:])


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    replicates: np.ndarray  # (B_kept, d) one-step slopes
    sparse_replicates: np.ndarray  # (B_kept, d) refitted sparse slopes
    dropped: Tuple[int, ...]
    B: int
    seed: int

    def percentile_ci(self, alpha: float = 0.05, sparse: bool = False) -> np.ndarray:
        """(d, 2) array of ``alpha/2`` and ``1 - alpha/2`` quantiles per slope."""
        reps = self.sparse_replicates if sparse else self.replicates
        lo = np.quantile(reps, alpha / 2.0, axis=0)
        hi = np.quantile(reps, 1.0 - alpha / 2.0, axis=0)
        return np.stack([lo, hi], axis=1)

    def mad(self) -> np.ndarray:
        """Median absolute deviation of the replicates around their median, per slope."""
        med = np.median(self.replicates, axis=0)
        return np.median(np.abs(self.replicates - med), axis=0)


def bootstrap_inference(ds: Dataset, q: Optional[QModel], lambda_theta: float, lambda_w: float, B: int = 100,
                        seed: int = 0, config: OptimizerConfig = OptimizerConfig(), tau: float = DEFAULT_TAU,
                        resample: Callable[[int, int, int], np.ndarray] = bootstrap_indices, jobs: int = 1,
                        step: Optional[float] = None) -> BootstrapResult:
    """Subject-level bootstrap of the one-step estimates.

    Every replicate refits the sparse estimate from the default start at the
    frozen ``lambda_theta`` and working model ``q`` and recomputes the
    one-step correction at ``lambda_w``. Failed replicates are dropped and
    logged; more than 10% failures raise :class:`ConvergenceError`.
    ``resample(n, seed, b)`` returns the subject indices of replicate ``b``.
    """
    if B < 2:
        raise ValueError("need at least two bootstrap replicates")

    def run(b):
        try:
            return _bootstrap_replicate(ds, q, lambda_theta, lambda_w, config, tau, seed, b, resample, step)
        except (MSTPError, ValueError, FloatingPointError) as exc:
            log.warning("bootstrap replicate %d failed: %s", b, exc)
            return None

    if jobs == 1:
        outs = [run(b) for b in range(B)]
    else:
        from joblib import Parallel, delayed

        outs = Parallel(n_jobs=jobs)(delayed(run)(b) for b in range(B))
    dropped = tuple(b for b, o in enumerate(outs) if o is None)
    if len(dropped) > MAX_DROP_FRACTION * B:
        raise ConvergenceError(f"{len(dropped)} of {B} bootstrap replicates failed")
    kept = [o for o in outs if o is not None]
    return BootstrapResult(np.array([o[0] for o in kept]), np.array([o[1] for o in kept]), dropped, B, seed)


# -- full pipeline result --------------------------------------------------

TABLE_COLUMNS = ("coordinate", "theta_hat", "theta_tilde", "ci_low", "ci_high", "method", "lambda_w", "B", "seed")


@dataclass(frozen=True, eq=False)
class InferenceResult:
    theta_hat: np.ndarray
    one_step: Tuple[OneStepResult, ...]
    lambda_w: float
    lambda_theta: float
    alpha: float
    B: int = 0
    seed: int = 0
    bootstrap: Optional[BootstrapResult] = None

    @property
    def theta_tilde(self) -> np.ndarray:
        return np.array([r.theta_tilde for r in self.one_step])

    @property
    def theta_tilde_full(self) -> np.ndarray:
        return full_vector(self.theta_hat, self.theta_tilde)

    def intervals(self, method: str = "bootstrap") -> np.ndarray:
        """(d, 2) interval bounds for ``method`` (NaN where unavailable)."""
        if method == "bootstrap":
            if self.bootstrap is None:
                return np.full((len(self.one_step), 2), np.nan)
            return self.bootstrap.percentile_ci(self.alpha)
        return np.array([r.ci.get(method, (np.nan, np.nan)) for r in self.one_step])

    def rows(self) -> List[dict]:
        methods = ["asymptotic"] + (["bootstrap"] if self.bootstrap is not None else [])
        out = []
        for method in methods:
            ci = self.intervals(method)
            for r, (lo, hi) in zip(self.one_step, ci):
                out.append({
                    "coordinate": r.j, "theta_hat": format_float(r.theta_hat),
                    "theta_tilde": format_float(r.theta_tilde), "ci_low": format_float(lo),
                    "ci_high": format_float(hi), "method": method, "lambda_w": format_float(self.lambda_w),
                    "B": self.B if method == "bootstrap" else 0, "seed": self.seed,
                })
        return out

    def write_table(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows())


def run_inference(ds: Dataset, theta_hat, q: Optional[QModel], lambda_theta: float, lambda_w: Optional[float] = None,
                  B: int = 100, alpha: float = 0.05, seed: int = 0, config: OptimizerConfig = OptimizerConfig(),
                  tau: float = DEFAULT_TAU, folds: int = 5, jobs: int = 1) -> InferenceResult:
    """lambda_w tuning (unless given), one-step estimates for all slopes, bootstrap (if ``B > 0``)."""
    theta_hat = normalize_to_sphere(theta_hat)
    if lambda_w is None:
        lambda_w = tune_lambda_w(ds, theta_hat, q, folds=folds, seed=seed, tau=tau).lambda_w
    ctx = LossContext(ds, q, tau)
    steps = tuple(one_step_all(ctx, theta_hat, lambda_w, alpha))
    boot = None
    if B > 0:
        boot = bootstrap_inference(ds, q, lambda_theta, lambda_w, B, seed, config, tau, jobs=jobs)
    return InferenceResult(theta_hat, steps, float(lambda_w), float(lambda_theta), alpha, B, seed, boot)
