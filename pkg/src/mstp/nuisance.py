"""Working models for the stage rewards used in the augmentation term.

Each stage gets a linear model ``Q_t(x, a) = Phi(x, a) @ beta_t`` with
``Phi(x, a) = [phi(x), a * phi(x)]``. Three variants exist:

* ``zero``: ``beta_t = 0`` (plain weighted importance sampling),
* ``regression``: lasso on the observed stage rewards,
* ``variance-min``: lasso on the variance-reducing pseudo regression that
  uses the ratios of an initial policy estimate.

Both fitted variants choose lambda by k-fold CV and then refit by least
squares on the selected support.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from mstp.data import Dataset, format_float, split_folds
from mstp.importance import WBAR_FLOOR, RatioTable, compute_ratios
from mstp.lasso import cv_lasso
from mstp.policy import PolicyParams, action_probability

VARIANTS = ("zero", "regression", "variance-min")
VARIANT_ALIASES = {"q0": "zero", "q1": "regression", "q2": "variance-min"}


@dataclass(frozen=True)
class BasisSpec:
    kind: str = "linear"
    d: int = 1

    def __post_init__(self):
        if self.kind not in ("linear", "polynomial-2"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.d < 1:
            raise ValueError("basis needs d >= 1")

    @property
    def dim(self) -> int:
        """Output dimension d' of phi, intercept included."""
        if self.kind == "linear":
            return 1 + self.d
        return 1 + self.d + self.d * (self.d + 1) // 2

    def phi(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise ValueError(f"expected {self.d} features, got {x.shape[-1]}")
        parts = [np.ones(x.shape[:-1] + (1,)), x]
        if self.kind == "polynomial-2":
            iu, ju = np.triu_indices(self.d)
            parts.append(x[..., iu] * x[..., ju])
        return np.concatenate(parts, axis=-1)


def build_features(basis: BasisSpec, x, a) -> np.ndarray:
    """``[phi(x), a * phi(x)]``; ``a`` broadcasts against the batch axes of ``x``."""
    a = np.asarray(a, dtype=float)
    if np.any((a != 1) & (a != -1)):
        raise ValueError("action must be -1 or +1")
    f = basis.phi(x)
    return np.concatenate([f, a[..., None] * f], axis=-1)


@dataclass(frozen=True, eq=False)
class QModel:
    basis: BasisSpec
    beta: np.ndarray  # (T, 2 d')
    variant: str = "regression"
    lambdas: tuple = ()

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float, copy=True)
        if beta.ndim != 2 or beta.shape[1] != 2 * self.basis.dim:
            raise ValueError(f"beta must have shape (T, {2 * self.basis.dim})")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown Q variant {self.variant!r}")
        if self.variant == "zero" and np.any(beta != 0):
            raise ValueError("the zero variant must have all-zero coefficients")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @property
    def T(self) -> int:
        return self.beta.shape[0]

    @property
    def is_zero(self) -> bool:
        return self.variant == "zero" or not np.any(self.beta)

    def stage_predictions(self, ds: Dataset):
        """``(Q(X, A), Q(X, +1), Q(X, -1))`` for every subject-stage, each (n, T)."""
        f = self.basis.phi(ds.X)  # (n, T, d')
        k = self.basis.dim
        base = np.einsum("ntk,tk->nt", f, self.beta[:, :k])
        inter = np.einsum("ntk,tk->nt", f, self.beta[:, k:])
        return base + ds.A * inter, base + inter, base - inter

    def to_dict(self) -> dict:
        return {
            "basis": {"kind": self.basis.kind, "d": self.basis.d},
            "variant": self.variant,
            "lambdas": [format_float(v) for v in self.lambdas],
            "beta": [[format_float(v) for v in row] for row in self.beta],
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "QModel":
        basis = BasisSpec(rec["basis"]["kind"], int(rec["basis"]["d"]))
        beta = np.array([[float(v) for v in row] for row in rec["beta"]])
        lambdas = tuple(float(v) for v in rec.get("lambdas", ()))
        return cls(basis, beta, rec["variant"], lambdas)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "QModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def zero_q_model(basis: BasisSpec, T: int) -> QModel:
    return QModel(basis, np.zeros((T, 2 * basis.dim)), "zero")


def predict_q(q: QModel, t: int, x, a):
    """Stage-``t`` (0-based) prediction ``Phi(x, a) @ beta_t``."""
    return build_features(q.basis, x, a) @ q.beta[t]


def predict_u(q: QModel, p: PolicyParams, t: int, x):
    """Policy mixture ``sum_a pi(a | x) Q_t(x, a)``."""
    p_plus = action_probability(p, x, 1)
    return p_plus * predict_q(q, t, x, 1) + (1.0 - p_plus) * predict_q(q, t, x, -1)


def _intercept_free(basis: BasisSpec) -> np.ndarray:
    pf = np.ones(2 * basis.dim)
    pf[0] = 0.0
    return pf


def fit_q_regression(
    ds: Dataset,
    basis: Optional[BasisSpec] = None,
    lambdas=None,
    folds: int = 5,
    seed: int = 0,
    n_lambda: int = 50,
) -> QModel:
    """Per-stage lasso of ``R_t`` on ``Phi(X_t, A_t)``; does not depend on any policy.

    The pure intercept column is left unpenalized, as in standard lasso
    software. ``lambdas`` overrides the data-driven grid.
    """
    basis = basis or BasisSpec("linear", ds.d)
    fold_idx = split_folds(ds, folds, seed)
    pf = _intercept_free(basis)
    betas, chosen = [], []
    for t in range(ds.T):
        Phi = build_features(basis, ds.X[:, t], ds.A[:, t])
        res = cv_lasso(Phi, ds.R[:, t], fold_idx, lambdas=lambdas, penalty_factor=pf, n_lambda=n_lambda)
        betas.append(res.refit_coef)
        chosen.append(res.lam)
    return QModel(basis, np.array(betas), "regression", tuple(chosen))


def variance_min_design(ds: Dataset, basis: BasisSpec, p: PolicyParams, ratios: RatioTable, t: int):
    """Response and regressors of the stage-``t`` variance-minimizing least squares."""
    w = ratios.rho[:, t] / max(ratios.wbar[t + 1], WBAR_FLOOR)
    x = ds.X[:, t]
    p_plus = action_probability(p, x, 1)
    mix = p_plus[:, None] * build_features(basis, x, np.ones(ds.n)) + (1.0 - p_plus)[:, None] * build_features(
        basis, x, -np.ones(ds.n)
    )
    Z = w[:, None] * build_features(basis, x, ds.A[:, t]) - mix
    y = w * ds.R[:, t]
    return Z, y


def fit_q_variance_min(
    ds: Dataset,
    basis: Optional[BasisSpec],
    p: PolicyParams,
    ratios: Optional[RatioTable] = None,
    lambdas=None,
    folds: int = 5,
    seed: int = 0,
    n_lambda: int = 50,
) -> QModel:
    """Variance-minimizing working model at the initial policy ``p``.

    ``ratios`` default to those of ``p`` on ``ds`` and stay frozen during
    the fit. Every coefficient is penalized.
    """
    basis = basis or BasisSpec("linear", ds.d)
    ratios = ratios if ratios is not None else compute_ratios(p, ds)
    fold_idx = split_folds(ds, folds, seed)
    betas, chosen = [], []
    for t in range(ds.T):
        Z, y = variance_min_design(ds, basis, p, ratios, t)
        if not np.any(y):
            betas.append(np.zeros(Z.shape[1]))
            chosen.append(0.0)
            continue
        res = cv_lasso(Z, y, fold_idx, lambdas=lambdas, n_lambda=n_lambda)
        betas.append(res.refit_coef)
        chosen.append(res.lam)
    return QModel(basis, np.array(betas), "variance-min", tuple(chosen))


def fit_q(variant: str, ds: Dataset, basis=None, initial: Optional[PolicyParams] = None, folds=5, seed=0) -> QModel:
    """Dispatch on ``zero`` / ``regression`` / ``variance-min`` (or ``q0``/``q1``/``q2``)."""
    variant = VARIANT_ALIASES.get(variant, variant)
    basis = basis or BasisSpec("linear", ds.d)
    if variant == "zero":
        return zero_q_model(basis, ds.T)
    if variant == "regression":
        return fit_q_regression(ds, basis, folds=folds, seed=seed)
    if variant == "variance-min":
        if initial is None:
            raise ValueError("the variance-min fit needs an initial policy")
        return fit_q_variance_min(ds, basis, initial, folds=folds, seed=seed)
    raise ValueError(f"unknown Q variant {variant!r}")
