"""Stepwise cumulative importance ratios and their per-stage averages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mstp.policy import PolicyParams, log_logistic

WBAR_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class RatioTable:
    """``rho[i, t]`` is the product of policy/behavior ratios over stages
    ``1..t+1`` for subject ``i``; ``wbar[t]`` is the column mean of
    ``rho[:, t-1]`` with ``wbar[0] = 1`` for the empty product.
    """

    rho: np.ndarray
    wbar: np.ndarray

    def normalized(self, floor: float = WBAR_FLOOR) -> np.ndarray:
        """Self-normalized ratios ``rho[:, t] / wbar[t+1]``."""
        return self.rho / np.maximum(self.wbar[1:], floor)


def log_ratios(theta, tau, X, A, mu) -> np.ndarray:
    """Cumulative log ratios, shape (n, T). ``theta`` need not be unit-norm."""
    g = theta[0] + X @ theta[1:]
    return np.cumsum(log_logistic(A * g / tau) - np.log(mu), axis=1)


def compute_ratios(p: PolicyParams, ds) -> RatioTable:
    rho = np.exp(log_ratios(p.theta, p.tau, ds.X, ds.A, ds.mu))
    wbar = np.concatenate([[1.0], rho.mean(axis=0)])
    return RatioTable(rho, wbar)
