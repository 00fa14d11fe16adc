"""Logistic stochastic policies indexed by a unit vector.

The policy takes action ``a`` in {-1, +1} with probability
``exp(a g / tau) / (1 + exp(a g / tau))`` where ``g = theta_0 + x @ theta[1:]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from mstp.data import format_float

DEFAULT_TAU = 0.1
NORM_TOL = 1e-10


def sgn(x):
    """Sign with the tie-break ``sgn(0) = +1``."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def logistic(u):
    """Overflow-free ``1 / (1 + exp(-u))``."""
    u = np.asarray(u, dtype=float)
    z = np.exp(-np.abs(u))
    return np.where(u >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def log_logistic(u):
    return -np.logaddexp(0.0, -np.asarray(u, dtype=float))


def normalize_to_sphere(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if not norm > 0:
        raise ValueError("cannot normalize the zero vector")
    return v / norm


@dataclass(frozen=True, eq=False)
class PolicyParams:
    theta: np.ndarray
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float, copy=True)
        if theta.ndim != 1 or theta.size < 1:
            raise ValueError("theta must be a non-empty vector")
        if abs(np.linalg.norm(theta) - 1.0) > NORM_TOL:
            raise ValueError(f"theta must be unit-norm, got norm {np.linalg.norm(theta)!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def d(self) -> int:
        return self.theta.size - 1

    @classmethod
    def from_vector(cls, v, tau: float = DEFAULT_TAU) -> "PolicyParams":
        return cls(normalize_to_sphere(v), tau)

    def to_dict(self) -> dict:
        return {"tau": format_float(self.tau), "theta": [format_float(t) for t in self.theta]}

    @classmethod
    def from_dict(cls, rec: dict) -> "PolicyParams":
        return cls(np.array([float(t) for t in rec["theta"]]), float(rec["tau"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PolicyParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def linear_index(p, x):
    """``theta_0 + x @ theta[1:]``; ``x`` may carry leading batch axes.

    ``p`` is a :class:`PolicyParams` or a raw coefficient vector.
    """
    theta = p.theta if isinstance(p, PolicyParams) else np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != theta.size - 1:
        raise ValueError(f"feature length {x.shape[-1]} does not match d={theta.size - 1}")
    return theta[0] + x @ theta[1:]


def action_probability(p: PolicyParams, x, a):
    if np.any((np.asarray(a) != 1) & (np.asarray(a) != -1)):
        raise ValueError("action must be -1 or +1")
    return logistic(np.asarray(a) * linear_index(p, x) / p.tau)


def sample_action(p: PolicyParams, x, rng: np.random.Generator):
    """Draw actions; one uniform per row of ``x``."""
    prob_plus = action_probability(p, x, 1)
    u = rng.random(np.shape(prob_plus))
    out = np.where(u < prob_plus, 1, -1)
    return int(out) if out.ndim == 0 else out
