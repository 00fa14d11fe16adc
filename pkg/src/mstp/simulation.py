"""Simulated sequential randomized trials with EWMA-driven state dynamics.

Two scenarios drive the first two covariates through an exponentially
weighted moving average of their history (so the process is not Markov in
the observed state); the remaining covariates are pure noise. Stage-t
rewards depend on the stage-(t+1) state, so one extra hidden state is
simulated after the last stage.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from mstp.data import Dataset
from mstp.policy import PolicyParams, logistic

REWARD_MODELS = ("scenario", "action_only", "zero")


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: int = 2
    n: int = 500
    d: int = 30
    T: int = 1
    noise_var: float = 0.2
    ewma_weight: float = 0.8
    seed: int = 0
    reward_model: str = "scenario"

    def __post_init__(self):
        if self.scenario not in (1, 2):
            raise ValueError("scenario must be 1 or 2")
        if self.d < 2:
            raise ValueError("scenarios need d >= 2")
        if self.T < 1 or self.n < 1:
            raise ValueError("need T >= 1 and n >= 1")
        if self.reward_model not in REWARD_MODELS:
            raise ValueError(f"unknown reward model {self.reward_model!r}")

    def with_(self, **kw) -> "ScenarioSpec":
        return replace(self, **kw)


def ewma_update(prev, x, weight: float = 0.8):
    """One EWMA step: ``(1 - weight) * prev + weight * x``."""
    return (1.0 - weight) * prev + weight * x


def ewma(history, weight: float = 0.8):
    """EWMA of a sequence along axis 0, starting from the first element."""
    history = np.asarray(history, dtype=float)
    out = np.empty_like(history)
    out[0] = history[0]
    for t in range(1, history.shape[0]):
        out[t] = ewma_update(out[t - 1], history[t], weight)
    return out


def _transition(scenario, a, s1, s2):
    """Noise-free next values of the two informative covariates given EWMA states."""
    if scenario == 1:
        return 0.6 * a * s1 + 0.2 * s1 + 0.1 * s2, -0.6 * a * s2 + 0.3 * s1 * s2
    return 0.5 * a * s1 + 0.3 * s1 + 0.1 * s2, 0.5 * a * s2 + 0.1 * s1 + 0.3 * s2


def _reward(scenario, reward_model, a, x1_next, x2_next):
    if reward_model == "zero":
        return np.zeros(np.broadcast(a, x1_next).shape)
    if reward_model == "action_only":
        return -0.5 * a * np.ones_like(x1_next)
    if scenario == 1:
        return np.exp(0.5 * (x1_next + x2_next) - 0.2 * a - 1.0)
    return x1_next + x2_next - 0.5 * a


def simulate(
    spec: ScenarioSpec,
    seed=None,
    policy: Optional[PolicyParams] = None,
    n: Optional[int] = None,
    forced_action: Optional[int] = None,
    zero_noise: bool = False,
    initial_state=None,
):
    """Raw arrays ``(X, A, R, mu)`` of shapes (n, T, d), (n, T), (n, T), (n, T).

    Actions come from the 50/50 randomization unless ``policy`` is given,
    in which case they are drawn from it and ``mu`` records the policy
    probability of the drawn action. ``forced_action``, ``zero_noise`` and
    ``initial_state`` are hooks for hand-checkable trajectories.
    """
    n = spec.n if n is None else n
    d, T = spec.d, spec.T
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    sd = np.sqrt(spec.noise_var)
    if initial_state is not None:
        x = np.broadcast_to(np.asarray(initial_state, dtype=float), (n, d)).copy()
    else:
        x = rng.standard_normal((n, d))
    X = np.empty((n, T, d))
    A = np.empty((n, T))
    R = np.empty((n, T))
    mu = np.empty((n, T))
    s1, s2 = x[:, 0].copy(), x[:, 1].copy()
    for t in range(T):
        X[:, t] = x
        if forced_action is not None:
            a = np.full(n, float(forced_action))
            m = np.ones(n) if policy is None else logistic(a * (policy.theta[0] + x @ policy.theta[1:]) / policy.tau)
        elif policy is None:
            a = np.where(rng.random(n) < 0.5, 1.0, -1.0)
            m = np.full(n, 0.5)
        else:
            p_plus = logistic((policy.theta[0] + x @ policy.theta[1:]) / policy.tau)
            a = np.where(rng.random(n) < p_plus, 1.0, -1.0)
            m = np.where(a > 0, p_plus, 1.0 - p_plus)
        eps = np.zeros((n, d)) if zero_noise else sd * rng.standard_normal((n, d))
        m1, m2 = _transition(spec.scenario, a, s1, s2)
        x = eps.copy()
        x[:, 0] += m1
        x[:, 1] += m2
        R[:, t] = _reward(spec.scenario, spec.reward_model, a, x[:, 0], x[:, 1])
        A[:, t] = a
        mu[:, t] = m
        s1 = ewma_update(s1, x[:, 0], spec.ewma_weight)
        s2 = ewma_update(s2, x[:, 1], spec.ewma_weight)
    return X, A, R, mu


def generate(spec: ScenarioSpec, seed=None, **hooks) -> Dataset:
    """Trial dataset under 50/50 randomization (``mu = 0.5`` everywhere)."""
    X, A, R, mu = simulate(spec, seed=seed, **hooks)
    return Dataset(X, A, R, mu)


def mc_value(p: PolicyParams, spec: ScenarioSpec, n_test: int = 10_000, seed=None):
    """Monte Carlo value of ``p``: mean total reward of on-policy rollouts and its SE."""
    if p.d != spec.d:
        theta = np.zeros(spec.d + 1)
        k = min(p.d, spec.d) + 1
        theta[:k] = p.theta[:k]
        p = PolicyParams.from_vector(theta, p.tau)
    _, _, R, _ = simulate(spec, seed=seed, policy=p, n=n_test)
    total = R.sum(axis=1)
    se = total.std(ddof=1) / np.sqrt(n_test) if n_test > 1 else 0.0
    return float(total.mean()), float(se)


def pad_theta(theta, d: int) -> np.ndarray:
    out = np.zeros(d + 1)
    theta = np.asarray(theta, dtype=float)
    out[: theta.size] = theta
    return out


def sphere_grid(step: float) -> np.ndarray:
    """Unit vectors ``(theta_0, theta_1, theta_2)`` with ``(theta_1, theta_2)`` on a
    grid of the closed unit disk and both signs of ``theta_0``."""
    k = int(np.floor(1.0 / step + 1e-9))
    ticks = step * np.arange(-k, k + 1)
    t1, t2 = np.meshgrid(ticks, ticks, indexing="ij")
    t1, t2 = t1.ravel(), t2.ravel()
    inside = t1 ** 2 + t2 ** 2 <= 1.0 + 1e-12
    t1, t2 = t1[inside], t2[inside]
    t0 = np.sqrt(np.clip(1.0 - t1 ** 2 - t2 ** 2, 0.0, None))
    pts = np.concatenate([np.stack([t0, t1, t2], 1), np.stack([-t0, t1, t2], 1)])
    pts = pts[np.lexsort((pts[:, 0], pts[:, 2], pts[:, 1]))]
    keep = np.ones(len(pts), bool)
    keep[1:] = np.any(np.abs(np.diff(pts, axis=0)) > 0, axis=1)
    return pts[keep] / np.linalg.norm(pts[keep], axis=1, keepdims=True)


def _crn_values(spec: ScenarioSpec, thetas, tau, n_test, rng, chunk=32):
    """Values of many (theta_0, theta_1, theta_2) policies on one shared test set.

    Only the two informative covariates enter these policies, so the noise
    covariates are not simulated. All policies share the initial states,
    action uniforms and transition noise (common random numbers).
    """
    T = spec.T
    sd = np.sqrt(spec.noise_var)
    x0 = rng.standard_normal((n_test, 2))
    unif = rng.random((T, n_test))
    eps = sd * rng.standard_normal((T, n_test, 2))
    out = np.empty(len(thetas))
    for lo in range(0, len(thetas), chunk):
        th = thetas[lo: lo + chunk]
        G = th.shape[0]
        x1 = np.broadcast_to(x0[:, 0], (G, n_test)).copy()
        x2 = np.broadcast_to(x0[:, 1], (G, n_test)).copy()
        s1, s2 = x1.copy(), x2.copy()
        total = np.zeros((G, n_test))
        for t in range(T):
            g = th[:, :1] + th[:, 1:2] * x1 + th[:, 2:3] * x2
            a = np.where(unif[t] < logistic(g / tau), 1.0, -1.0)
            m1, m2 = _transition(spec.scenario, a, s1, s2)
            x1, x2 = m1 + eps[t, :, 0], m2 + eps[t, :, 1]
            total += _reward(spec.scenario, spec.reward_model, a, x1, x2)
            s1 = ewma_update(s1, x1, spec.ewma_weight)
            s2 = ewma_update(s2, x2, spec.ewma_weight)
        out[lo: lo + G] = total.mean(axis=1)
    return out


def grid_oracle(spec: ScenarioSpec, step: float = 0.05, n_test: int = 50_000, repeats: int = 4,
                tau: float = 0.1, seed=None) -> np.ndarray:
    """Grid-search maximizer of the value over ``(theta_0, theta_1, theta_2)``.

    Each repeat draws its own test set and takes the best grid point; the
    repeat winners are averaged and renormalized. Returns a length-(d+1)
    unit vector (noise coordinates zero).
    """
    from mstp.seeding import derive_rng

    root = spec.seed if seed is None else seed
    grid = sphere_grid(step)
    winners = []
    for r in range(repeats):
        vals = _crn_values(spec, grid, tau, n_test, derive_rng(root, "oracle", r))
        winners.append(grid[int(np.argmax(vals))])
    mean = np.mean(winners, axis=0)
    if not np.linalg.norm(mean) > 0:
        mean = winners[0]
    return pad_theta(mean / np.linalg.norm(mean), spec.d)
