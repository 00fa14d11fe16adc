"""Augmented inverse-probability-weighted value loss.

For subject ``i``::

    l_i = - sum_t { r_{i,1:t} (R_it - Q_t(X_it, A_it)) + r_{i,1:t-1} U_t(X_it) }

with ``U_t(x) = sum_a pi(a|x) Q_t(x, a)``. In weighted mode the cumulative
ratios ``r`` are divided by their per-stage cross-subject means; in
unweighted mode they are the raw products. The value estimate is
``-mean_i l_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from mstp.data import Dataset
from mstp.importance import WBAR_FLOOR, log_ratios
from mstp.nuisance import BasisSpec, QModel, zero_q_model
from mstp.policy import DEFAULT_TAU, PolicyParams, logistic


@numba.njit(cache=True)
def _loss_kernel(g, A, resid, qp, qm, inv_mu, tau, weighted, floor, zero, out):
    """Per-sample losses from the linear index ``g`` (n, T); returns their mean.

    Ratios are accumulated as a direct product here (one exponential per
    stage); :func:`mstp.importance.log_ratios` is the log-space reference.
    """
    n, T = g.shape
    rho = np.empty((n, T))
    p_plus = np.empty((n, T))
    for i in range(n):
        cum = 1.0
        for t in range(T):
            v = A[i, t] * g[i, t] / tau
            e = np.exp(-abs(v))
            if v >= 0:
                p_obs = 1.0 / (1.0 + e)
            else:
                p_obs = e / (1.0 + e)
            cum *= p_obs * inv_mu[i, t]
            rho[i, t] = cum
            p_plus[i, t] = p_obs if A[i, t] > 0 else 1.0 - p_obs
    wbar = np.ones(T)
    if weighted:
        for t in range(T):
            s = 0.0
            for i in range(n):
                s += rho[i, t]
            wbar[t] = max(s / n, floor)
    total = 0.0
    for i in range(n):
        s = 0.0
        prev = 1.0
        for t in range(T):
            r = rho[i, t] / wbar[t]
            s += r * resid[i, t]
            if not zero:
                s += prev * (qm[i, t] + p_plus[i, t] * (qp[i, t] - qm[i, t]))
            prev = r
        out[i] = -s
        total += -s
    return total / n


@numba.njit(cache=True)
def _loss_along(t, g0, col, g, A, resid, qp, qm, inv_mu, tau, weighted, floor, zero, out):
    n, T = g0.shape
    for i in range(n):
        for k in range(T):
            g[i, k] = g0[i, k] + t * col[i, k]
    v = _loss_kernel(g, A, resid, qp, qm, inv_mu, tau, weighted, floor, zero, out)
    return v if np.isfinite(v) else np.inf


@numba.njit(cache=True)
def _bounded_brent(lo, hi, xatol, maxfun, g0, col, A, resid, qp, qm, inv_mu, tau, weighted, floor, zero, out):
    """Bounded Brent minimization of ``t -> loss(g0 + t * col)`` on ``[lo, hi]``.

    Same iteration as :func:`scipy.optimize.minimize_scalar` with
    ``method="bounded"``, compiled together with the loss so a line search
    costs no interpreter overhead per evaluation. Returns ``(t, f(t))``.
    """
    g = np.empty_like(g0)
    sqrt_eps = np.sqrt(2.2e-16)
    golden_mean = 0.5 * (3.0 - np.sqrt(5.0))
    a, b = lo, hi
    fulc = a + golden_mean * (b - a)
    nfc, xf = fulc, fulc
    rat = 0.0
    e = 0.0
    x = xf
    fx = _loss_along(x, g0, col, g, A, resid, qp, qm, inv_mu, tau, weighted, floor, zero, out)
    num = 1
    ffulc = fx
    fnfc = fx
    xm = 0.5 * (a + b)
    tol1 = sqrt_eps * abs(xf) + xatol / 3.0
    tol2 = 2.0 * tol1
    while abs(xf - xm) > (tol2 - 0.5 * (b - a)):
        golden = True
        if abs(e) > tol1:
            golden = False
            r = (xf - nfc) * (fx - ffulc)
            q = (xf - fulc) * (fx - fnfc)
            p = (xf - fulc) * q - (xf - nfc) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            r = e
            e = rat
            if (abs(p) < abs(0.5 * q * r)) and (p > q * (a - xf)) and (p < q * (b - xf)):
                rat = (p + 0.0) / q
                x = xf + rat
                if ((x - a) < tol2) or ((b - x) < tol2):
                    si = np.sign(xm - xf) + ((xm - xf) == 0)
                    rat = tol1 * si
            else:
                golden = True
        if golden:
            if xf >= xm:
                e = a - xf
            else:
                e = b - xf
            rat = golden_mean * e
        si = np.sign(rat) + (rat == 0)
        x = xf + si * max(abs(rat), tol1)
        fu = _loss_along(x, g0, col, g, A, resid, qp, qm, inv_mu, tau, weighted, floor, zero, out)
        num += 1
        if fu <= fx:
            if x >= xf:
                a = xf
            else:
                b = xf
            fulc, ffulc = nfc, fnfc
            nfc, fnfc = xf, fx
            xf, fx = x, fu
        else:
            if x < xf:
                a = x
            else:
                b = x
            if (fu <= fnfc) or (nfc == xf):
                fulc, ffulc = nfc, fnfc
                nfc, fnfc = x, fu
            elif (fu <= ffulc) or (fulc == xf) or (fulc == nfc):
                fulc, ffulc = x, fu
        xm = 0.5 * (a + b)
        tol1 = sqrt_eps * abs(xf) + xatol / 3.0
        tol2 = 2.0 * tol1
        if num >= maxfun:
            break
    return xf, fx


class LossContext:
    """Dataset + working model + temperature, callable on raw coefficient vectors.

    ``ctx(theta)`` returns the mean loss and ``ctx.per_sample(theta)`` the
    vector of ``l_i``. ``theta`` is used as given (no normalization), which
    the coordinate search relies on.
    """

    def __init__(
        self,
        ds: Dataset,
        q: Optional[QModel] = None,
        tau: float = DEFAULT_TAU,
        weighted: bool = True,
        wbar_floor: float = WBAR_FLOOR,
        u_override=None,
    ):
        if q is None:
            q = zero_q_model(BasisSpec("linear", ds.d), ds.T)
        if q.T != ds.T or q.basis.d != ds.d:
            raise ValueError("Q model and dataset disagree on horizon or dimension")
        if not tau > 0:
            raise ValueError("tau must be positive")
        self.ds = ds
        self.q = q
        self.tau = float(tau)
        self.weighted = bool(weighted)
        self.wbar_floor = float(wbar_floor)
        self.n, self.T, self.d = ds.n, ds.T, ds.d
        self._X, self._A, self._R, self._mu = ds.X, ds.A, ds.R, ds.mu
        self._inv_mu = np.ascontiguousarray(1.0 / ds.mu)
        self._X2 = np.ascontiguousarray(ds.X.reshape(-1, ds.d))
        self._A = np.ascontiguousarray(ds.A)
        # u_override(pi_plus, q_plus, q_minus) replaces the policy mixture; test hook only
        self._u_override = u_override
        if q.is_zero:
            self._zero = True
            self._resid = self._R
            self._q_plus = self._q_minus = None
        else:
            self._zero = False
            q_obs, self._q_plus, self._q_minus = q.stage_predictions(ds)
            self._resid = self._R - q_obs
        self._resid = np.ascontiguousarray(self._resid, dtype=float)
        self._qp = np.zeros((1, 1)) if self._zero else np.ascontiguousarray(self._q_plus)
        self._qm = np.zeros((1, 1)) if self._zero else np.ascontiguousarray(self._q_minus)
        self._buf = np.empty(self.n)

    def subset(self, idx) -> "LossContext":
        return LossContext(self.ds.subset(idx), self.q, self.tau, self.weighted, self.wbar_floor, self._u_override)

    def with_mode(self, weighted: bool) -> "LossContext":
        return LossContext(self.ds, self.q, self.tau, weighted, self.wbar_floor, self._u_override)

    def linear_index(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return (theta[0] + self._X2 @ theta[1:]).reshape(self.n, self.T)

    def _eval(self, g, out) -> float:
        return _loss_kernel(g, self._A, self._resid, self._qp, self._qm, self._inv_mu, self.tau,
                            self.weighted, self.wbar_floor, self._zero, out)

    def per_sample(self, theta) -> np.ndarray:
        if self._u_override is not None:
            return self._per_sample_numpy(theta)
        out = np.empty(self.n)
        self._eval(self.linear_index(theta), out)
        return out

    def __call__(self, theta) -> float:
        if self._u_override is not None:
            return float(np.mean(self._per_sample_numpy(theta)))
        return float(self._eval(self.linear_index(theta), self._buf))

    def along(self, theta, j: int):
        """Fast ``t -> self(theta with theta[j] = t)`` for coordinate searches."""
        if self._u_override is not None:
            base = np.array(theta, dtype=float)

            def f_slow(t):
                base[j] = t
                return self(base)

            return f_slow
        theta = np.array(theta, dtype=float)
        theta[j] = 0.0
        g0 = self.linear_index(theta)
        col = np.ones((self.n, self.T)) if j == 0 else np.ascontiguousarray(self.ds.X[:, :, j - 1])
        buf = self._buf

        def f(t):
            return float(self._eval(g0 + t * col, buf))

        return f

    def line_minimize(self, theta, j: int, lo: float, hi: float, xatol: float, maxiter: int):
        """Bounded 1-d minimization over ``theta[j]`` in ``[lo, hi]``; returns ``(t, f(t))``.

        Returns ``None`` when the negative-control hook is active, so callers
        fall back to a generic search over :meth:`along`.
        """
        if self._u_override is not None:
            return None
        theta = np.array(theta, dtype=float)
        theta[j] = 0.0
        g0 = self.linear_index(theta)
        col = np.ones((self.n, self.T)) if j == 0 else np.ascontiguousarray(self.ds.X[:, :, j - 1])
        t, f = _bounded_brent(float(lo), float(hi), float(xatol), int(maxiter), g0, col, self._A, self._resid,
                              self._qp, self._qm, self._inv_mu, self.tau, self.weighted, self.wbar_floor,
                              self._zero, self._buf)
        return float(t), float(f)

    def _per_sample_numpy(self, theta) -> np.ndarray:
        """Reference implementation (array ops); also serves the test hook."""
        theta = np.asarray(theta, dtype=float)
        g = theta[0] + self._X @ theta[1:]
        u = g / self.tau
        cum = np.cumsum(-np.logaddexp(0.0, -self._A * u) - np.log(self._mu), axis=1)
        rho = np.exp(cum)
        if self.weighted:
            rho = rho / np.maximum(rho.mean(axis=0), self.wbar_floor)
        terms = rho * self._resid
        if not self._zero:
            pi_plus = logistic(u)
            if self._u_override is None:
                U = self._q_minus + pi_plus * (self._q_plus - self._q_minus)
            else:
                U = self._u_override(pi_plus, self._q_plus, self._q_minus)
            prev = np.empty_like(rho)
            prev[:, 0] = 1.0
            prev[:, 1:] = rho[:, :-1]
            terms = terms + prev * U
        return -terms.sum(axis=1)

    def value(self, theta) -> float:
        return -self(theta)


def per_sample_loss(ctx: LossContext, p: PolicyParams, i: int) -> float:
    return float(ctx.per_sample(p.theta)[i])


def loss(ctx: LossContext, p: PolicyParams) -> float:
    return ctx(p.theta)


def value_estimate(ctx: LossContext, p: PolicyParams) -> float:
    return -ctx(p.theta)


@dataclass(frozen=True)
class UnbiasednessReport:
    mean_estimate: float
    se_estimate: float
    rollout_value: float
    rollout_se: float
    z_score: float
    reps: int

    @property
    def passed(self) -> bool:
        return abs(self.z_score) <= 3.0


def value_unbiasedness_check(scenario, p: PolicyParams, q=None, reps: int = 500, n_rollout: int = 200_000,
                             seed: int = 0, u_override=None) -> UnbiasednessReport:
    """Compare the mean unweighted estimate over fresh datasets with the rollout value.

    ``q`` is a fixed :class:`QModel`, ``None`` for the zero model, or a
    callable ``ds -> QModel`` refitted on every replicate dataset. The
    z-score combines the replicate standard error with the rollout one.
    """
    from mstp.simulation import generate, mc_value
    from mstp.seeding import derive_seed_sequence

    est = np.empty(reps)
    for r in range(reps):
        ds = generate(scenario, seed=derive_seed_sequence(scenario.seed, "unbiasedness", r))
        q_r = q(ds) if callable(q) else q
        ctx = LossContext(ds, q_r, p.tau, weighted=False, u_override=u_override)
        est[r] = ctx.value(p.theta)
    mean = float(est.mean())
    se = float(est.std(ddof=1) / np.sqrt(reps))
    v, v_se = mc_value(p, scenario, n_rollout, seed=derive_seed_sequence(seed, "rollout"))
    z = (mean - v) / np.sqrt(se ** 2 + v_se ** 2) if (se > 0 or v_se > 0) else 0.0
    return UnbiasednessReport(mean, se, v, v_se, float(z), reps)
