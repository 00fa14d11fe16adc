"""Finite-difference derivatives of a loss restricted to the unit sphere.

Coordinate 0 (the intercept) is never perturbed directly. A step in slope
``j`` (or in slopes ``j`` and ``k``) is compensated by moving the intercept
so that every probe point stays on the sphere::

    theta_0 = sgn(theta_0) * sqrt(1 - sum of the other squared slopes)

so the derivatives are taken along that compensated path. The default
step is ``1 / sqrt(n T)``, shortened when the sphere leaves no room.

When the intercept is exactly zero there is no room for a symmetric step
and one-sided (Newton) quotients that shrink the perturbed slopes are used.
When the perturbed slopes are themselves zero the quotient is evaluated at a
nearby surrogate point where one of the other branches applies.

Objectives may return scalars or arrays (e.g. per-sample losses); all
quotients are elementwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from mstp.policy import sgn


@dataclass(frozen=True)
class Probe:
    """A finite-difference stencil: ``sum(coef * f(point)) / denom``."""

    points: tuple
    coefs: tuple
    denom: float
    branch: str

    def apply(self, objective: Callable):
        vals = [objective(p) for p in self.points]
        if len(vals) == 4:
            # (f1 + f4) - (f2 + f3) keeps the mixed quotient symmetric in (j, k)
            num = (vals[0] + vals[3]) - (vals[1] + vals[2])
        else:
            num = sum(c * v for c, v in zip(self.coefs, vals))
        return num / self.denom


def default_step(n: int, T: int) -> float:
    return 1.0 / math.sqrt(n * T)


def _unit(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    norm = np.linalg.norm(theta)
    if not norm > 0:
        raise ValueError("theta must be non-zero")
    return theta / norm


def _rest_sq(theta, exclude) -> float:
    """Sum of squared slopes outside ``exclude``, accumulated in index order."""
    s = 0.0
    for l in range(1, theta.size):
        if l not in exclude:
            s += theta[l] * theta[l]
    return s


def _point(theta, sign0, rest, moved: dict) -> np.ndarray:
    out = theta.copy()
    sq = 0.0
    for v in moved.values():
        sq = sq + v * v
    for l, v in moved.items():
        out[l] = v
    out[0] = sign0 * math.sqrt(max(1.0 - rest - sq, 0.0))
    return out


def _surrogate(theta, coords, step) -> np.ndarray:
    """Point with intercept 0, ``coords`` set to ``step`` and the other slopes shrunk."""
    out = theta.copy()
    shrink = math.sqrt(1.0 - len(coords) * step * step)
    for l in range(1, theta.size):
        out[l] = theta[l] * shrink
    for l in coords:
        out[l] = step
    out[0] = 0.0
    return out


def gradient_probe(theta, j: int, step: float) -> Probe:
    """Stencil for the derivative in slope ``j`` (``1 <= j <= d``)."""
    theta = _unit(theta)
    if not 1 <= j < theta.size:
        raise IndexError("gradient coordinate must be a slope index")
    s0 = float(sgn(theta[0]))
    rest = _rest_sq(theta, (j,))
    room = math.sqrt(max(1.0 - rest, 0.0)) - abs(theta[j])
    h = min(step, room)
    if theta[0] != 0 and h > 0:
        plus = _point(theta, s0, rest, {j: theta[j] + h})
        minus = _point(theta, s0, rest, {j: theta[j] - h})
        return Probe((plus, minus), (1.0, -1.0), 2.0 * h, "symmetric")
    if theta[j] != 0:
        h = min(step, 2.0 * abs(theta[j]))
        sj = float(sgn(theta[j]))
        plus = _point(theta, s0, rest, {j: theta[j] - h * sj})
        return Probe((plus, theta.copy()), (1.0, -1.0), -h * sj, "newton")
    inner = gradient_probe(_surrogate(theta, (j,), step), j, step)
    return Probe(inner.points, inner.coefs, inner.denom, "surrogate-" + inner.branch)


def hessian_probe(theta, j: int, k: int, step: float) -> Probe:
    """Stencil for the second derivative in slopes ``j`` and ``k``."""
    theta = _unit(theta)
    p = theta.size
    if not (1 <= j < p and 1 <= k < p):
        raise IndexError("hessian coordinates must be slope indices")
    s0 = float(sgn(theta[0]))
    if j == k:
        rest = _rest_sq(theta, (j,))
        room = 0.5 * (math.sqrt(max(1.0 - rest, 0.0)) - abs(theta[j]))
        h = min(step, room)
        if theta[0] != 0 and h > 0:
            up = _point(theta, s0, rest, {j: theta[j] + 2.0 * h})
            mid = _point(theta, s0, rest, {j: theta[j]})
            down = _point(theta, s0, rest, {j: theta[j] - 2.0 * h})
            return Probe((up, mid, down), (1.0, -2.0, 1.0), (2.0 * h) ** 2, "symmetric")
        if theta[j] != 0:
            h = min(step, abs(theta[j]))
            sj = float(sgn(theta[j]))
            far = _point(theta, s0, rest, {j: theta[j] - 2.0 * h * sj})
            near = _point(theta, s0, rest, {j: theta[j] - h * sj})
            return Probe((far, near, theta.copy()), (1.0, -2.0, 1.0), h * h, "newton")
        inner = hessian_probe(_surrogate(theta, (j,), step), j, j, step)
        return Probe(inner.points, inner.coefs, inner.denom, "surrogate-" + inner.branch)

    lo, hi = min(j, k), max(j, k)
    rest = _rest_sq(theta, (lo, hi))
    slopes = math.sqrt(_rest_sq(theta, ()))
    h = min(step, (1.0 - slopes) / math.sqrt(2.0))
    if theta[0] != 0 and h > 0:
        tl, th = theta[lo], theta[hi]
        pp = _point(theta, s0, rest, {lo: tl + h, hi: th + h})
        pm = _point(theta, s0, rest, {lo: tl + h, hi: th - h})
        mp = _point(theta, s0, rest, {lo: tl - h, hi: th + h})
        mm = _point(theta, s0, rest, {lo: tl - h, hi: th - h})
        return Probe((pp, pm, mp, mm), (1.0, -1.0, -1.0, 1.0), (2.0 * h) ** 2, "symmetric")
    if theta[lo] != 0 and theta[hi] != 0:
        h = min(step, 2.0 * abs(theta[lo]), 2.0 * abs(theta[hi]))
        sl, sh = float(sgn(theta[lo])), float(sgn(theta[hi]))
        nl, nh = theta[lo] - h * sl, theta[hi] - h * sh
        both = _point(theta, s0, rest, {lo: nl, hi: nh})
        only_lo = _point(theta, s0, rest, {lo: nl, hi: theta[hi]})
        only_hi = _point(theta, s0, rest, {lo: theta[lo], hi: nh})
        return Probe((both, only_lo, only_hi, theta.copy()), (1.0, -1.0, -1.0, 1.0), (h * sl) * (h * sh), "newton")
    if theta[lo] == 0 and theta[hi] == 0:
        sur = _surrogate(theta, (lo, hi), step)
    elif theta[lo] == 0:
        sur = _surrogate(theta, (lo,), step)
    else:
        sur = _surrogate(theta, (hi,), step)
    inner = hessian_probe(sur, lo, hi, step)
    return Probe(inner.points, inner.coefs, inner.denom, "surrogate-" + inner.branch)


def numeric_gradient(objective: Callable, theta, n: int, T: int, j: int, step: Optional[float] = None):
    """Derivative of ``objective`` in slope ``j`` along the sphere."""
    step = default_step(n, T) if step is None else step
    return gradient_probe(theta, j, step).apply(objective)


def numeric_hessian(objective: Callable, theta, n: int, T: int, j: int, k: int, step: Optional[float] = None):
    """Second derivative of ``objective`` in slopes ``j`` and ``k`` along the sphere."""
    step = default_step(n, T) if step is None else step
    return hessian_probe(theta, j, k, step).apply(objective)


def gradient_vector(objective: Callable, theta, n: int, T: int, step: Optional[float] = None) -> np.ndarray:
    """All slope derivatives, shape (d,) for scalar objectives or (d, ...) otherwise."""
    theta = _unit(theta)
    return np.array([numeric_gradient(objective, theta, n, T, j, step) for j in range(1, theta.size)])


def hessian_matrix(objective: Callable, theta, n: int, T: int, step: Optional[float] = None) -> np.ndarray:
    """Symmetric (d, d) matrix of slope second derivatives.

    Entry (j, k) is computed once for j <= k and mirrored, and objective
    values are cached by probe point since stencils share many of them.
    """
    theta = _unit(theta)
    d = theta.size - 1
    cache = {}

    def f(point):
        key = point.tobytes()
        if key not in cache:
            cache[key] = objective(point)
        return cache[key]

    H = np.empty((d, d))
    for j in range(1, d + 1):
        for k in range(j, d + 1):
            H[j - 1, k - 1] = H[k - 1, j - 1] = numeric_hessian(f, theta, n, T, j, k, step)
    return H
