"""Independent reference implementations used to check the package.

None of these call into the code they check. They are slow and only meant
for small problems.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import minimize


# -- Dantzig program by vertex enumeration ---------------------------------

def dantzig_vertex_oracle(H, c, lam):
    """Minimum-l1 ``w`` with ``|c - H w|_inf <= lam`` by enumerating vertices.

    Writes ``w = u - v`` with ``u, v >= 0``. The feasible polyhedron in
    ``(u, v)`` has no lines, so a bounded LP attains its optimum at a vertex:
    a point where ``2m`` linearly independent constraints are active.
    Returns ``(objective, w)``.
    """
    H = np.atleast_2d(np.asarray(H, float))
    c = np.asarray(c, float)
    m = c.size
    # rows of G z <= h, z = (u, v)
    G = np.vstack([np.hstack([-H, H]), np.hstack([H, -H]), -np.eye(2 * m)])
    h = np.concatenate([lam - c, lam + c, np.zeros(2 * m)])
    best, best_w = math.inf, None
    for rows in itertools.combinations(range(G.shape[0]), 2 * m):
        A = G[list(rows)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        z = np.linalg.solve(A, h[list(rows)])
        if np.all(G @ z <= h + 1e-9):
            obj = float(z.sum())
            if obj < best:
                best, best_w = obj, z[:m] - z[m:]
    return best, best_w


# -- lasso -----------------------------------------------------------------

def lasso_orthogonal(X, y, lam):
    """Closed form when ``X'X / n = I`` for ``(1/n)|y - Xb|^2 + lam |b|_1``."""
    n = X.shape[0]
    z = X.T @ y / n
    return np.sign(z) * np.maximum(np.abs(z) - lam / 2.0, 0.0)


def lasso_split_oracle(X, y, lam, pf=None):
    """Same objective as a smooth bound-constrained problem in ``(b+, b-)``."""
    n, p = X.shape
    pf = np.ones(p) if pf is None else np.asarray(pf, float)

    def f(z):
        b = z[:p] - z[p:]
        r = y - X @ b
        val = r @ r / n + lam * pf @ (z[:p] + z[p:])
        g = -2.0 * X.T @ r / n
        return val, np.concatenate([g + lam * pf, -g + lam * pf])

    res = minimize(f, np.zeros(2 * p), jac=True, method="L-BFGS-B", bounds=[(0, None)] * (2 * p),
                   options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 20000})
    return res.x[:p] - res.x[p:]


def lasso_proximal_oracle(X, y, lam, iters=100_000):
    """Plain proximal gradient (ISTA) with the exact Lipschitz step."""
    n, p = X.shape
    L = 2.0 * np.linalg.eigvalsh(X.T @ X / n).max()
    b = np.zeros(p)
    for _ in range(iters):
        z = b + (2.0 / n) * X.T @ (y - X @ b) / L
        b = np.sign(z) * np.maximum(np.abs(z) - lam / L, 0.0)
    return b


def lasso_objective(X, y, lam, b, pf=None):
    pf = np.ones(X.shape[1]) if pf is None else pf
    r = y - X @ b
    return float(r @ r / X.shape[0] + lam * np.sum(pf * np.abs(b)))


def _grid_argmin(f, axes):
    """Best point of the product grid ``axes``, evaluated one slice of the first axis at a time."""
    rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), -1).reshape(-1, len(axes) - 1) if len(axes) > 1 \
        else np.zeros((1, 0))
    best_v, best = np.inf, None
    for a in axes[0]:
        pts = np.hstack([np.full((rest.shape[0], 1), a), rest])
        v = f(pts)
        k = int(np.argmin(v))
        if v[k] < best_v:
            best_v, best = v[k], pts[k]
    return best


def grid_minimize(f, dim, lo=-2.0, hi=2.0, step=1e-3, final_step=1e-8):
    """Brute-force minimizer of a convex ``f`` over a box.

    A full grid at ``step`` (``f`` takes an (m, dim) array), then repeated
    41-point grids around the incumbent, each 10x finer.
    """
    ticks = np.arange(lo, hi + step / 2, step)
    best = _grid_argmin(f, [ticks] * dim)
    h = step
    while h > final_step:
        h /= 10.0
        local = np.arange(-20, 21) * h
        best = _grid_argmin(f, [b + local for b in best])
    return best


# -- sphere derivatives by Richardson extrapolation ------------------------

def sphere_path(theta, coords: dict):
    """``theta`` with ``coords`` replaced and the intercept re-solved onto the sphere."""
    out = np.array(theta, float)
    for k, v in coords.items():
        out[k] = v
    rest = float(np.sum(out[1:] ** 2))
    s0 = 1.0 if theta[0] >= 0 else -1.0
    out[0] = s0 * math.sqrt(max(1.0 - rest, 0.0))
    return out


def _richardson(D, h0, levels=5):
    """Romberg table on an even-order-error difference quotient ``D(h)``."""
    table = [[D(h0 / 2 ** i)] for i in range(levels)]
    for i in range(1, levels):
        for k in range(1, i + 1):
            f = 4.0 ** k
            table[i].append((f * table[i][k - 1] - table[i - 1][k - 1]) / (f - 1.0))
    return table[-1][-1]


def richardson_gradient(f, theta, j, h0=0.05):
    t = theta[j]
    phi = lambda v: f(sphere_path(theta, {j: v}))
    return _richardson(lambda h: (phi(t + h) - phi(t - h)) / (2 * h), h0)


def richardson_hessian(f, theta, j, k, h0=0.05):
    if j == k:
        t = theta[j]
        phi = lambda v: f(sphere_path(theta, {j: v}))
        return _richardson(lambda h: (phi(t + h) - 2 * phi(t) + phi(t - h)) / (h * h), h0)
    a, b = theta[j], theta[k]
    psi = lambda u, v: f(sphere_path(theta, {j: u, k: v}))
    return _richardson(
        lambda h: (psi(a + h, b + h) - psi(a + h, b - h) - psi(a - h, b + h) + psi(a - h, b - h)) / (4 * h * h), h0
    )


def smooth_objective(seed, p):
    """A smooth non-quadratic test function of a length-``p`` vector."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(p)
    M = rng.standard_normal((p, p))
    M = M + M.T
    b = rng.standard_normal(p)

    def f(theta):
        theta = np.asarray(theta, float)
        return float(a @ theta + 0.5 * theta @ M @ theta + np.sin(b @ theta) + np.exp(0.3 * theta[-1]))

    return f


# -- loss by direct expansion ----------------------------------------------

def aipw_loss_by_hand(theta, tau, X, A, R, mu, qp, qm, weighted=True, floor=1e-12):
    """Loss computed stage by stage with explicit Python loops.

    ``qp``/``qm`` are Q predictions at actions +1/-1, shape (n, T); each
    stage pairs its own reward with its own Q prediction.
    """
    n, T = A.shape
    pi = np.empty((n, T))
    pplus = np.empty((n, T))
    for i in range(n):
        for t in range(T):
            g = theta[0] + sum(theta[k + 1] * X[i, t, k] for k in range(X.shape[2]))
            p_plus = 1.0 / (1.0 + math.exp(-g / tau))
            pplus[i, t] = p_plus
            pi[i, t] = p_plus if A[i, t] == 1 else 1.0 - p_plus
    ratio = np.ones((n, T + 1))
    for i in range(n):
        for t in range(T):
            ratio[i, t + 1] = ratio[i, t] * pi[i, t] / mu[i, t]
    if weighted:
        for t in range(1, T + 1):
            wbar = max(ratio[:, t].mean(), floor)
            ratio[:, t] = ratio[:, t] / wbar
    out = np.empty(n)
    for i in range(n):
        total = 0.0
        for t in range(T):
            q_obs = qp[i, t] if A[i, t] == 1 else qm[i, t]
            u = pplus[i, t] * qp[i, t] + (1.0 - pplus[i, t]) * qm[i, t]
            total += ratio[i, t + 1] * (R[i, t] - q_obs) + ratio[i, t] * u
        out[i] = -total
    return out
