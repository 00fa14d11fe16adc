import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mstp.data import Dataset
from mstp.errors import NumericError
from mstp.experiment import reference_optimum
from mstp.loss import LossContext
from mstp.nuisance import BasisSpec, fit_q, zero_q_model
from mstp.optimizer import (OptimizerConfig, SparseEstimate, coordinate_descent_sphere, estimate_initial,
                            estimate_sparse, fit_at_lambda, refit_on_support)
from mstp.simulation import ScenarioSpec, generate

def e0(p):
    v = np.zeros(p)
    v[0] = 1.0
    return v


def distance_objective(c):
    c = np.asarray(c, float)
    return lambda theta: float(np.sum((np.asarray(theta) - c) ** 2))


def quadratic_objective(seed, p):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((p, p))
    M = M @ M.T + np.eye(p)
    b = rng.standard_normal(p)
    return lambda theta: float(np.asarray(theta) @ M @ np.asarray(theta) + b @ np.asarray(theta))


def small_problem(seed=0, n=150, d=4, T=1, scenario=2):
    ds = generate(ScenarioSpec(scenario=scenario, n=n, d=d, T=T), seed=seed)
    return ds, LossContext(ds)


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(tol=0.0)
    with pytest.raises(ValueError):
        OptimizerConfig(max_iter=0)
    with pytest.raises(ValueError):
        OptimizerConfig(offsets=())


def test_estimate_rejects_non_unit_theta():
    with pytest.raises(ValueError):
        SparseEstimate(np.array([1.0, 1.0]), (), True, 0.0)
    est = SparseEstimate(np.array([0.6, 0.0, -0.8]), (), True, 0.0)
    assert est.support == (0, 2)


def test_huge_lambda_gives_intercept_only():
    _, ctx = small_problem()
    est = coordinate_descent_sphere(ctx, OptimizerConfig(), e0(5), lam=1e3)
    assert np.array_equal(np.abs(est.theta), e0(5))
    assert est.support == (0,)


TOY_CENTERS = [[0.5, 1.0, -0.3], [-2.0, 0.1, 0.4, 1.0], [0.2, -0.2, 0.9, -0.5, 0.3]]


@pytest.mark.parametrize("c", TOY_CENTERS)
def test_distance_toy_converges_to_projection(c):
    c = np.asarray(c) / np.linalg.norm(c)
    est = coordinate_descent_sphere(distance_objective(c), OptimizerConfig(), e0(c.size), lam=0.0)
    assert np.linalg.norm(est.theta - c) < 1e-4


@pytest.mark.xfail(strict=True, reason="coordinate minimization evaluates the objective off the sphere, so for a "
                                      "center off the sphere the fixed point is not the projection")
def test_distance_toy_off_sphere_center():
    c = np.asarray(TOY_CENTERS[0])
    est = coordinate_descent_sphere(distance_objective(c), OptimizerConfig(), e0(c.size), lam=0.0)
    assert np.linalg.norm(est.theta - c / np.linalg.norm(c)) < 1e-4


def test_refit_full_support_matches_sphere_optimum():
    c = np.array([0.3, -1.2, 0.5, 0.8])
    theta, ok = refit_on_support(distance_objective(c), range(4), e0(4))
    assert ok
    assert np.linalg.norm(theta - c / np.linalg.norm(c)) < 1e-5


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_refit_single_coordinate_picks_better_pole(sign):
    f = distance_objective([sign * 0.7, 0.2, -0.1])
    theta, ok = refit_on_support(f, [0], np.array([0.6, 0.8, 0.0]))
    assert ok and np.array_equal(theta, sign * e0(3))


def test_refit_empty_support_returns_start_flagged():
    start = np.array([0.6, 0.8])
    theta, ok = refit_on_support(distance_objective([1, 0]), [], start)
    assert not ok and np.array_equal(theta, start)


@pytest.mark.parametrize("seed", range(3))
def test_refit_matches_restricted_grid(seed):
    f = quadratic_objective(seed, 4)
    support = [1, 3]
    angles = np.linspace(0.0, 2 * np.pi, 10_000, endpoint=False)
    grid = np.zeros((angles.size, 4))
    grid[:, 1], grid[:, 3] = np.cos(angles), np.sin(angles)
    best = grid[np.argmin([f(g) for g in grid])]
    theta, _ = refit_on_support(f, support, np.array([0.5, 0.5, 0.5, 0.5]))
    assert np.linalg.norm(theta - best) < 1e-3
    assert theta[0] == 0.0 and theta[2] == 0.0


@given(st.integers(0, 1000), st.sampled_from([0.0, 1e-3, 1e-2, 5e-2]))
def test_sweep_invariants(seed, lam):
    ds, ctx = small_problem(seed % 7, n=80, d=3, T=2)
    start = np.random.default_rng(seed).standard_normal(4)
    start /= np.linalg.norm(start)
    cfg = OptimizerConfig(max_iter=15)
    est = coordinate_descent_sphere(ctx, cfg, start, lam)
    assert abs(np.linalg.norm(est.theta) - 1.0) <= 1e-12
    assert est.n_iter <= cfg.max_iter
    assert len(est.history) == est.n_iter + 1
    assert est.objective <= est.history[0]
    assert est.objective == pytest.approx(min(est.history))


def test_every_update_stays_on_sphere():
    _, ctx = small_problem(3, n=60, d=3)
    norms = []

    class Recording:
        d = ctx.d

        def __call__(self, theta):
            return ctx(theta)

        def along(self, theta, j):
            # each 1-d search starts from the current renormalized iterate
            norms.append(np.linalg.norm(theta))
            return ctx.along(theta, j)

    coordinate_descent_sphere(Recording(), OptimizerConfig(max_iter=5), e0(4), 0.01)
    assert len(norms) > 4
    assert np.max(np.abs(np.array(norms) - 1.0)) <= 1e-12


def test_refit_not_worse_than_penalized_solution():
    for seed in range(3):
        _, ctx = small_problem(seed, n=200, d=6)
        est = fit_at_lambda(ctx, 0.01, OptimizerConfig())
        assert ctx(est.theta) <= ctx(est.penalized_theta) + 1e-8
        assert set(est.support) <= set(np.flatnonzero(est.penalized_theta))


def test_all_probes_non_finite_raises():
    with pytest.raises(NumericError):
        coordinate_descent_sphere(lambda th: np.nan, OptimizerConfig(), e0(3), 0.0)


def test_non_finite_probes_are_discarded():
    c = np.array([0.2, 0.9, -0.4])
    c /= np.linalg.norm(c)

    def f(theta):
        return np.inf if theta[0] > 1.3 else distance_objective(c)(theta)

    est = coordinate_descent_sphere(f, OptimizerConfig(), e0(3), 0.0)
    assert np.linalg.norm(est.theta - c) < 1e-4


def test_compiled_and_scipy_line_search_agree():
    _, ctx = small_problem(4, n=120, d=4, T=2)
    a = fit_at_lambda(ctx, 0.005, OptimizerConfig(compiled_line_search=True))
    b = fit_at_lambda(ctx, 0.005, OptimizerConfig(compiled_line_search=False))
    assert np.array_equal(a.theta, b.theta)


def test_determinism():
    ds, _ = small_problem(5, n=120, d=4)
    cfg = OptimizerConfig(lambdas=(1e-3, 1e-2, 5e-2), folds=3, seed=11)
    a = estimate_initial(ds, cfg)
    b = estimate_initial(ds, cfg)
    assert np.array_equal(a.theta, b.theta) and a.lam == b.lam and a.cv_errors == b.cv_errors


def test_zero_q_sparse_equals_initial():
    ds, _ = small_problem(6, n=120, d=4, T=2)
    cfg = OptimizerConfig(lambdas=(1e-3, 1e-2, 5e-2), folds=3, seed=2)
    a = estimate_initial(ds, cfg)
    b = estimate_sparse(ds, zero_q_model(BasisSpec("linear", ds.d), ds.T), cfg)
    assert np.array_equal(a.theta, b.theta) and a.lam == b.lam


def test_cv_records_grid_and_picks_minimum():
    ds, _ = small_problem(7, n=150, d=4)
    cfg = OptimizerConfig(lambdas=(1e-3, 1e-2, 5e-2), folds=3)
    est = estimate_initial(ds, cfg)
    assert est.cv_lambdas == cfg.lambdas
    errs = np.array(est.cv_errors)
    # ties go to the larger lambda
    assert est.lam == max(lam for lam, e in zip(cfg.lambdas, errs) if e == errs.min())


def test_single_lambda_skips_cv():
    ds, _ = small_problem(8)
    est = estimate_initial(ds, OptimizerConfig(lambdas=(0.02,)))
    assert est.lam == 0.02 and est.cv_errors == ()


@pytest.mark.parametrize("lam", [0.05, 0.1])
def test_flat_value_shrinks_slopes(lam):
    # constant rewards: every policy has the same value and the weighted loss is flat
    rng = np.random.default_rng(9)
    n, d = 400, 4
    ds = Dataset(rng.standard_normal((n, 1, d)), rng.choice([-1.0, 1.0], (n, 1)), np.full((n, 1), 0.7),
                 rng.uniform(0.3, 0.7, (n, 1)))
    est = estimate_initial(ds, OptimizerConfig(lambdas=(lam,)))
    assert est.converged
    assert est.support == (0,)


def test_recovers_direction_scenario2():
    spec = ScenarioSpec(scenario=2, n=800, d=5, T=1)
    ds = generate(spec, seed=12)
    est = estimate_sparse(ds, fit_q("q1", ds), OptimizerConfig(lambdas=(1e-3,)))
    star = reference_optimum(spec)
    assert np.degrees(np.arccos(abs(est.theta @ star) / np.linalg.norm(star))) < 20
