import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from mstp.data import Dataset
from mstp.experiment import reference_optimum
from mstp.importance import compute_ratios
from mstp.loss import LossContext, loss, per_sample_loss, value_estimate, value_unbiasedness_check
from mstp.nuisance import BasisSpec, QModel, fit_q, zero_q_model
from mstp.policy import PolicyParams
from mstp.simulation import ScenarioSpec, generate, mc_value

import oracles


def unit(v):
    return np.asarray(v, float) / np.linalg.norm(v)


def random_dataset(seed, n=6, T=2, d=2, mu_random=True):
    rng = np.random.default_rng(seed)
    mu = rng.uniform(0.2, 0.9, (n, T)) if mu_random else np.full((n, T), 0.5)
    return Dataset(rng.standard_normal((n, T, d)), rng.choice([-1.0, 1.0], (n, T)), rng.standard_normal((n, T)), mu)


def random_q(seed, d, T):
    basis = BasisSpec("linear", d)
    return QModel(basis, np.random.default_rng(seed + 1).standard_normal((T, 2 * basis.dim)))


def test_zero_q_single_stage_is_weighted_ipw():
    ds = random_dataset(0, T=1)
    p = PolicyParams(unit([0.2, 0.7, -0.4]))
    tab = compute_ratios(p, ds)
    expected = -(tab.rho[:, 0] / tab.wbar[1]) * ds.R[:, 0]
    got = LossContext(ds).per_sample(p.theta)
    assert np.allclose(got, expected, rtol=1e-13, atol=1e-15)
    assert per_sample_loss(LossContext(ds), p, 3) == pytest.approx(expected[3], rel=1e-13)


def test_zero_rewards_and_zero_q_give_zero():
    ds = random_dataset(1)
    ds = Dataset(ds.X, ds.A, np.zeros_like(ds.R), ds.mu)
    p = PolicyParams(unit([1, -2, 0.5]))
    for weighted in (True, False):
        assert np.array_equal(LossContext(ds, weighted=weighted).per_sample(p.theta), np.zeros(ds.n))


def test_hand_expansion_constant_q():
    X = np.array([[[0.5, -1.0], [1.5, 0.2]], [[-0.3, 0.8], [0.0, -2.0]]])
    A = np.array([[1.0, -1.0], [-1.0, -1.0]])
    R = np.array([[1.0, 0.5], [-0.2, 2.0]])
    mu = np.array([[0.5, 0.4], [0.7, 0.5]])
    ds = Dataset(X, A, R, mu)
    c = 0.75
    basis = BasisSpec("linear", 2)
    beta = np.zeros((2, 6))
    beta[:, 0] = c
    q = QModel(basis, beta)
    theta = unit([0.3, 0.5, -0.2])
    tau = 0.7
    qc = np.full((2, 2), c)
    for weighted in (True, False):
        ref = oracles.aipw_loss_by_hand(theta, tau, X, A, R, mu, qc, qc, weighted=weighted)
        got = LossContext(ds, q, tau, weighted=weighted).per_sample(theta)
        assert np.max(np.abs(got - ref)) <= 1e-12


@given(st.integers(0, 10_000), st.integers(2, 8), st.integers(1, 3), st.booleans(), st.floats(0.05, 2.0))
def test_matches_hand_expansion(seed, n, T, weighted, tau):
    ds = random_dataset(seed, n=n, T=T)
    q = random_q(seed, ds.d, T)
    _, qp, qm = q.stage_predictions(ds)
    theta = unit(np.random.default_rng(seed).standard_normal(ds.d + 1))
    ref = oracles.aipw_loss_by_hand(theta, tau, ds.X, ds.A, ds.R, ds.mu, qp, qm, weighted=weighted)
    got = LossContext(ds, q, tau, weighted=weighted).per_sample(theta)
    assert np.allclose(got, ref, rtol=1e-11, atol=1e-11)


@given(st.integers(0, 10_000), st.integers(1, 3), st.booleans(), st.booleans())
def test_compiled_kernel_matches_reference(seed, T, weighted, zero):
    ds = random_dataset(seed, n=12, T=T, d=3)
    q = zero_q_model(BasisSpec("linear", 3), T) if zero else random_q(seed, 3, T)
    ctx = LossContext(ds, q, 0.1, weighted=weighted)
    theta = unit(np.random.default_rng(seed + 7).standard_normal(4))
    ref = ctx._per_sample_numpy(theta)
    assert np.allclose(ctx.per_sample(theta), ref, rtol=1e-10, atol=1e-12)
    assert ctx(theta) == pytest.approx(float(ref.mean()), rel=1e-10, abs=1e-12)


def test_on_policy_zero_q_is_mean_total_reward():
    ds = random_dataset(2, n=9, T=3, mu_random=False)
    on = Dataset(np.zeros_like(ds.X), ds.A, ds.R, ds.mu)
    p = PolicyParams(np.array([0.0, 0.6, 0.8]))
    for weighted in (True, False):
        ctx = LossContext(on, None, 0.1, weighted)
        assert loss(ctx, p) == pytest.approx(-on.R.sum(axis=1).mean(), rel=1e-14, abs=1e-15)


def test_weighted_single_subject_ignores_theta():
    # the dataset type needs two subjects; two copies of one subject behave like n = 1
    ds = random_dataset(3, n=2, T=3)
    twin = ds.subset([0, 0])
    for v in ([1, 0, 0], [0.2, -0.9, 0.3], [-1, 1, 1]):
        assert loss(LossContext(twin), PolicyParams(unit(v))) == pytest.approx(-twin.R[0].sum(), rel=1e-13)


@given(st.integers(0, 10_000))
def test_permutation_invariance(seed):
    ds = random_dataset(seed, n=10, T=2)
    q = random_q(seed, ds.d, 2)
    perm = np.random.default_rng(seed).permutation(ds.n)
    theta = unit([0.4, -0.3, 0.8])
    a = LossContext(ds, q)(theta)
    b = LossContext(ds.subset(perm), q)(theta)
    assert a == pytest.approx(b, rel=1e-13, abs=1e-15)


def test_zero_q_model_is_the_initial_objective():
    ds = random_dataset(4, n=20, T=2)
    theta = unit([0.1, 0.9, -0.2])
    a = LossContext(ds, None)
    b = LossContext(ds, zero_q_model(BasisSpec("linear", ds.d), ds.T))
    assert a(theta) == b(theta)


def test_along_matches_full_evaluation():
    ds = random_dataset(5, n=15, T=2)
    ctx = LossContext(ds, random_q(5, ds.d, 2))
    theta = unit([0.3, -0.6, 0.7])
    for j in range(3):
        f = ctx.along(theta, j)
        for t in (-0.8, 0.0, 0.35):
            moved = theta.copy()
            moved[j] = t
            assert f(t) == pytest.approx(ctx(moved), rel=1e-13, abs=1e-15)


def test_compiled_line_search_equals_scipy():
    ds = generate(ScenarioSpec(scenario=2, n=120, d=5, T=2), seed=4)
    ctx = LossContext(ds, fit_q("q1", ds))
    theta = unit([0.5, 0.2, -0.1, 0.3, 0.0, 0.4])
    for j in range(6):
        lo, hi = theta[j] - 1.0, theta[j] + 1.0
        t, ft = ctx.line_minimize(theta, j, lo, hi, 1e-8, 50)
        ref = minimize_scalar(ctx.along(theta, j), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-8, "maxiter": 50})
        assert t == ref.x and ft == ref.fun


def test_value_estimate_is_negative_loss():
    ds = random_dataset(6)
    ctx = LossContext(ds, random_q(6, ds.d, ds.T))
    p = PolicyParams(unit([1, 2, 3]))
    assert value_estimate(ctx, p) == -loss(ctx, p)


def test_context_rejects_mismatched_q():
    ds = random_dataset(7, T=2)
    with pytest.raises(ValueError):
        LossContext(ds, random_q(7, ds.d, 3))
    with pytest.raises(ValueError):
        LossContext(ds, tau=0.0)


def large_scenario1():
    spec = ScenarioSpec(scenario=1, n=100_000, d=2, T=1)
    p = PolicyParams(unit(reference_optimum(spec)))
    ds = generate(spec, seed=21)
    per = -LossContext(ds, None, p.tau, weighted=False).per_sample(p.theta)
    return spec, p, per


def test_large_sample_value_matches_rollout():
    spec, p, per = large_scenario1()
    v, v_se = mc_value(p, spec, 200_000, seed=22)
    se = per.std(ddof=1) / np.sqrt(per.size)
    assert abs(per.mean() - v) <= 3 * np.hypot(se, v_se)


@pytest.mark.xfail(strict=True, reason="the scenario-1 dynamics give a value near 0.58 at the reference "
                                      "optimum, outside the 0.46 to 0.50 band")
def test_large_sample_value_magnitude_scenario1():
    _, _, per = large_scenario1()
    assert 0.46 <= per.mean() <= 0.50


def test_on_policy_check_is_trivially_unbiased():
    spec = ScenarioSpec(scenario=2, n=50, d=2, T=2)
    # intercept-only policy with a huge tau is numerically the 50/50 behavior policy
    p = PolicyParams(np.array([1.0, 0.0, 0.0]), tau=1e12)
    rep = value_unbiasedness_check(spec, p, None, reps=200, n_rollout=20_000, seed=1)
    assert rep.passed


def test_corrupted_mixture_is_detected():
    spec = ScenarioSpec(scenario=2, n=200, d=5, T=1)
    p = PolicyParams(unit(reference_optimum(spec)))
    q = fit_q("q1", generate(spec.with_(n=5000), seed=99))
    honest = value_unbiasedness_check(spec, p, q, reps=200, n_rollout=50_000, seed=2)
    broken = value_unbiasedness_check(spec, p, q, reps=200, n_rollout=50_000, seed=2,
                                      u_override=lambda pi_plus, q_plus, q_minus: q_plus)
    assert honest.passed
    assert abs(broken.z_score) > 3
