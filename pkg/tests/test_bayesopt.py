import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rydberg_ghz.bayesopt import (
    FitError, SearchSpace, ei_from_moments, expected_improvement, gp_fit, gp_posterior, hyperparameter_bounds,
    init_design, log_marginal_likelihood, matern52, propose_next, random_search, run_bo,
)
from rydberg_ghz.bayesopt import _factorize, _neg_lml_and_grad

UNIT6 = SearchSpace(np.zeros(6), np.ones(6))


def naive_posterior(model, xq):
    """Direct-inverse GP predictive equations in standardized units."""
    n = len(model.x)
    k = matern52(model.x, model.x, model.signal, model.lengths) + (model.noise + model.jitter * model.signal) * np.eye(n)
    kinv = np.linalg.inv(k)
    ks = matern52(xq, model.x, model.signal, model.lengths)
    mean = ks @ kinv @ model.y
    var = model.signal - np.einsum("ij,jk,ik->i", ks, kinv, ks)
    return model.y_mean + model.y_std * mean, var * model.y_std**2


def test_space_validation():
    with pytest.raises(ValueError):
        SearchSpace(np.array([0.0, 1.0]), np.array([1.0, 1.0]))
    sp = SearchSpace(np.array([-2.0, 0.0]), np.array([2.0, 10.0]))
    x = np.array([1.0, 2.5])
    np.testing.assert_allclose(sp.from_unit(sp.to_unit(x)), x)
    assert sp.contains(x) and not sp.contains([3.0, 0.0])


def test_lhs_strata():
    sp = SearchSpace(np.array([0.0] * 6), np.array([1.0, 2, 3, 4, 5, 6]))
    x = init_design(sp, 24, seed=5)
    u = sp.to_unit(x)
    for k in range(6):
        assert sorted(np.floor(u[:, k] * 24).astype(int)) == list(range(24))


def test_lhs_deterministic_and_single():
    a = init_design(UNIT6, 24, 3)
    assert np.array_equal(a, init_design(UNIT6, 24, 3))
    assert not np.array_equal(a, init_design(UNIT6, 24, 4))
    one = init_design(UNIT6, 1, 0)
    assert one.shape == (1, 6) and UNIT6.contains(one[0])
    with pytest.raises(ValueError):
        init_design(UNIT6, 0, 0)


def test_gp_interpolates_noise_free(rng):
    x = rng.random((15, 3))
    y = np.sin(4 * x[:, 0]) + x[:, 1] ** 2 - x[:, 2]
    model = gp_fit(x, y, seed=1)
    mean, var = gp_posterior(model, x)
    np.testing.assert_allclose(mean, y, atol=1e-6)
    assert np.all(var <= 1e-6)


def test_gp_constant_targets(rng):
    x = rng.random((10, 2))
    y = np.full(10, 0.37)
    model = gp_fit(x, y)
    mean, _ = gp_posterior(model, rng.random((20, 2)))
    np.testing.assert_allclose(mean, 0.37, atol=1e-6)


def test_gp_needs_two_points():
    with pytest.raises(ValueError):
        gp_fit(np.zeros((3, 2)), np.ones(3))


def test_gp_far_field(rng):
    x = rng.random((8, 2)) * 0.1
    y = rng.normal(size=8)
    model = gp_fit(x, y)
    far = np.array([[1e3, 1e3]])
    mean, var = gp_posterior(model, far)
    assert mean[0] == pytest.approx(model.y_mean, abs=1e-9)
    assert var[0] == pytest.approx(model.signal * model.y_std**2, rel=0.01)


def test_posterior_matches_direct_inverse(rng):
    for _ in range(5):
        x = rng.random((12, 4))
        y = rng.normal(size=12)
        model = gp_fit(x, y, n_restarts=3, seed=int(rng.integers(1000)))
        xq = rng.random((7, 4))
        mean, var = gp_posterior(model, xq)
        m2, v2 = naive_posterior(model, xq)
        np.testing.assert_allclose(mean, m2, atol=1e-8)
        np.testing.assert_allclose(var, np.maximum(v2, 0), atol=1e-8)


def test_fitted_likelihood_beats_random_draws(rng):
    x = rng.random((20, 3))
    y = np.cos(3 * x[:, 0]) * x[:, 1] + 0.1 * x[:, 2]
    model = gp_fit(x, y, seed=2)
    bounds = np.array(hyperparameter_bounds(3))
    for _ in range(100):
        theta = bounds[:, 0] + rng.random(5) * (bounds[:, 1] - bounds[:, 0])
        assert log_marginal_likelihood(x, model.y, theta) <= model.log_marginal_likelihood + 1e-9


def test_likelihood_gradient_matches_differences(rng):
    x = rng.random((10, 2))
    y = rng.normal(size=10)
    theta = np.array([0.3, -1.0, -0.5, -4.0])
    _, grad = _neg_lml_and_grad(theta, x, y)
    h = 1e-6
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        fd = (_neg_lml_and_grad(theta + e, x, y)[0] - _neg_lml_and_grad(theta - e, x, y)[0]) / (2 * h)
        assert grad[k] == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_likelihood_matches_dense_formula(rng):
    x = rng.random((9, 2))
    y = rng.normal(size=9)
    theta = np.array([0.1, -0.7, -1.2, -3.0])
    k = matern52(x, x, np.exp(theta[0]), np.exp(theta[1:3])) + np.exp(theta[3]) * np.eye(9)
    _, logdet = np.linalg.slogdet(k)
    want = -0.5 * y @ np.linalg.solve(k, y) - 0.5 * logdet - 4.5 * np.log(2 * np.pi)
    assert log_marginal_likelihood(x, y, theta) == pytest.approx(want, rel=1e-10)


def test_factorize_failure(rng):
    x = rng.random((3, 2))
    # a negative noise term makes the matrix indefinite beyond any jitter
    with pytest.raises(FitError):
        _factorize(x, np.zeros(3), 0.0, 1.0, 1.0, np.ones(2), -10.0, 0.0)


def test_factorized_kernel_exactly_symmetric(rng):
    # clustered near-duplicates at short length scales stress the distance cancellation
    x = np.vstack([0.5 + 1e-9 * rng.standard_normal((40, 6)), rng.random((160, 6))])
    lengths = np.full(6, 0.01)
    model = _factorize(x, rng.standard_normal(200), 0.0, 1.0, 1.0, lengths, 1e-6, 0.0)
    k = model.chol @ model.chol.T
    ref = matern52(x, x, 1.0, lengths) + (1e-6 + model.jitter) * np.eye(200)
    np.testing.assert_allclose(k, ref, atol=1e-9)
    assert np.array_equal(model.chol, np.tril(model.chol))


def test_ei_closed_form_cases():
    assert ei_from_moments(0.3, 0.0, 0.5) == 0.0
    assert ei_from_moments(0.7, 0.0, 0.5) == pytest.approx(0.2)
    assert ei_from_moments(0.5, 0.2, 0.5) == pytest.approx(0.2 / np.sqrt(2 * np.pi), rel=1e-14)


@pytest.mark.parametrize("mu,sigma,best,xi", [(0.2, 0.3, 0.4, 0.0), (0.6, 0.1, 0.5, 0.02), (-1.0, 2.0, 0.0, 0.1)])
def test_ei_monte_carlo(mu, sigma, best, xi):
    rng = np.random.default_rng(11)
    f = rng.normal(mu, sigma, 10**6)
    mc = np.mean(np.maximum(f - best - xi, 0))
    assert float(ei_from_moments(mu, sigma, best, xi)) == pytest.approx(mc, rel=0.01)


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(0, 10), st.floats(-10, 10), st.floats(0, 1))
def test_ei_nonnegative(mu, sigma, best, xi):
    assert float(ei_from_moments(mu, sigma, best, xi)) >= 0.0


def test_ei_uses_standardized_xi(rng):
    x = rng.random((10, 2))
    model = gp_fit(x, 5 * rng.normal(size=10))
    xq = rng.random((4, 2))
    mean, var = gp_posterior(model, xq)
    want = ei_from_moments(mean, np.sqrt(var), 1.0, 0.01 * model.y_std)
    np.testing.assert_allclose(expected_improvement(model, xq, 1.0, xi=0.01), want)


def test_propose_next_properties(rng):
    sp = SearchSpace(np.array([-1.0, 0.0, 10.0]), np.array([1.0, 5.0, 20.0]))
    x = init_design(sp, 12, 0)
    y = -np.sum(sp.to_unit(x) ** 2, axis=1)
    model = gp_fit(sp.to_unit(x), y)
    best = float(y.max())
    p1 = propose_next(model, sp, best, seed=9, n_candidates=512)
    p2 = propose_next(model, sp, best, seed=9, n_candidates=512)
    assert np.array_equal(p1, p2)
    assert sp.contains(p1)
    from scipy.stats import qmc
    cand = qmc.Sobol(3, scramble=True, seed=np.random.default_rng(np.random.SeedSequence([9, 0x50B]))).random(512)
    raw = expected_improvement(model, cand, best)
    assert expected_improvement(model, sp.to_unit(p1), best) >= raw.max()


def sphere(center):
    return lambda x: -float(np.sum((np.asarray(x) - center) ** 2))


def test_run_bo_budget_equals_init():
    f = sphere(np.full(6, 0.4))
    tr = run_bo(f, UNIT6, budget=10, n_init=10, seed=4)
    design = init_design(UNIT6, 10, 4)
    assert np.array_equal(tr.params, design)
    assert tr.best_value == max(f(x) for x in design)
    assert all(r.phase == "init" for r in tr.records)


def test_run_bo_monotone_and_deterministic():
    f = sphere(np.array([0.3, 0.6, 0.45, 0.7, 0.2, 0.55]))
    a = run_bo(f, UNIT6, budget=34, n_init=24, seed=1, n_restarts=2, n_candidates=512)
    b = run_bo(f, UNIT6, budget=34, n_init=24, seed=1, n_restarts=2, n_candidates=512)
    assert np.array_equal(a.params, b.params)
    best = [r.best_so_far for r in a.records]
    assert all(x <= y for x, y in zip(best, best[1:]))
    assert sum(r.phase == "init" for r in a.records) == 24


def test_run_bo_resume_matches():
    f = sphere(np.full(6, 0.5))
    full = run_bo(f, UNIT6, budget=30, n_init=24, seed=2, n_restarts=2, n_candidates=256)
    from rydberg_ghz.bayesopt import OptimizationTrace
    partial = OptimizationTrace()
    for r in full.records[:27]:
        partial.append(r.params, r.value, r.phase, r.wall_time, r.failed)
    resumed = run_bo(f, UNIT6, budget=30, n_init=24, seed=2, n_restarts=2, n_candidates=256, trace=partial)
    assert np.array_equal(resumed.params, full.params)


def test_run_bo_records_failures():
    calls = []

    def flaky(x):
        calls.append(1)
        if len(calls) % 3 == 0:
            raise RuntimeError("boom")
        return float(x[0])

    tr = run_bo(flaky, SearchSpace(np.zeros(2), np.ones(2)), budget=12, n_init=6, seed=0,
                n_restarts=1, n_candidates=128)
    failed = [r for r in tr.records if r.failed]
    assert len(failed) == 4
    assert all(r.value == 0.0 for r in failed)


def test_run_bo_rejects_bad_budget():
    with pytest.raises(ValueError):
        run_bo(lambda x: 0.0, UNIT6, budget=5, n_init=10)


def test_random_search_deterministic():
    f = sphere(np.full(6, 0.5))
    a = random_search(f, UNIT6, 50, seed=3)
    b = random_search(f, UNIT6, 50, seed=3)
    assert np.array_equal(a.params, b.params)
    assert len(a.records) == 50


@pytest.mark.slow
def test_sphere_benchmark_single_seed():
    center = np.array([0.3, 0.6, 0.45, 0.7, 0.2, 0.55])
    tr = run_bo(sphere(center), UNIT6, budget=150, n_init=24, seed=0)
    assert tr.best_by(150) >= -1e-2
