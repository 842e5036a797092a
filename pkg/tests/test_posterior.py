import math

import numpy as np
import pytest
from scipy.integrate import quad

from oracles import central_difference, gradient_relative_error, straight_line_log_posterior
from support import VARIANTS, random_points, small_problem
from spingarch.graph import from_edge_list, torus_grid
from spingarch.inference.posterior import (log_posterior, make_posterior, triangle_from_unconstrained,
                                           triangle_to_unconstrained)
from spingarch.inference.priors import PriorSpec
from spingarch.process import conditional_log_pmf


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("boundary", [False, True])
def test_gradient_matches_finite_differences(variant, boundary):
    post = small_problem(variant, seed=1)
    for q in random_points(post, 5, seed=2, boundary=boundary):
        value, grad = post.logp_grad(q)
        assert np.isfinite(value)
        fd = central_difference(post.logp, q)
        assert gradient_relative_error(grad, fd) < 1e-5


@pytest.mark.parametrize("variant", ["ingarch", "spingarch", "cov-spingarch"])
def test_target_is_natural_density_plus_jacobian(variant):
    post = small_problem(variant, seed=3)
    for q in random_points(post, 3, seed=4):
        d = post.unpack(q)
        assert post.logp(q) == pytest.approx(
            post.log_posterior(d.theta, d.latents) + post.log_jacobian(q), rel=1e-11)
        np.testing.assert_allclose(post.to_unconstrained(d.theta, d.latents), q, atol=1e-9)


def test_time_invariant_target_integrates_alpha_out():
    post = small_problem("ti-spingarch", seed=5)
    for q in random_points(post, 3, seed=6):
        value = post.logp(q)
        d = post.unpack(q)
        mean, sd = post.alpha_conditional(q)
        offset = value - post.log_jacobian(q)

        def integrand(a):
            theta = dict(d.theta, alpha=a)
            return math.exp(post.log_posterior(theta, d.latents) - offset)

        total = quad(integrand, mean - 12 * sd, mean + 12 * sd, epsabs=0, epsrel=1e-12)[0]
        assert math.log(total) == pytest.approx(0.0, abs=1e-9)
        np.testing.assert_allclose(post.to_unconstrained(d.theta, d.latents), q, atol=1e-12)


def test_alpha_gibbs_draws_follow_conditional():
    post = small_problem("ti-spingarch", seed=7)
    q = random_points(post, 1, seed=8)[0]
    mean, sd = post.alpha_conditional(q)
    rng = np.random.default_rng(0)
    draws = np.array([post.complete(q, rng).theta["alpha"] for _ in range(4000)])
    assert abs(draws.mean() - mean) < 4 * sd / np.sqrt(4000)
    assert draws.std() == pytest.approx(sd, rel=0.05)


def _path4_problem():
    g = from_edge_list(4, [(0, 1), (1, 2), (2, 3)])
    z = np.array([[1, 0, 3], [2, 2, 1], [0, 1, 0], [4, 3, 5]])
    return g, z


def test_dual_implementation_spingarch():
    g, z = _path4_problem()
    adj = np.zeros((4, 4))
    for i, j in [(0, 1), (1, 2), (2, 3)]:
        adj[i, j] = adj[j, i] = 1
    chi = np.linalg.eigvalsh(adj)
    width = 1 / chi.max() - 1 / chi.min()
    rng = np.random.default_rng(0)
    theta = {"alpha": 0.3, "eta": 0.25, "kappa": 0.4, "sigma2": 0.7, "zeta": 0.35}
    y = 0.3 + rng.normal(size=(4, 2))
    post = make_posterior("spingarch", z, g)
    prec = (np.eye(4) - theta["zeta"] * adj) / theta["sigma2"]
    # lambda0 is the stationary mean exp(alpha + Sigma_ii / 2) / (1 - eta - kappa)
    lambda0 = np.exp(0.3 + 0.5 * np.diag(np.linalg.inv(prec))) / (1 - 0.65)
    expected = straight_line_log_posterior(
        z, lambda0, y, theta["eta"], theta["kappa"], np.full(4, 0.3), prec, [y[:, 0], y[:, 1]],
        [theta["alpha"]], 10.0, [math.sqrt(theta["sigma2"])], 5.0, zeta_width=width)
    assert post.log_posterior(theta, {"Y": y}) == pytest.approx(expected, rel=1e-12)


def test_dual_implementation_ingarch():
    g, z = _path4_problem()
    theta = {"alpha": -0.2, "eta": 0.1, "kappa": 0.6}
    post = make_posterior("ingarch", z, g)
    lambda0 = np.full(4, np.exp(-0.2) / 0.3)
    expected = straight_line_log_posterior(z, lambda0, np.full((4, 2), -0.2), 0.1, 0.6, None,
                                           np.eye(1), [], [-0.2], 10.0, [], 5.0)
    assert post.log_posterior(theta, {}) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("variant", ["spingarch", "ti-spingarch", "cov-spingarch"])
def test_dense_determinant_agrees(variant):
    g = torus_grid(8, 8)
    rng = np.random.default_rng(1)
    z = rng.poisson(1.5, size=(64, 4))
    x = np.ones((64, 1))
    post = make_posterior(variant, z, g, covariates=x if variant == "cov-spingarch" else None)
    q = random_points(post, 1, seed=3)[0]
    d = post.unpack(q)
    a = post.log_posterior(d.theta, d.latents)
    b = post.log_posterior(d.theta, d.latents, dense_determinant=True)
    assert abs(a - b) < 1e-9


def test_outside_triangle_is_minus_infinity():
    g, z = _path4_problem()
    theta = {"alpha": 0.0, "eta": 0.6, "kappa": 0.4}
    assert log_posterior(theta, {}, "ingarch", z, g) == -np.inf
    theta = {"alpha": 0.0, "eta": -0.01, "kappa": 0.4}
    assert log_posterior(theta, {}, "ingarch", z, g) == -np.inf
    bad = {"alpha": 0.0, "eta": 0.2, "kappa": 0.3, "sigma2": 0.5, "zeta": 0.9}
    assert make_posterior("spingarch", z, g).log_posterior(bad, {"Y": np.zeros((4, 2))}) == -np.inf


def test_zero_data_eta_score_is_minus_total_intensity_slope():
    # with z = 0 the data term is -sum(lambda), so its eta-derivative is -sum(d lambda / d eta)
    post = make_posterior("ingarch", np.zeros((4, 5)))
    _, _, d_eta, _, _ = post._likelihood_and_grad(np.array([[0.3]]), 0.2, 0.3, 0.3)

    def total(eta):
        return post.intensities(np.array([[0.3]]), eta, 0.3, 0.3)[0].sum()

    h = 1e-6
    assert d_eta == pytest.approx(-(total(0.2 + h) - total(0.2 - h)) / (2 * h), rel=1e-7)


def test_monotone_score_in_counts():
    lam, h = 2.7, 1e-6
    for z in range(6):
        score = (conditional_log_pmf(z, lam * math.exp(h)) - conditional_log_pmf(z, lam * math.exp(-h))) / (2 * h)
        score_up = (conditional_log_pmf(z + 1, lam * math.exp(h))
                    - conditional_log_pmf(z + 1, lam * math.exp(-h))) / (2 * h)
        assert score_up > score
        assert score_up - score == pytest.approx(1.0, abs=1e-6)
    # through the posterior: with eta = 0 an extra count raises every upstream innovation score
    rng = np.random.default_rng(0)
    z = rng.poisson(2.0, size=(3, 6))
    z_more = z.copy()
    z_more[1, 4] += 1
    g = np.zeros((3, 5))
    base = make_posterior("ingarch", z, lambda0=2.0)._likelihood_and_grad(g, 0.0, 0.5, 0.0)[1]
    more = make_posterior("ingarch", z_more, lambda0=2.0)._likelihood_and_grad(g, 0.0, 0.5, 0.0)[1]
    diff = more - base
    assert np.all(diff[1, :4] > 0) and np.allclose(np.delete(diff, 1, axis=0), 0)


def test_likelihood_weight_zero_leaves_prior():
    g, z = _path4_problem()
    post = make_posterior("ingarch", z, g, likelihood_weight=0.0)
    theta = {"alpha": 0.4, "eta": 0.2, "kappa": 0.1}
    expected = PriorSpec().location_logpdf(0.4) + math.log(2.0)
    assert post.log_posterior(theta, {}) == pytest.approx(expected, rel=1e-12)


def test_triangle_transform_round_trip():
    for eta, kappa in [(0.1, 0.2), (0.5, 0.45), (0.01, 0.9)]:
        s, r = triangle_to_unconstrained(eta, kappa)
        e2, k2, _ = triangle_from_unconstrained(s, r)
        assert (e2, k2) == pytest.approx((eta, kappa), rel=1e-12)


def test_initial_intensity_stationary_or_fixed():
    z = np.array([[0, 0, 0], [1, 2, 3]])
    post = make_posterior("ingarch", z)
    np.testing.assert_allclose(post.initial_intensity([0.0, np.log(2.0)], 0.2, 0.3), [2.0, 4.0])
    fixed = make_posterior("ingarch", z, lambda0=[1.0, 3.0])
    np.testing.assert_allclose(fixed.initial_intensity(0.0, 0.2, 0.3), [1.0, 3.0])
    with pytest.raises(ValueError):
        make_posterior("ingarch", z, lambda0=[0.0, 1.0])


@pytest.mark.parametrize("variant", VARIANTS)
def test_gradient_with_fixed_initial_intensity(variant):
    post = small_problem(variant, seed=9)
    post.fixed_lambda0 = np.full(post.n_sites, 1.7)
    for q in random_points(post, 3, seed=10):
        fd = central_difference(post.logp, q)
        assert gradient_relative_error(post.logp_grad(q)[1], fd) < 1e-5


def test_constructor_errors():
    g = torus_grid(3, 3)
    with pytest.raises(ValueError):
        make_posterior("spingarch", np.zeros((9, 1)), g)
    with pytest.raises(ValueError):
        make_posterior("spingarch", np.zeros((8, 4)), g)
    with pytest.raises(ValueError):
        make_posterior("spingarch", np.zeros((9, 4)))
    with pytest.raises(ValueError):
        make_posterior("cov-spingarch", np.zeros((9, 4)), g)
    with pytest.raises(ValueError):
        make_posterior("nope", np.zeros((9, 4)), g)
