import numpy as np
import pytest

from spingarch.graph import torus_grid
from spingarch.inference import fit as fit_module
from spingarch.inference.diagnostics import effective_sample_size, split_rhat
from spingarch.inference.fit import FitError, fit
from spingarch.inference.hmc import HmcSettings, Metric, leapfrog, sample_chain
from spingarch.inference.ppc import posterior_predictive, predictive_p_value, replicate_panel
from spingarch.process import Ingarch11, ModelSpec, ProcessParams, simulate
from spingarch.stats import ALL_NAMES

COV = np.array([[1.0, 0.8], [0.8, 2.0]])
PREC = np.linalg.inv(COV)


def _gauss(q):
    return -0.5 * q @ PREC @ q, -PREC @ q


@pytest.mark.parametrize("metric", ["diag", "dense"])
def test_hmc_recovers_gaussian(metric):
    rng = np.random.default_rng(0)
    out = sample_chain(_gauss, np.array([3.0, -3.0]), 500, 4000, rng, HmcSettings(metric=metric))
    x = np.asarray(out.draws)
    ess = min(effective_sample_size(x[None, :, k]) for k in range(2))
    assert ess > 500
    se = np.sqrt(np.diag(COV) / ess)
    assert np.all(np.abs(x.mean(axis=0)) < 4 * se)
    np.testing.assert_allclose(np.cov(x.T), COV, rtol=0.15, atol=0.1)
    assert not out.divergent.any()


def test_leapfrog_is_reversible_and_nearly_conserves_energy():
    metric = Metric(np.array([1.0, 2.0]))
    q0, p0 = np.array([0.5, -1.0]), np.array([0.3, 0.7])
    _, g0 = _gauss(q0)
    q1, p1, lp1, g1 = leapfrog(_gauss, q0, p0, g0, 0.05, metric, 40)
    q2, p2, _, _ = leapfrog(_gauss, q1, -p1, g1, 0.05, metric, 40)
    np.testing.assert_allclose(q2, q0, atol=1e-12)
    np.testing.assert_allclose(-p2, p0, atol=1e-12)
    h0 = -_gauss(q0)[0] + metric.kinetic(p0)
    h1 = -lp1 + metric.kinetic(p1)
    assert abs(h1 - h0) < 1e-2


def test_dense_metric_momentum_covariance():
    mass_inv = np.array([[2.0, 0.5], [0.5, 1.0]])
    metric = Metric(mass_inv)
    rng = np.random.default_rng(1)
    p = np.array([metric.sample_momentum(rng, 2) for _ in range(20000)])
    np.testing.assert_allclose(np.cov(p.T), np.linalg.inv(mass_inv), rtol=0.05, atol=0.02)
    np.testing.assert_allclose(metric.velocity(np.array([1.0, 0.0])), mass_inv[:, 0])


def test_initial_point_must_have_density():
    with pytest.raises(FloatingPointError):
        sample_chain(lambda q: (-np.inf, np.zeros(1)), np.zeros(1), 10, 10, np.random.default_rng(0))


def test_rhat_and_ess():
    rng = np.random.default_rng(0)
    iid = rng.standard_normal((4, 1000))
    assert split_rhat(iid) < 1.01
    assert effective_sample_size(iid) == pytest.approx(4000, rel=0.15)
    shifted = iid + np.array([0.0, 0.0, 0.0, 1.0])[:, None]
    assert split_rhat(shifted) > 1.1
    rho = 0.9
    ar = np.zeros((4, 5000))
    for t in range(1, 5000):
        ar[:, t] = rho * ar[:, t - 1] + rng.standard_normal(4)
    expected = ar.size * (1 - rho) / (1 + rho)
    assert effective_sample_size(ar) == pytest.approx(expected, rel=0.3)
    with pytest.raises(ValueError):
        split_rhat(np.zeros((2, 3)))


def _ingarch_panel(seed, n_side=5, t_total=60):
    g = torus_grid(n_side, n_side)
    model = ModelSpec(Ingarch11(2.0, g.n_sites, graph=g), ProcessParams(0.2, 0.3))
    return g, simulate(model, t_total, burn_in=100, rng_seed=seed)


def test_fit_is_seeded():
    g, panel = _ingarch_panel(0, 3, 20)
    a = fit("ingarch", panel, g, chains=2, iterations=50, warmup=50, seed=7)
    b = fit("ingarch", panel, g, chains=2, iterations=50, warmup=50, seed=7)
    c = fit("ingarch", panel, g, chains=2, iterations=50, warmup=50, seed=8)
    np.testing.assert_array_equal(a.chains.draws, b.chains.draws)
    assert not np.array_equal(a.chains.draws, c.chains.draws)
    assert a.chains.draws.shape == (2, 50, 3)


def test_fit_argument_errors():
    g, panel = _ingarch_panel(0, 3, 20)
    with pytest.raises(ValueError):
        fit("ingarch", panel, g, chains=1)
    with pytest.raises(ValueError):
        fit("ingarch", panel, g, iterations=0)


def test_fit_raises_on_divergences(monkeypatch):
    g, panel = _ingarch_panel(0, 3, 20)
    monkeypatch.setattr(fit_module, "MAX_DIVERGENCE_RATE", -1.0)
    with pytest.raises(FitError):
        fit("ingarch", panel, g, chains=2, iterations=10, warmup=10)


def test_prior_only_fit_returns_prior_moment():
    g, panel = _ingarch_panel(1, 3, 20)
    res = fit("ingarch", panel, g, chains=2, iterations=1500, warmup=500, seed=3,
              likelihood_weight=0.0)
    eta = res.chains.column("eta")
    se = eta.std() / np.sqrt(effective_sample_size(eta))
    assert abs(eta.mean() - 1 / 3) < 3 * se
    assert np.all(res.report.rhat < 1.05)


def test_ingarch_calibration_single_seed():
    g = torus_grid(10, 10)
    model = ModelSpec(Ingarch11(2.0, 100, graph=g), ProcessParams(0.2, 0.3))
    panel = simulate(model, 200, burn_in=500, rng_seed=11)
    res = fit("ingarch", panel, g, chains=2, iterations=800, warmup=600, seed=11)
    truth = {"alpha": np.log(2.0), "eta": 0.2, "kappa": 0.3}
    assert all(res.report.covers(truth).values())
    assert np.all(res.report.rhat < 1.05)


def test_predictive_p_value_and_exclusions():
    p, used, excluded = predictive_p_value(1.0, [0.0, 1.0, 2.0, np.nan])
    assert (p, used, excluded) == (2 / 3, 3, 1)
    p, used, excluded = predictive_p_value(1.0, [np.nan, np.nan])
    assert np.isnan(p) and used == 0 and excluded == 2


def test_p_value_rank_uniformity():
    # an observation exchangeable with its replicates has a uniform p-value
    rng = np.random.default_rng(4)
    m = 19
    p = []
    for _ in range(4000):
        x = rng.normal(size=m + 1)
        p.append(predictive_p_value(x[0], x[1:])[0])
    counts = np.bincount(np.rint(np.array(p) * m).astype(int), minlength=m + 1)
    expected = 4000 / (m + 1)
    chi2 = np.sum((counts - expected) ** 2 / expected)
    assert chi2 < 45  # 99.9% point of chi-square with 19 df is 43.8


def test_posterior_predictive_report():
    g, panel = _ingarch_panel(2, 4, 30)
    res = fit("ingarch", panel, g, chains=2, iterations=100, warmup=100, seed=1)
    rep = posterior_predictive(res.chains, res.posterior, n_reps=30, seed=5)
    assert set(rep.checks) == set(ALL_NAMES)
    assert rep.replicates.shape == (30, len(ALL_NAMES))
    for c in rep.checks.values():
        assert 0.0 <= c.p_value <= 1.0
        assert c.n_used + c.n_excluded == 30
    again = posterior_predictive(res.chains, res.posterior, n_reps=30, seed=5)
    np.testing.assert_array_equal(rep.replicates, again.replicates)
    theta = res.posterior.theta_from_reported(dict(zip(res.chains.names, res.chains.flat()[0])))
    sim = replicate_panel(res.posterior, theta, 3)
    assert sim.shape == panel.counts.shape
    np.testing.assert_array_equal(sim[:, 0], panel.counts[:, 0])
    with pytest.raises(ValueError):
        posterior_predictive(res.chains, res.posterior, n_reps=0)


@pytest.mark.parametrize("variant", ["spingarch", "ti-spingarch", "cov-spingarch"])
def test_latent_variants_run_and_replicate(variant):
    g, panel = _ingarch_panel(3, 3, 15)
    x = np.column_stack([np.ones(9), np.linspace(-1, 1, 9)]) if variant == "cov-spingarch" else None
    res = fit(variant, panel, g, covariates=x, chains=2, iterations=30, warmup=60, seed=2,
              keep_latents=True)
    assert np.all(np.isfinite(res.chains.draws))
    assert len(res.chains.latents[0]) == 30
    rep = posterior_predictive(res.chains, res.posterior, n_reps=5, seed=1)
    assert rep.replicates.shape == (5, len(ALL_NAMES))
