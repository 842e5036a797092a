"""Joint log-posteriors of the fitted variants, with analytic gradients.

Conventions shared by every variant:

* The first count column seeds the recursion (conditioned on, not modelled)
  and the likelihood covers columns ``1 .. T-1``. ``lambda0`` is not
  sampled: it is the stationary mean ``exp(h_i) / (1 - eta - kappa)``
  implied by the current state, where ``h_i`` is the log of the site's
  expected innovation given its time-invariant terms (``alpha`` for
  INGARCH, ``alpha + Sigma_ii / 2`` for SPINGARCH, ``U_i`` for the
  time-invariant variant, ``x_i beta + U_i + sigma_ind^2 / 2`` with
  covariates). A fixed vector can be supplied instead.
* Sampling happens in an unconstrained, whitened vector ``q``: locations as
  is, scales on the log scale, ``(eta, kappa)`` through
  ``s = logit(eta + kappa)``, ``r = logit(eta / (eta + kappa))``, ``zeta``
  through a scaled logit over its bounds, and latent fields as standard
  normal ``eps`` with ``field = mean + R(theta) eps`` (the time-invariant
  field ``U`` is the exception and is carried as is).
* :meth:`Posterior.log_posterior` evaluates the density in natural
  coordinates (parameters and centred latents);
  ``logp(q) == log_posterior(*unpack(q)) + log_jacobian(q)``, except for
  the time-invariant variant, whose target integrates ``alpha`` out.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter
from scipy.special import expit, gammaln

from ..graph import NeighborhoodGraph, zeta_bounds
from ..latent import (CarSpec, LOG_2PI, Weighting, car_log_density,
                      car_precision, log_det_terms)
from ..process import (CountPanel, CovariateSpingarch, Ingarch11, ModelSpec,
                       ProcessParams, Spingarch, TimeInvariantSpingarch)
from .priors import PriorSpec

VARIANTS = ("ingarch", "spingarch", "ti-spingarch", "cov-spingarch")


def _log_expit(x):
    return -np.logaddexp(0.0, -x)


def triangle_from_unconstrained(s: float, r: float):
    """Map ``(s, r)`` to ``(eta, kappa)`` and the log-Jacobian of the map."""
    m, p = expit(s), expit(r)
    log_jac = 2.0 * _log_expit(s) + _log_expit(-s) + _log_expit(r) + _log_expit(-r)
    return m * p, m * (1.0 - p), float(log_jac)


def triangle_to_unconstrained(eta: float, kappa: float):
    m = eta + kappa
    return float(np.log(m / (1.0 - m))), float(np.log(eta / kappa))


def _logit(x):
    return float(np.log(x) - np.log1p(-x))


@dataclass
class Draw:
    """One point in natural coordinates."""

    theta: dict
    latents: dict


class Posterior:
    """Shared Poisson-recursion likelihood; subclasses add parameters and latents."""

    name = "base"

    def __init__(self, data: CountPanel, graph: NeighborhoodGraph | None = None,
                 priors: PriorSpec | None = None, likelihood_weight: float = 1.0,
                 lambda0=None):
        counts = np.asarray(getattr(data, "counts", data), dtype=float)
        if counts.ndim != 2 or counts.shape[1] < 2:
            raise ValueError("need an n x T count panel with T >= 2")
        if graph is not None and graph.n_sites != counts.shape[0]:
            raise ValueError(
                f"graph has {graph.n_sites} sites but the panel has {counts.shape[0]}"
            )
        self.data = data
        self.graph = graph
        self.priors = priors or PriorSpec()
        self.likelihood_weight = float(likelihood_weight)
        self.z_prev = counts[:, :-1]
        self.z_obs = counts[:, 1:]
        self.log_factorial = float(gammaln(self.z_obs + 1.0).sum())
        self.n_sites, self.n_steps = self.z_obs.shape
        self.fixed_lambda0 = (None if lambda0 is None else
                              np.broadcast_to(np.asarray(lambda0, float), (self.n_sites,)).copy())
        if self.fixed_lambda0 is not None and not np.all(self.fixed_lambda0 > 0):
            raise ValueError("lambda0 must be positive")

    # -- likelihood ---------------------------------------------------------

    def initial_intensity(self, log_level, eta: float, kappa: float) -> np.ndarray:
        """``lambda0``: the fixed vector if given, else ``exp(log_level) / (1 - eta - kappa)``."""
        if self.fixed_lambda0 is not None:
            return self.fixed_lambda0
        level = np.broadcast_to(np.asarray(log_level, dtype=float), (self.n_sites,))
        return np.exp(level) / (1.0 - eta - kappa)

    def intensities(self, log_innov, eta: float, kappa: float, log_level):
        """Deterministic intensity paths for columns ``1 .. T-1``."""
        innov = np.exp(np.broadcast_to(log_innov, self.z_obs.shape))
        w = innov + eta * self.z_prev
        lam0 = self.initial_intensity(log_level, eta, kappa)
        lam, _ = lfilter([1.0], [1.0, -kappa], w, axis=1, zi=kappa * lam0[:, None])
        return lam, innov, lam0

    def log_likelihood(self, log_innov, eta: float, kappa: float, log_level) -> float:
        lam, _, _ = self.intensities(log_innov, eta, kappa, log_level)
        if not np.all(lam > 0) or not np.all(np.isfinite(lam)):
            return -np.inf
        return float(np.sum(self.z_obs * np.log(lam) - lam) - self.log_factorial)

    def _likelihood_and_grad(self, log_innov, eta, kappa, log_level):
        """Log-likelihood and its derivatives w.r.t. ``g``, ``eta``, ``kappa`` and ``log_level``."""
        lam, innov, lam0 = self.intensities(log_innov, eta, kappa, log_level)
        if not np.all(lam > 0) or not np.all(np.isfinite(lam)):
            return -np.inf, None, None, None, None
        value = float(np.sum(self.z_obs * np.log(lam) - lam) - self.log_factorial)
        score = self.z_obs / lam - 1.0
        # adjoint of the kappa recursion, run backwards in time
        adj = lfilter([1.0], [1.0, -kappa], score[:, ::-1], axis=1)[:, ::-1]
        lam_prev = np.concatenate([lam0[:, None], lam[:, :-1]], axis=1)
        d_eta = float(np.sum(adj * self.z_prev))
        d_kappa = float(np.sum(adj * lam_prev))
        if self.fixed_lambda0 is None:
            # lambda0 = exp(level) / (1 - eta - kappa), and d ll / d lambda0 = kappa adj[:, 0]
            g_level = kappa * adj[:, 0] * lam0
            d_eta += float(g_level.sum()) / (1.0 - eta - kappa)
            d_kappa += float(g_level.sum()) / (1.0 - eta - kappa)
        else:
            g_level = np.zeros(self.n_sites)
        w = self.likelihood_weight
        return w * value, w * adj * innov, w * d_eta, w * d_kappa, w * g_level

    # -- interface ----------------------------------------------------------

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def unpack(self, q) -> Draw:
        raise NotImplementedError

    def logp_grad(self, q):
        raise NotImplementedError

    def logp(self, q) -> float:
        return self.logp_grad(q)[0]

    def complete(self, q, rng: np.random.Generator) -> Draw:
        """Draw any parameters that are integrated out of ``q`` (none by default)."""
        return self.unpack(q)

    def log_jacobian(self, q) -> float:
        raise NotImplementedError

    def log_posterior(self, theta: dict, latents: dict, dense_determinant: bool = False) -> float:
        raise NotImplementedError

    def reported(self, theta: dict) -> dict:
        raise NotImplementedError

    def theta_from_reported(self, values: dict) -> dict:
        """Inverse of :meth:`reported` (fills in derived entries)."""
        return {k: float(values[k]) for k in self.parameter_names}

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def model_spec(self, theta: dict) -> ModelSpec:
        raise NotImplementedError

    @property
    def parameter_names(self) -> list[str]:
        raise NotImplementedError

    def _triangle_terms(self, eta, kappa):
        return self.priors.triangle_logpdf(eta, kappa)

    def _initial_triangle(self, rng):
        return (_logit(0.5) + rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5))

    def _initial_location(self, rng):
        mean = max(float(self.z_obs.mean()), 0.1)
        return np.log(0.5 * mean) + rng.uniform(-0.5, 0.5)


def _triangle_grad(d_eta, d_kappa, s, r):
    """Chain rule for the likelihood part plus the derivative of the log-Jacobian."""
    m, p = expit(s), expit(r)
    ds = (d_eta * p + d_kappa * (1.0 - p)) * m * (1.0 - m) + (2.0 - 3.0 * m)
    dr = (d_eta - d_kappa) * m * p * (1.0 - p) + (1.0 - 2.0 * p)
    return ds, dr


class IngarchPosterior(Posterior):
    name = "ingarch"
    parameter_names = ["alpha", "eta", "kappa"]

    @property
    def dim(self):
        return 3

    def unpack(self, q):
        eta, kappa, _ = triangle_from_unconstrained(q[1], q[2])
        return Draw({"alpha": float(q[0]), "eta": eta, "kappa": kappa}, {})

    def log_jacobian(self, q):
        return triangle_from_unconstrained(q[1], q[2])[2]

    def logp_grad(self, q):
        q = np.asarray(q, dtype=float)
        alpha, s, r = q
        eta, kappa, log_jac = triangle_from_unconstrained(s, r)
        ll, g_innov, d_eta, d_kappa, g_level = self._likelihood_and_grad(
            np.array([[alpha]]), eta, kappa, alpha)
        if not np.isfinite(ll):
            return -np.inf, np.zeros(3)
        value = (ll + self.priors.location_logpdf(alpha)
                 + self.priors.triangle_logpdf(eta, kappa) + log_jac)
        ds, dr = _triangle_grad(d_eta, d_kappa, s, r)
        grad = np.array([g_innov.sum() + g_level.sum() + self.priors.location_grad(alpha), ds, dr])
        return value, grad

    def log_posterior(self, theta, latents, dense_determinant=False):
        eta, kappa = theta["eta"], theta["kappa"]
        prior = self.priors.triangle_logpdf(eta, kappa)
        if not np.isfinite(prior):
            return -np.inf
        ll = self.likelihood_weight * self.log_likelihood(np.array([[theta["alpha"]]]), eta, kappa,
                                                          theta["alpha"])
        return ll + self.priors.location_logpdf(theta["alpha"]) + prior

    def reported(self, theta):
        return {k: theta[k] for k in self.parameter_names}

    def initial_point(self, rng):
        s, r = self._initial_triangle(rng)
        return np.array([self._initial_location(rng), s, r])

    def to_unconstrained(self, theta: dict, latents: dict | None = None) -> np.ndarray:
        s, r = triangle_to_unconstrained(theta["eta"], theta["kappa"])
        return np.array([theta["alpha"], s, r])

    def model_spec(self, theta):
        return ModelSpec(Ingarch11(np.exp(theta["alpha"]), self.n_sites, graph=self.graph),
                         ProcessParams(theta["eta"], theta["kappa"]), lambda0=self.fixed_lambda0)


class SpingarchPosterior(Posterior):
    """Standard CAR latent ``Y_t`` per step; ``TimeInvariantSpingarchPosterior`` uses one ``U``."""

    name = "spingarch"
    parameter_names = ["alpha", "eta", "kappa", "sigma2", "zeta"]
    time_invariant = False
    n_theta = 5

    def __init__(self, data, graph, priors=None, likelihood_weight=1.0, lambda0=None):
        if graph is None:
            raise ValueError(f"{self.name} needs a neighborhood graph")
        super().__init__(data, graph, priors, likelihood_weight, lambda0)
        self.bounds = zeta_bounds(graph)
        self.chi = graph.eigenvalues
        self.vectors = graph.eigenvectors
        self.vectors_sq = self.vectors**2
        self.n_slices = 1 if self.time_invariant else self.n_steps

    @property
    def dim(self):
        return self.n_theta + self.n_sites * self.n_slices

    def _zeta(self, w):
        u = expit(w)
        return self.bounds.lower + self.bounds.width * u, u

    def unpack(self, q):
        q = np.asarray(q, dtype=float)
        alpha, s, r, log_sigma, w = q[:5]
        eta, kappa, _ = triangle_from_unconstrained(s, r)
        sigma = np.exp(log_sigma)
        zeta, _ = self._zeta(w)
        eps = q[5:].reshape(self.n_sites, self.n_slices)
        d = 1.0 / np.sqrt(1.0 - zeta * self.chi)
        field = alpha + sigma * (self.vectors @ (d[:, None] * eps))
        theta = {"alpha": float(alpha), "eta": eta, "kappa": kappa,
                 "sigma": float(sigma), "sigma2": float(sigma**2), "zeta": float(zeta)}
        key = "U" if self.time_invariant else "Y"
        return Draw(theta, {key: field[:, 0] if self.time_invariant else field})

    def log_jacobian(self, q):
        q = np.asarray(q, dtype=float)
        _, s, r, log_sigma, w = q[:5]
        zeta, u = self._zeta(w)
        tri = triangle_from_unconstrained(s, r)[2]
        theta_jac = log_sigma + tri + np.log(self.bounds.width) + np.log(u) + np.log1p(-u)
        latent_jac = self.n_slices * (self.n_sites * log_sigma
                                      - 0.5 * np.sum(np.log1p(-zeta * self.chi)))
        return float(theta_jac + latent_jac)

    def logp_grad(self, q):
        q = np.asarray(q, dtype=float)
        alpha, s, r, log_sigma, w = q[:5]
        eps = q[5:].reshape(self.n_sites, self.n_slices)
        eta, kappa, tri_jac = triangle_from_unconstrained(s, r)
        sigma = np.exp(log_sigma)
        zeta, u = self._zeta(w)
        if not (np.all(1.0 - zeta * self.chi > 0) and 0.0 < u < 1.0):
            return -np.inf, np.zeros(self.dim)
        d = 1.0 / np.sqrt(1.0 - zeta * self.chi)
        scaled = d[:, None] * eps
        g = alpha + sigma * (self.vectors @ scaled)
        marg = sigma**2 * (self.vectors_sq @ d**2)
        ll, g_innov, d_eta, d_kappa, g_level = self._likelihood_and_grad(
            g, eta, kappa, alpha + 0.5 * marg)
        if not np.isfinite(ll):
            return -np.inf, np.zeros(self.dim)
        pri = self.priors
        value = (ll - 0.5 * np.sum(eps**2) - 0.5 * eps.size * LOG_2PI
                 + pri.location_logpdf(alpha)
                 + pri.scale_logpdf(sigma) + log_sigma
                 + pri.triangle_logpdf(eta, kappa) + tri_jac
                 + np.log(u) + np.log1p(-u))
        if self.time_invariant:
            g_innov = g_innov.sum(axis=1, keepdims=True)
        h = self.vectors.T @ g_innov
        grad = np.empty(self.dim)
        grad[0] = g_innov.sum() + g_level.sum() + pri.location_grad(alpha)
        grad[1], grad[2] = _triangle_grad(d_eta, d_kappa, s, r)
        grad[3] = (sigma * np.sum(h * scaled) + np.sum(g_level * marg)
                   + sigma * pri.scale_grad(sigma) + 1.0)
        d_zeta = (sigma * np.sum(h * (0.5 * self.chi * d**3)[:, None] * eps)
                  + 0.5 * sigma**2 * np.sum(g_level * (self.vectors_sq @ (self.chi * d**4))))
        grad[4] = d_zeta * self.bounds.width * u * (1.0 - u) + (1.0 - 2.0 * u)
        grad[5:] = (sigma * d[:, None] * h - eps).ravel()
        return value, grad

    def log_level(self, theta, field) -> np.ndarray:
        """Log expected innovation per site, which sets ``lambda0``."""
        if self.time_invariant:
            return np.asarray(field, dtype=float)
        shrink = 1.0 - theta["zeta"] * self.chi
        return theta["alpha"] + 0.5 * theta["sigma2"] * (self.vectors_sq @ (1.0 / shrink))

    def car_spec(self, theta) -> CarSpec:
        return CarSpec(self.graph, theta["alpha"], theta["zeta"], theta["sigma2"])

    def log_posterior(self, theta, latents, dense_determinant=False):
        eta, kappa = theta["eta"], theta["kappa"]
        pri = self.priors
        if not np.isfinite(pri.triangle_logpdf(eta, kappa)) or not self.bounds.contains(theta["zeta"]):
            return -np.inf
        field = latents["U"] if self.time_invariant else latents["Y"]
        field = np.asarray(field, dtype=float)
        g = field[:, None] if self.time_invariant else field
        spec = self.car_spec(theta)
        level = self.log_level(theta, field)
        ll = self.likelihood_weight * self.log_likelihood(g, eta, kappa, level)
        latent = car_log_density(g, spec)
        if dense_determinant:
            spectral = 0.5 * g.shape[1] * (-self.n_sites * np.log(spec.sigma2)
                                           + log_det_terms(self.graph, spec.zeta))
            dense = 0.5 * g.shape[1] * np.linalg.slogdet(car_precision(spec).toarray())[1]
            latent += dense - spectral
        sigma = np.sqrt(theta["sigma2"])
        return (ll + latent + pri.location_logpdf(theta["alpha"]) + pri.scale_logpdf(sigma)
                + pri.triangle_logpdf(eta, kappa) - np.log(self.bounds.width))

    def reported(self, theta):
        return {k: theta[k] for k in self.parameter_names}

    def theta_from_reported(self, values):
        theta = super().theta_from_reported(values)
        theta["sigma"] = float(np.sqrt(theta["sigma2"]))
        return theta

    def initial_point(self, rng):
        s, r = self._initial_triangle(rng)
        alpha = self._initial_location(rng) - 0.25
        log_sigma = np.log(0.5) + rng.uniform(-0.3, 0.3)
        w = rng.uniform(-1.0, 1.0)
        eps = 0.1 * rng.standard_normal(self.n_sites * self.n_slices)
        return np.concatenate([[alpha, s, r, log_sigma, w], eps])

    def to_unconstrained(self, theta: dict, latents: dict) -> np.ndarray:
        """Inverse of :meth:`unpack`."""
        s, r = triangle_to_unconstrained(theta["eta"], theta["kappa"])
        sigma = np.sqrt(theta["sigma2"])
        u = (theta["zeta"] - self.bounds.lower) / self.bounds.width
        field = np.asarray(latents["U"] if self.time_invariant else latents["Y"], dtype=float)
        field = field.reshape(self.n_sites, self.n_slices)
        d = 1.0 / np.sqrt(1.0 - theta["zeta"] * self.chi)
        eps = (self.vectors.T @ (field - theta["alpha"])) / (sigma * d[:, None])
        return np.concatenate([[theta["alpha"], s, r, np.log(sigma), _logit(u)], eps.ravel()])

    def model_spec(self, theta):
        cls = TimeInvariantSpingarch if self.time_invariant else Spingarch
        return ModelSpec(cls(self.car_spec(theta)), ProcessParams(theta["eta"], theta["kappa"]),
                         lambda0=self.fixed_lambda0)


class TimeInvariantSpingarchPosterior(SpingarchPosterior):
    """Single field ``U`` sampled in centred form with ``alpha`` integrated out.

    With ``T`` observations per site the data pin ``U`` down tightly, so the
    whitened form would couple ``sigma`` and ``eps`` into a funnel; here the
    state is ``q = [s, r, log sigma, w_zeta, U]``. The intercept enters only
    through the Gaussian CAR density, so it is marginalised analytically
    inside the HMC target and drawn afterwards from its exact Gaussian
    conditional (:meth:`complete`).
    """

    name = "ti-spingarch"
    time_invariant = True
    n_theta = 4

    def __init__(self, data, graph, priors=None, likelihood_weight=1.0, lambda0=None):
        super().__init__(data, graph, priors, likelihood_weight, lambda0)
        self.ones_coef = self.vectors.T @ np.ones(self.n_sites)

    def _alpha_terms(self, log_sigma, zeta, field):
        """Pieces of the alpha-marginal CAR density in spectral coordinates."""
        shrink = 1.0 - zeta * self.chi
        c = self.vectors.T @ (field - self.priors.location_mean)
        w = self.ones_coef
        quad0 = float(np.sum(shrink * c * c))
        a0 = float(np.sum(shrink * w * w))
        b0 = float(np.sum(shrink * w * c))
        tau = np.exp(-2.0 * log_sigma)
        den = tau * a0 + 1.0 / self.priors.location_sd**2
        return shrink, c, quad0, a0, b0, tau, den

    def alpha_conditional(self, q):
        """Mean and standard deviation of ``alpha | U, sigma, zeta``."""
        q = np.asarray(q, dtype=float)
        zeta, _ = self._zeta(q[3])
        _, _, _, _, b0, tau, den = self._alpha_terms(q[2], zeta, q[4:])
        return self.priors.location_mean + tau * b0 / den, 1.0 / np.sqrt(den)

    def unpack(self, q):
        """Natural coordinates with ``alpha`` at its conditional mean."""
        q = np.asarray(q, dtype=float)
        s, r, log_sigma, w = q[:4]
        eta, kappa, _ = triangle_from_unconstrained(s, r)
        sigma = np.exp(log_sigma)
        zeta, _ = self._zeta(w)
        alpha, _ = self.alpha_conditional(q)
        theta = {"alpha": float(alpha), "eta": eta, "kappa": kappa,
                 "sigma": float(sigma), "sigma2": float(sigma**2), "zeta": float(zeta)}
        return Draw(theta, {"U": q[4:].copy()})

    def complete(self, q, rng: np.random.Generator) -> Draw:
        draw = self.unpack(q)
        mean, sd = self.alpha_conditional(q)
        draw.theta["alpha"] = float(mean + sd * rng.standard_normal())
        return draw

    def log_jacobian(self, q):
        q = np.asarray(q, dtype=float)
        s, r, log_sigma, w = q[:4]
        _, u = self._zeta(w)
        tri = triangle_from_unconstrained(s, r)[2]
        return float(log_sigma + tri + np.log(self.bounds.width) + np.log(u) + np.log1p(-u))

    def logp_grad(self, q):
        q = np.asarray(q, dtype=float)
        s, r, log_sigma, w = q[:4]
        field = q[4:]
        eta, kappa, tri_jac = triangle_from_unconstrained(s, r)
        sigma = np.exp(log_sigma)
        zeta, u = self._zeta(w)
        if not (np.all(1.0 - zeta * self.chi > 0) and 0.0 < u < 1.0):
            return -np.inf, np.zeros(self.dim)
        ll, g_innov, d_eta, d_kappa, g_level = self._likelihood_and_grad(field[:, None], eta, kappa,
                                                                         field)
        if not np.isfinite(ll):
            return -np.inf, np.zeros(self.dim)
        pri = self.priors
        n = self.n_sites
        shrink, c, quad0, a0, b0, tau, den = self._alpha_terms(log_sigma, zeta, field)
        car = (0.5 * n * np.log(tau) + 0.5 * np.sum(np.log(shrink)) - 0.5 * n * LOG_2PI
               - 0.5 * tau * quad0 + 0.5 * tau**2 * b0**2 / den
               - 0.5 * np.log(pri.location_sd**2 * den))
        value = (ll + car + pri.scale_logpdf(sigma) + log_sigma
                 + pri.triangle_logpdf(eta, kappa) + tri_jac + np.log(u) + np.log1p(-u))
        w1 = self.ones_coef
        # partial derivatives of the CAR term in (tau, quad0, a0, b0)
        f_quad = -0.5 * tau
        f_b = tau**2 * b0 / den
        f_a = -0.5 * tau**3 * b0**2 / den**2 - 0.5 * tau / den
        f_tau = (0.5 * n / tau - 0.5 * quad0
                 + 0.5 * b0**2 * (2.0 * tau * den - tau**2 * a0) / den**2 - 0.5 * a0 / den)
        grad = np.empty(self.dim)
        grad[0], grad[1] = _triangle_grad(d_eta, d_kappa, s, r)
        grad[2] = -2.0 * tau * f_tau + sigma * pri.scale_grad(sigma) + 1.0
        chi = self.chi
        d_zeta = (-0.5 * np.sum(chi / shrink) - f_quad * np.sum(chi * c * c)
                  - f_b * np.sum(chi * w1 * c) - f_a * np.sum(chi * w1 * w1))
        grad[3] = d_zeta * self.bounds.width * u * (1.0 - u) + (1.0 - 2.0 * u)
        grad[4:] = (g_innov.sum(axis=1) + g_level
                    + self.vectors @ (shrink * (2.0 * f_quad * c + f_b * w1)))
        return value, grad

    def initial_point(self, rng):
        s, r = self._initial_triangle(rng)
        # site means of a stationary path are roughly exp(U) / (1 - eta - kappa)
        site_mean = np.maximum(self.z_obs.mean(axis=1), 0.1)
        field = np.log(0.5 * site_mean) + 0.1 * rng.standard_normal(self.n_sites)
        log_sigma = np.log(max(float(field.std()), 0.1)) + rng.uniform(-0.3, 0.3)
        w = rng.uniform(-1.0, 1.0)
        return np.concatenate([[s, r, log_sigma, w], field])

    def to_unconstrained(self, theta: dict, latents: dict) -> np.ndarray:
        s, r = triangle_to_unconstrained(theta["eta"], theta["kappa"])
        u = (theta["zeta"] - self.bounds.lower) / self.bounds.width
        field = np.asarray(latents["U"], dtype=float).ravel()
        return np.concatenate([[s, r, 0.5 * np.log(theta["sigma2"]), _logit(u)], field])


class CovariateSpingarchPosterior(Posterior):
    """``g_t = X beta + Y_t + U``: iid ``Y_t`` and a degree-weighted CAR ``U`` with fixed ``zeta``."""

    name = "cov-spingarch"

    def __init__(self, data, graph, covariates, priors=None, likelihood_weight=1.0,
                 lambda0=None, covariate_names=None):
        if graph is None:
            raise ValueError("cov-spingarch needs a neighborhood graph")
        super().__init__(data, graph, priors, likelihood_weight, lambda0)
        x = np.asarray(covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != self.n_sites:
            raise ValueError(f"covariates have {x.shape[0]} rows for {self.n_sites} sites")
        self.covariates = x
        self.n_beta = x.shape[1]
        self.covariate_names = list(covariate_names or [f"x{k}" for k in range(self.n_beta)])
        self.zeta = self.priors.zeta_fixed
        self.mu = graph.normalized_eigenvalues
        self.d_u = 1.0 / np.sqrt(1.0 - self.zeta * self.mu)
        # U = sigma_sp * B eps_U with B = D^{-1/2} W diag(d_u)
        self.dinv = 1.0 / np.sqrt(graph.degree)
        self.basis = self.dinv[:, None] * graph.normalized_eigenvectors
        self.half_log_det_u = 0.5 * log_det_terms(graph, self.zeta, Weighting.DEGREE_WEIGHTED)

    @property
    def parameter_names(self):
        return [f"beta_{name}" for name in self.covariate_names] + [
            "eta", "kappa", "sigma2_sp", "sigma2_ind"]

    @property
    def dim(self):
        return self.n_beta + 4 + self.n_sites * (self.n_steps + 1)

    def _split(self, q):
        q = np.asarray(q, dtype=float)
        p = self.n_beta
        beta = q[:p]
        s, r, log_ind, log_sp = q[p:p + 4]
        ny = self.n_sites * self.n_steps
        eps_y = q[p + 4:p + 4 + ny].reshape(self.n_sites, self.n_steps)
        eps_u = q[p + 4 + ny:]
        return beta, s, r, log_ind, log_sp, eps_y, eps_u

    def _field_u(self, sigma_sp, eps_u):
        return sigma_sp * (self.basis @ (self.d_u * eps_u))

    def unpack(self, q):
        beta, s, r, log_ind, log_sp, eps_y, eps_u = self._split(q)
        eta, kappa, _ = triangle_from_unconstrained(s, r)
        s_ind, s_sp = np.exp(log_ind), np.exp(log_sp)
        theta = {"beta": beta.copy(), "eta": eta, "kappa": kappa,
                 "sigma_ind": float(s_ind), "sigma2_ind": float(s_ind**2),
                 "sigma_sp": float(s_sp), "sigma2_sp": float(s_sp**2)}
        return Draw(theta, {"Y": s_ind * eps_y, "U": self._field_u(s_sp, eps_u)})

    def log_jacobian(self, q):
        beta, s, r, log_ind, log_sp, eps_y, eps_u = self._split(q)
        tri = triangle_from_unconstrained(s, r)[2]
        theta_jac = log_ind + log_sp + tri
        latent_jac = eps_y.size * log_ind + self.n_sites * log_sp - self.half_log_det_u
        return float(theta_jac + latent_jac)

    def logp_grad(self, q):
        beta, s, r, log_ind, log_sp, eps_y, eps_u = self._split(q)
        eta, kappa, tri_jac = triangle_from_unconstrained(s, r)
        s_ind, s_sp = np.exp(log_ind), np.exp(log_sp)
        base = self.covariates @ beta + self._field_u(s_sp, eps_u)
        g = base[:, None] + s_ind * eps_y
        ll, g_innov, d_eta, d_kappa, g_level = self._likelihood_and_grad(
            g, eta, kappa, base + 0.5 * s_ind**2)
        if not np.isfinite(ll):
            return -np.inf, np.zeros(self.dim)
        pri = self.priors
        value = (ll - 0.5 * (np.sum(eps_y**2) + np.sum(eps_u**2))
                 - 0.5 * (eps_y.size + eps_u.size) * LOG_2PI
                 + pri.location_logpdf(beta)
                 + pri.scale_logpdf(s_ind) + log_ind + pri.scale_logpdf(s_sp) + log_sp
                 + pri.triangle_logpdf(eta, kappa) + tri_jac)
        g_site = g_innov.sum(axis=1) + g_level
        h_u = self.basis.T @ g_site
        p = self.n_beta
        grad = np.empty(self.dim)
        grad[:p] = self.covariates.T @ g_site + pri.location_grad(beta)
        grad[p], grad[p + 1] = _triangle_grad(d_eta, d_kappa, s, r)
        grad[p + 2] = (s_ind * np.sum(g_innov * eps_y) + s_ind**2 * np.sum(g_level)
                       + s_ind * pri.scale_grad(s_ind) + 1.0)
        grad[p + 3] = s_sp * np.sum(h_u * self.d_u * eps_u) + s_sp * pri.scale_grad(s_sp) + 1.0
        ny = eps_y.size
        grad[p + 4:p + 4 + ny] = (s_ind * g_innov - eps_y).ravel()
        grad[p + 4 + ny:] = s_sp * self.d_u * h_u - eps_u
        return value, grad

    def weighted_car(self, theta) -> CarSpec:
        return CarSpec(self.graph, 0.0, self.zeta, theta["sigma2_sp"], Weighting.DEGREE_WEIGHTED)

    def log_posterior(self, theta, latents, dense_determinant=False):
        eta, kappa = theta["eta"], theta["kappa"]
        pri = self.priors
        if not np.isfinite(pri.triangle_logpdf(eta, kappa)):
            return -np.inf
        y = np.asarray(latents["Y"], dtype=float)
        u = np.asarray(latents["U"], dtype=float)
        beta = np.asarray(theta["beta"], dtype=float)
        s2_ind = theta["sigma2_ind"]
        base = self.covariates @ beta + u
        g = base[:, None] + y
        ll = self.likelihood_weight * self.log_likelihood(g, eta, kappa, base + 0.5 * s2_ind)
        y_density = float(np.sum(-0.5 * y**2 / s2_ind - 0.5 * np.log(2 * np.pi * s2_ind)))
        spec = self.weighted_car(theta)
        u_density = car_log_density(u, spec)
        if dense_determinant:
            spectral = 0.5 * (-self.n_sites * np.log(spec.sigma2)
                              + log_det_terms(self.graph, self.zeta, Weighting.DEGREE_WEIGHTED))
            dense = 0.5 * np.linalg.slogdet(car_precision(spec).toarray())[1]
            u_density += dense - spectral
        return (ll + y_density + u_density + pri.location_logpdf(beta)
                + pri.scale_logpdf(np.sqrt(s2_ind)) + pri.scale_logpdf(np.sqrt(theta["sigma2_sp"]))
                + pri.triangle_logpdf(eta, kappa))

    def reported(self, theta):
        out = {f"beta_{name}": float(b) for name, b in zip(self.covariate_names, theta["beta"])}
        out.update({k: theta[k] for k in ("eta", "kappa", "sigma2_sp", "sigma2_ind")})
        return out

    def theta_from_reported(self, values):
        theta = {k: float(values[k]) for k in ("eta", "kappa", "sigma2_sp", "sigma2_ind")}
        theta["beta"] = np.array([float(values[f"beta_{n}"]) for n in self.covariate_names])
        theta["sigma_sp"] = float(np.sqrt(theta["sigma2_sp"]))
        theta["sigma_ind"] = float(np.sqrt(theta["sigma2_ind"]))
        return theta

    def initial_point(self, rng):
        s, r = self._initial_triangle(rng)
        beta = np.zeros(self.n_beta)
        # crude intercept guess when the first column is constant
        if self.n_beta and np.allclose(self.covariates[:, 0], 1.0):
            beta[0] = self._initial_location(rng) - 0.5
        logs = np.log(0.5) + rng.uniform(-0.3, 0.3, size=2)
        eps = 0.1 * rng.standard_normal(self.n_sites * (self.n_steps + 1))
        return np.concatenate([beta, [s, r], logs, eps])

    def to_unconstrained(self, theta: dict, latents: dict) -> np.ndarray:
        s, r = triangle_to_unconstrained(theta["eta"], theta["kappa"])
        s_ind, s_sp = np.sqrt(theta["sigma2_ind"]), np.sqrt(theta["sigma2_sp"])
        eps_y = np.asarray(latents["Y"], float) / s_ind
        coef = np.linalg.solve(self.basis, np.asarray(latents["U"], float))
        eps_u = coef / (s_sp * self.d_u)
        return np.concatenate([np.asarray(theta["beta"], float), [s, r, np.log(s_ind), np.log(s_sp)],
                               eps_y.ravel(), eps_u])

    def model_spec(self, theta):
        variant = CovariateSpingarch(theta["beta"], self.covariates, theta["sigma2_ind"],
                                     self.weighted_car(theta), tuple(self.covariate_names))
        return ModelSpec(variant, ProcessParams(theta["eta"], theta["kappa"]), lambda0=self.fixed_lambda0)


def make_posterior(variant: str, data, graph=None, covariates=None, priors=None,
                   likelihood_weight: float = 1.0, covariate_names=None,
                   lambda0=None) -> Posterior:
    if variant == "ingarch":
        return IngarchPosterior(data, graph, priors, likelihood_weight, lambda0)
    if variant == "spingarch":
        return SpingarchPosterior(data, graph, priors, likelihood_weight, lambda0)
    if variant == "ti-spingarch":
        return TimeInvariantSpingarchPosterior(data, graph, priors, likelihood_weight, lambda0)
    if variant == "cov-spingarch":
        if covariates is None:
            raise ValueError("cov-spingarch needs covariates")
        return CovariateSpingarchPosterior(data, graph, covariates, priors, likelihood_weight,
                                           lambda0, covariate_names=covariate_names)
    raise ValueError(f"unknown model variant {variant!r}; expected one of {VARIANTS}")


def log_posterior(theta: dict, latents: dict, variant: str, data, graph=None,
                  covariates=None, priors=None) -> float:
    """Natural-coordinate joint log-posterior; ``-inf`` outside the support."""
    if theta.get("eta", 0) < 0 or theta.get("kappa", 0) < 0 or theta.get("eta", 0) + theta.get("kappa", 0) >= 1:
        return -np.inf
    post = make_posterior(variant, data, graph, covariates, priors)
    return post.log_posterior(theta, latents)


def grad_log_posterior(q, variant: str, data, graph=None, covariates=None, priors=None) -> np.ndarray:
    """Gradient of the unconstrained, whitened log-density at ``q``."""
    post = make_posterior(variant, data, graph, covariates, priors)
    return post.logp_grad(q)[1]
