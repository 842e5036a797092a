"""Closed-form stationary moments of the SPINGARCH process.

All functions take the latent mean ``alpha``, the latent marginal variance
``sigma_ii`` (and covariance ``sigma_ij`` for spatial terms) and the
:class:`ProcessParams`. Setting ``sigma_ii = 0`` recovers INGARCH(1,1) with
``d = exp(alpha)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .process import ModelSpec, ParameterError, ProcessParams, TimeInvariantSpingarch, simulate_batch


def _check(params: ProcessParams, sigma_ii: float) -> None:
    if not isinstance(params, ProcessParams):
        raise TypeError("params must be ProcessParams")
    if sigma_ii < 0:
        raise ParameterError("latent variance must be nonnegative")


def innovation_mean(alpha: float, sigma_ii: float) -> float:
    return math.exp(alpha + 0.5 * sigma_ii)


def innovation_variance(alpha: float, sigma_ii: float) -> float:
    """Variance of the log-normal innovation ``exp(Y)``."""
    return math.exp(2.0 * alpha + sigma_ii) * math.expm1(sigma_ii)


def stationary_mean(alpha: float, sigma_ii: float, params: ProcessParams) -> float:
    _check(params, sigma_ii)
    return innovation_mean(alpha, sigma_ii) / (1.0 - params.persistence)


def stationary_variance(alpha: float, sigma_ii: float, params: ProcessParams) -> float:
    _check(params, sigma_ii)
    eta, kappa = params.eta, params.kappa
    s2 = params.persistence**2
    mean = stationary_mean(alpha, sigma_ii, params)
    return (innovation_variance(alpha, sigma_ii)
            + mean * (1.0 - kappa**2 - 2.0 * kappa * eta)) / (1.0 - s2)


def lag_h_autocovariance(alpha: float, sigma_ii: float, params: ProcessParams, h: int = 1) -> float:
    """Autocovariance of ``Z(s_i, t)`` and ``Z(s_i, t + h)``.

    Lags beyond one follow from ``Cov(Z_t, lambda_{t+h}) = (eta + kappa) Cov(Z_t, Z_{t+h-1})``
    because the latent innovations are independent over time.
    """
    h = int(h)
    if h < 1:
        raise ValueError("lag must be >= 1; use stationary_variance for lag 0")
    lag1 = (params.persistence * stationary_variance(alpha, sigma_ii, params)
            - params.kappa * stationary_mean(alpha, sigma_ii, params))
    return params.persistence ** (h - 1) * lag1


def lag_h_autocorrelation(alpha, sigma_ii, params, h: int = 1) -> float:
    return lag_h_autocovariance(alpha, sigma_ii, params, h) / stationary_variance(alpha, sigma_ii, params)


def lag1_autocovariance_via_cross_moment(alpha: float, sigma_ii: float, params: ProcessParams) -> float:
    """Lag-one autocovariance as ``E[Z_t Z_{t+1}] - E[Z]^2``.

    ``E[Z_t Z_{t+1}] = eta E[Z^2] + kappa E[lambda^2] + E[Z] E[exp Y]`` with
    ``E[lambda^2] = Var Z - E Z + (E Z)^2``.
    """
    eta, kappa = params.eta, params.kappa
    mean = stationary_mean(alpha, sigma_ii, params)
    var = stationary_variance(alpha, sigma_ii, params)
    second_z = var + mean**2
    second_lam = var - mean + mean**2
    cross = eta * second_z + kappa * second_lam + mean * innovation_mean(alpha, sigma_ii)
    return cross - mean**2


def spatial_covariance(alpha: float, sigma_ii: float, sigma_ij: float, params: ProcessParams,
                       sigma_jj: float | None = None, alpha_j: float | None = None) -> float:
    """Same-time covariance of counts at two distinct sites.

    Defaults assume equal latent means and variances at both sites.
    """
    _check(params, sigma_ii)
    sigma_jj = sigma_ii if sigma_jj is None else sigma_jj
    alpha_j = alpha if alpha_j is None else alpha_j
    innov_cov = math.exp(alpha + alpha_j + 0.5 * (sigma_ii + sigma_jj)) * math.expm1(sigma_ij)
    return innov_cov / (1.0 - params.persistence**2)


def spatial_correlation(alpha: float, sigma_ii: float, sigma_ij: float, params: ProcessParams) -> float:
    """Spatial covariance divided by the stationary variance (equal-margin case)."""
    return spatial_covariance(alpha, sigma_ii, sigma_ij, params) / stationary_variance(alpha, sigma_ii, params)


@dataclass(frozen=True)
class AutocorrelationInterval:
    lower: float
    upper: float


def variance_autocorr_tradeoff(ratio: float, model: str = "spingarch") -> AutocorrelationInterval:
    """Admissible lag-one autocorrelations for a given variance-to-mean ratio.

    SPINGARCH with ``kappa = 0`` has autocorrelation ``eta`` and ratio
    ``V/((1+eta) m) + 1/(1-eta^2)`` for any latent ratio ``V/m >= 0``, so
    ``eta^2 <= 1 - 1/ratio``. INGARCH(1,1) has
    ``ratio = 1 + eta^2 / (1 - (eta+kappa)^2)`` and autocorrelation
    ``eta (1 - kappa (eta+kappa)) / (1 - (eta+kappa)^2 + eta^2)``; over
    ``kappa >= 0`` this sweeps from ``sqrt(1 - 1/ratio)`` at ``kappa = 0``
    down to ``1 - 1/ratio`` as ``eta + kappa -> 1``.
    """
    if not ratio > 1:
        raise ValueError("variance-to-mean ratio must exceed 1")
    upper = math.sqrt(1.0 - 1.0 / ratio)
    if model == "spingarch":
        return AutocorrelationInterval(0.0, upper)
    if model == "ingarch":
        return AutocorrelationInterval(1.0 - 1.0 / ratio, upper)
    raise ValueError(f"unknown model {model!r}")


def ingarch_lag1_autocorrelation(eta: float, kappa: float) -> float:
    s = eta + kappa
    return eta * (1.0 - kappa * s) / (1.0 - s * s + eta * eta)


def ingarch_variance_mean_ratio(eta: float, kappa: float) -> float:
    s = eta + kappa
    return 1.0 + eta * eta / (1.0 - s * s)


@dataclass(frozen=True)
class MonteCarloMoments:
    """Estimates and standard errors, each over independent replicate runs."""

    mean: float
    mean_se: float
    variance: float
    variance_se: float
    lag1: float
    lag1_se: float
    spatial: float | None
    spatial_se: float | None


def monte_carlo_moments(model: ModelSpec, t_total: int, replicates: int, rng_seed=0,
                        burn_in: int = 500, pairs=None, center: float | None = None) -> MonteCarloMoments:
    """Moment estimates from ``replicates`` independent simulator runs.

    Each replicate yields pooled estimates over all sites (sites are assumed
    exchangeable in distribution); standard errors are the between-replicate
    standard deviation over ``sqrt(replicates)``. The spatial covariance is
    averaged over ``pairs`` (site index pairs sharing one latent covariance).
    Second moments are taken about ``center`` when given (removing the small
    downward bias of centring on each replicate's own mean), otherwise about
    the replicate mean.
    """
    if isinstance(model.variant, TimeInvariantSpingarch):
        warnings.warn("time-invariant SPINGARCH has no closed-form moments; "
                      "returning Monte Carlo estimates only", stacklevel=2)
    z = simulate_batch(model, t_total, replicates, burn_in=burn_in, rng_seed=rng_seed).astype(float)
    mean_r = z.mean(axis=(1, 2))
    dev = z - (mean_r[:, None, None] if center is None else float(center))
    var_r = (dev**2).mean(axis=(1, 2))
    lag_r = (dev[:, :, 1:] * dev[:, :, :-1]).mean(axis=(1, 2))
    spatial = spatial_se = None
    if pairs is not None:
        pairs = np.asarray(pairs)
        sp_r = (dev[:, pairs[:, 0], :] * dev[:, pairs[:, 1], :]).mean(axis=(1, 2))
        spatial, spatial_se = sp_r.mean(), sp_r.std(ddof=1) / np.sqrt(replicates)

    def summary(x):
        return float(x.mean()), float(x.std(ddof=1) / np.sqrt(replicates))

    m, mse = summary(mean_r)
    v, vse = summary(var_r)
    l1, lse = summary(lag_r)
    return MonteCarloMoments(m, mse, v, vse, l1, lse,
                             None if spatial is None else float(spatial),
                             None if spatial_se is None else float(spatial_se))
