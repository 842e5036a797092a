"""Independent reference implementations used only by the tests."""
import math

import numpy as np
from scipy.special import gammaln


def stationary_moments_linear_system(alpha, sigma_ii, eta, kappa):
    """Mean, variance and lag-1 autocovariance from the second-moment fixed point.

    Unknowns ``m = E[lambda]`` and ``x = E[lambda^2]``; uses
    ``E[Z | lambda] = lambda``, ``E[Z^2 | lambda] = lambda + lambda^2`` and the
    independence of the fresh log-normal innovation ``e^Y``.
    """
    mu1 = math.exp(alpha + sigma_ii / 2)
    mu2 = math.exp(2 * alpha + 2 * sigma_ii)
    s = eta + kappa
    m = mu1 / (1 - s)
    # x = mu2 + eta^2 (x + m) + kappa^2 x + 2 eta kappa x + 2 mu1 s m
    a = np.array([[1 - eta**2 - kappa**2 - 2 * eta * kappa]])
    b = np.array([mu2 + eta**2 * m + 2 * mu1 * s * m])
    x = float(np.linalg.solve(a, b)[0])
    var_z = x + m - m**2
    cross = mu1 * m + eta * (x + m) + kappa * x
    return m, var_z, cross - m**2


def spatial_cov_oracle(alpha, sigma_ii, sigma_ij, eta, kappa):
    """``C = Cov(e^Yi, e^Yj) + (eta + kappa)^2 C`` solved for ``C``."""
    cov_innov = math.exp(2 * alpha + sigma_ii) * (math.exp(sigma_ij) - 1)
    return cov_innov / (1 - (eta + kappa) ** 2)


def straight_line_log_posterior(counts, lambda0, log_innov, eta, kappa, car_mean, car_prec,
                                latent_slices, location_values, location_sd, scales, scale_sd,
                                zeta_width=None):
    """Plain-loop joint log density: Poisson terms, Gaussian CAR slices and priors."""
    n, t_total = counts.shape
    total = 0.0
    lam_prev = np.array(lambda0, dtype=float)
    for t in range(1, t_total):
        for i in range(n):
            lam = math.exp(log_innov[i][t - 1]) + eta * counts[i][t - 1] + kappa * lam_prev[i]
            total += counts[i][t] * math.log(lam) - lam - math.lgamma(counts[i][t] + 1)
            lam_prev[i] = lam
    sign, logdet = np.linalg.slogdet(car_prec)
    for y in latent_slices:
        d = np.asarray(y, dtype=float) - car_mean
        total += 0.5 * logdet - 0.5 * n * math.log(2 * math.pi) - 0.5 * float(d @ car_prec @ d)
    for v in location_values:
        total += -0.5 * (v / location_sd) ** 2 - 0.5 * math.log(2 * math.pi) - math.log(location_sd)
    for sd in scales:
        total += math.log(2) - 0.5 * (sd / scale_sd) ** 2 - 0.5 * math.log(2 * math.pi) - math.log(scale_sd)
    total += math.log(2.0)  # triangle prior
    if zeta_width is not None:
        total -= math.log(zeta_width)
    return total


def poisson_lognormal_cell(z, mu, var, lam_extra=0.0):
    """log of ``int Pois(z; e^y + lam_extra) N(y; mu, var) dy`` by adaptive quadrature."""
    from scipy.integrate import quad

    sd = math.sqrt(var)

    def integrand(y):
        lam = math.exp(y) + lam_extra
        return math.exp(z * math.log(lam) - lam - gammaln(z + 1)
                        - 0.5 * ((y - mu) / sd) ** 2 - math.log(sd * math.sqrt(2 * math.pi)))

    lo, hi = mu - 12 * sd, mu + 12 * sd
    value = quad(integrand, lo, hi, epsabs=0, epsrel=1e-12, limit=200)[0]
    return math.log(value)


def central_difference(f, q, h=1e-5):
    q = np.asarray(q, dtype=float)
    out = np.empty_like(q)
    for k in range(q.size):
        e = np.zeros_like(q)
        e[k] = h
        out[k] = (f(q + e) - f(q - e)) / (2 * h)
    return out


def gradient_relative_error(grad, fd):
    """Largest componentwise error, relative to ``max(|fd_k|, 1)``."""
    return float(np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1.0)))
