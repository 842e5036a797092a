"""Shared fixtures-by-function for the test modules."""
import numpy as np

from spingarch.graph import torus_grid
from spingarch.inference.posterior import make_posterior, triangle_to_unconstrained

VARIANTS = ("ingarch", "spingarch", "ti-spingarch", "cov-spingarch")


def small_problem(variant, seed=0, rows=3, cols=3, t_total=6):
    rng = np.random.default_rng(seed)
    g = torus_grid(rows, cols)
    n = g.n_sites
    z = rng.poisson(2.0, size=(n, t_total))
    x = np.column_stack([np.ones(n), rng.normal(size=n)]) if variant == "cov-spingarch" else None
    return make_posterior(variant, z, g, covariates=x)


def random_points(post, n_points, seed, boundary=False):
    """Perturbed starting points; ``boundary`` pins ``eta + kappa = 0.95``."""
    rng = np.random.default_rng(seed)
    offset = post.n_beta if post.name == "cov-spingarch" else (0 if post.name == "ti-spingarch" else 1)
    points = []
    for _ in range(n_points):
        q = post.initial_point(rng)
        q = q + 0.4 * rng.standard_normal(q.size)
        if boundary:
            eta = rng.uniform(0.05, 0.9)
            q[offset], q[offset + 1] = triangle_to_unconstrained(eta, 0.95 - eta)
        points.append(q)
    return points
