"""Gaussian CAR latent fields: densities, exact sampling and marginal covariances.

Two precision structures are supported on a :class:`NeighborhoodGraph` with
adjacency ``A`` and degree matrix ``D``::

    Standard        Q = (I - zeta A) / sigma2
    DegreeWeighted  Q = (D - zeta A) / sigma2

Both are diagonalised once per graph, so log-determinants cost O(n) and
draws use the spectral square root ``Q^{-1} = R R^T``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .graph import NeighborhoodGraph, zeta_bounds

LOG_2PI = float(np.log(2.0 * np.pi))


class CarDomainError(ValueError):
    """CAR parameters outside the region where the precision is positive definite."""


class Weighting(str, enum.Enum):
    STANDARD = "standard"
    DEGREE_WEIGHTED = "degree_weighted"


@dataclass(frozen=True, eq=False)
class CarSpec:
    graph: NeighborhoodGraph
    alpha: np.ndarray | float
    zeta: float
    sigma2: float
    weighting: Weighting = Weighting.STANDARD

    def __post_init__(self):
        n = self.graph.n_sites
        alpha = np.broadcast_to(np.asarray(self.alpha, dtype=float), (n,)).copy()
        if not np.all(np.isfinite(alpha)):
            raise CarDomainError("alpha must be finite")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "weighting", Weighting(self.weighting))
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise CarDomainError(f"sigma2 must be positive, got {self.sigma2}")
        check_zeta(self.graph, self.zeta, self.weighting)

    @property
    def n_sites(self) -> int:
        return self.graph.n_sites

    def spectrum(self) -> np.ndarray:
        return _spectrum(self.graph, self.weighting)

    def precision(self) -> sparse.csr_matrix:
        return car_precision(self)

    def factor(self) -> np.ndarray:
        """Dense ``R`` with ``R @ R.T`` equal to the covariance."""
        return car_factor(self.graph, self.zeta, self.sigma2, self.weighting)


@dataclass(frozen=True, eq=False)
class LatentPanel:
    """Realised latent values: ``n x T`` for Y, or an ``n`` vector for a time-invariant U."""

    values: np.ndarray
    time_invariant: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if self.time_invariant and values.ndim != 1:
            raise ValueError("time-invariant latent field must be a vector")
        if not self.time_invariant and values.ndim != 2:
            raise ValueError("time-varying latent panel must be an n x T matrix")
        if not np.all(np.isfinite(values)):
            raise ValueError("latent values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_sites(self) -> int:
        return self.values.shape[0]

    def as_matrix(self) -> np.ndarray:
        return self.values[:, None] if self.time_invariant else self.values


def _spectrum(graph: NeighborhoodGraph, weighting: Weighting) -> np.ndarray:
    if Weighting(weighting) is Weighting.STANDARD:
        return graph.eigenvalues
    return graph.normalized_eigenvalues


def check_zeta(graph: NeighborhoodGraph, zeta: float, weighting=Weighting.STANDARD) -> None:
    if not np.isfinite(zeta):
        raise CarDomainError("zeta must be finite")
    if Weighting(weighting) is Weighting.STANDARD:
        bounds = zeta_bounds(graph)
        if not bounds.contains(zeta):
            raise CarDomainError(
                f"zeta={zeta} outside ({bounds.lower:.6g}, {bounds.upper:.6g})"
            )
    elif not -1.0 < zeta < 1.0:
        raise CarDomainError(f"zeta={zeta} outside (-1, 1) for the weighted CAR")
    # guards the endpoints themselves, which rounding in the spectrum can let through
    if np.min(1.0 - zeta * _spectrum(graph, weighting)) <= 1e-10:
        raise CarDomainError(f"zeta={zeta} makes the CAR precision singular")


def car_precision(spec: CarSpec) -> sparse.csr_matrix:
    g = spec.graph
    if spec.weighting is Weighting.STANDARD:
        diag = sparse.identity(g.n_sites, format="csr")
    else:
        diag = sparse.diags(g.degree.astype(float), format="csr")
    return ((diag - spec.zeta * g.adjacency) / spec.sigma2).tocsr()


def log_det_terms(graph: NeighborhoodGraph, zeta: float, weighting=Weighting.STANDARD) -> float:
    """``log|D - zeta A|`` (or ``log|I - zeta A|``), without the variance factor."""
    spectrum = _spectrum(graph, weighting)
    value = float(np.sum(np.log1p(-zeta * spectrum)))
    if Weighting(weighting) is Weighting.DEGREE_WEIGHTED:
        value += float(np.sum(np.log(graph.degree)))
    return value


def car_log_det_precision(spec: CarSpec) -> float:
    """Log-determinant of the CAR precision from the cached spectrum."""
    return -spec.n_sites * np.log(spec.sigma2) + log_det_terms(
        spec.graph, spec.zeta, spec.weighting
    )


def quadratic_form(spec: CarSpec, centered: np.ndarray) -> float:
    """``sum_t x_t^T Q x_t`` over the columns of ``centered``, touching only edges."""
    g = spec.graph
    if spec.weighting is Weighting.STANDARD:
        diag_part = np.sum(centered**2)
    else:
        diag_part = np.sum(g.degree[:, None] * centered**2)
    # x^T A x = 2 * sum over edges x_i x_j
    edges = np.asarray(g.edges)
    edge_part = 2.0 * np.sum(centered[edges[:, 0]] * centered[edges[:, 1]])
    return float((diag_part - spec.zeta * edge_part) / spec.sigma2)


def car_log_density(y, spec: CarSpec) -> float:
    """Joint log-density of independent CAR slices.

    ``y`` is a :class:`LatentPanel`, an ``n`` vector (one slice) or an
    ``n x T`` matrix of T independent slices.
    """
    values = y.values if isinstance(y, LatentPanel) else np.asarray(y, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.ndim != 2 or values.shape[0] != spec.n_sites:
        raise ValueError(
            f"latent shape {values.shape} does not match {spec.n_sites} sites"
        )
    if not np.all(np.isfinite(values)):
        raise ValueError("latent values must be finite")
    n, t = values.shape
    centered = values - spec.alpha[:, None]
    return (
        -0.5 * n * t * LOG_2PI
        + 0.5 * t * car_log_det_precision(spec)
        - 0.5 * quadratic_form(spec, centered)
    )


def car_factor(graph: NeighborhoodGraph, zeta: float, sigma2: float,
               weighting=Weighting.STANDARD) -> np.ndarray:
    weighting = Weighting(weighting)
    scale = np.sqrt(sigma2) / np.sqrt(1.0 - zeta * _spectrum(graph, weighting))
    if weighting is Weighting.STANDARD:
        return graph.eigenvectors * scale[None, :]
    dinv = 1.0 / np.sqrt(graph.degree)
    return dinv[:, None] * graph.normalized_eigenvectors * scale[None, :]


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_car(spec: CarSpec, t_slices: int, rng_seed) -> LatentPanel:
    """Exact draw of ``t_slices`` independent slices via the spectral square root.

    ``rng_seed`` may be an integer seed or a caller-owned ``Generator``.
    """
    if int(t_slices) < 1:
        raise ValueError("t_slices must be positive")
    rng = as_generator(rng_seed)
    eps = rng.standard_normal((spec.n_sites, int(t_slices)))
    values = spec.alpha[:, None] + spec.factor() @ eps
    return LatentPanel(values)


def sample_car_field(spec: CarSpec, rng_seed) -> LatentPanel:
    """A single time-invariant field U."""
    panel = sample_car(spec, 1, rng_seed)
    return LatentPanel(panel.values[:, 0], time_invariant=True)


def marginal_sigma(spec: CarSpec, i: int, j: int) -> float:
    """Entry ``(i, j)`` of the CAR covariance via a sparse solve against ``e_j``."""
    n = spec.n_sites
    for k in (i, j):
        if not 0 <= int(k) < n:
            raise IndexError(f"site {k} out of range [0, {n})")
    e = np.zeros(n)
    e[int(j)] = 1.0
    column = spsolve(car_precision(spec).tocsc(), e)
    return float(column[int(i)])


def marginal_variances(spec: CarSpec) -> np.ndarray:
    """Diagonal of the covariance, from the spectral factor."""
    r = spec.factor()
    return np.einsum("ij,ij->i", r, r)
