"""Conditional Poisson count layer: model specifications, forward simulation
and the closed-form recursion checks.

Every variant shares the intensity recursion::

    lambda_t = innovation_t + eta * Z_{t-1} + kappa * lambda_{t-1}
    Z_t | lambda_t ~ Poisson(lambda_t)

and differs only in how ``innovation_t = exp(g_t)`` is generated.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .graph import NeighborhoodGraph
from .latent import CarSpec, LatentPanel, Weighting, marginal_variances

DIVERGENCE_THRESHOLD = 1e12
DEFAULT_BURN_IN = 500


class ParameterError(ValueError):
    """Parameters outside the stationarity region or otherwise invalid."""


class SimulationDivergence(FloatingPointError):
    def __init__(self, site: int, time: int, value: float):
        super().__init__(
            f"intensity {value:.3g} at site {site}, step {time} exceeds "
            f"{DIVERGENCE_THRESHOLD:.0e}"
        )
        self.site = site
        self.time = time


@dataclass(frozen=True)
class ProcessParams:
    """Self-excitation ``eta`` and persistence ``kappa``; requires eta, kappa >= 0 and eta + kappa < 1."""

    eta: float
    kappa: float

    def __post_init__(self):
        eta, kappa = float(self.eta), float(self.kappa)
        if not (np.isfinite(eta) and np.isfinite(kappa)):
            raise ParameterError("eta and kappa must be finite")
        if eta < 0 or kappa < 0:
            raise ParameterError(f"eta={eta} and kappa={kappa} must be nonnegative")
        if eta + kappa >= 1.0:
            raise ParameterError(f"eta + kappa = {eta + kappa} must be < 1")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "kappa", kappa)

    @property
    def persistence(self) -> float:
        return self.eta + self.kappa


# -- model variants ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Ingarch11:
    """Constant (or per-site) innovation ``d``; no latent field."""

    d: float | np.ndarray
    n_sites: int
    graph: NeighborhoodGraph | None = None
    name = "ingarch"
    time_invariant = False

    def __post_init__(self):
        d = np.broadcast_to(np.asarray(self.d, dtype=float), (int(self.n_sites),)).copy()
        if not np.all(d > 0):
            raise ParameterError("INGARCH innovation d must be positive")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)
        if self.graph is not None and self.graph.n_sites != self.n_sites:
            raise ParameterError("graph size does not match n_sites")

    def mean_innovation(self) -> np.ndarray:
        return self.d


@dataclass(frozen=True, eq=False)
class Spingarch:
    """Fresh CAR field ``Y_t`` at every step."""

    car: CarSpec
    name = "spingarch"
    time_invariant = False

    @property
    def n_sites(self):
        return self.car.n_sites

    @property
    def graph(self):
        return self.car.graph

    def mean_innovation(self) -> np.ndarray:
        return np.exp(self.car.alpha + 0.5 * marginal_variances(self.car))


@dataclass(frozen=True, eq=False)
class TimeInvariantSpingarch(Spingarch):
    """One CAR field ``U`` drawn at the start and reused at every step."""

    name = "ti-spingarch"
    time_invariant = True


@dataclass(frozen=True, eq=False)
class CovariateSpingarch:
    """``g_t = X beta + Y_t + U`` with iid ``Y_t ~ N(0, sigma2_ind)`` and a degree-weighted CAR ``U``."""

    beta: np.ndarray
    covariates: np.ndarray
    sigma2_ind: float
    weighted_car: CarSpec
    covariate_names: tuple[str, ...] | None = None
    name = "cov-spingarch"
    time_invariant = False

    def __post_init__(self):
        x = np.array(self.covariates, dtype=float)
        beta = np.array(self.beta, dtype=float).ravel()
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != self.weighted_car.n_sites:
            raise ParameterError(
                f"covariate matrix has {x.shape[0]} rows, graph has "
                f"{self.weighted_car.n_sites} sites"
            )
        if x.shape[1] != beta.size:
            raise ParameterError(f"{beta.size} coefficients for {x.shape[1]} covariates")
        if not self.sigma2_ind > 0:
            raise ParameterError("sigma2_ind must be positive")
        if self.weighted_car.weighting is not Weighting.DEGREE_WEIGHTED:
            raise ParameterError("covariate model requires a degree-weighted CAR")
        if np.any(self.weighted_car.alpha != 0):
            raise ParameterError("weighted CAR component must have zero mean")
        names = self.covariate_names
        if names is None:
            names = tuple(f"x{k}" for k in range(beta.size))
        if len(names) != beta.size:
            raise ParameterError("covariate_names length mismatch")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "covariate_names", tuple(names))

    @property
    def n_sites(self):
        return self.weighted_car.n_sites

    @property
    def graph(self):
        return self.weighted_car.graph

    def linear_predictor(self) -> np.ndarray:
        return self.covariates @ self.beta

    def mean_innovation(self) -> np.ndarray:
        var_u = marginal_variances(self.weighted_car)
        return np.exp(self.linear_predictor() + 0.5 * self.sigma2_ind + 0.5 * var_u)


Variant = Ingarch11 | Spingarch | TimeInvariantSpingarch | CovariateSpingarch


@dataclass(frozen=True, eq=False)
class ModelSpec:
    variant: Variant
    params: ProcessParams
    lambda0: np.ndarray | None = None

    def __post_init__(self):
        if self.lambda0 is not None:
            lam = np.broadcast_to(np.asarray(self.lambda0, dtype=float), (self.n_sites,)).copy()
            if not np.all(lam > 0):
                raise ParameterError("lambda0 must be positive")
            object.__setattr__(self, "lambda0", lam)

    @property
    def n_sites(self) -> int:
        return self.variant.n_sites

    @property
    def name(self) -> str:
        return self.variant.name

    def stationary_mean(self) -> np.ndarray:
        """Per-site stationary mean ``E[exp g] / (1 - eta - kappa)``."""
        return self.variant.mean_innovation() / (1.0 - self.params.persistence)

    def initial_intensity(self) -> np.ndarray:
        return self.stationary_mean() if self.lambda0 is None else self.lambda0


# -- panels -----------------------------------------------------------------

@dataclass(eq=False)
class CountPanel:
    """``n x T`` counts with site labels and, for simulated panels, the generating state.

    ``initial_intensity`` and ``initial_counts`` are the state immediately
    before column 0; ``innovations`` holds ``exp(g_t)`` for each column.
    """

    counts: np.ndarray
    site_ids: Sequence[str] | None = None
    intensities: np.ndarray | None = None
    innovations: np.ndarray | None = None
    latent: LatentPanel | None = None
    field: LatentPanel | None = None
    initial_intensity: np.ndarray | None = None
    initial_counts: np.ndarray | None = None

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValueError("counts must be an n x T matrix")
        if counts.size and (not np.all(np.isfinite(counts)) or np.any(counts < 0)
                            or np.any(counts != np.round(counts))):
            raise ValueError("counts must be nonnegative integers")
        self.counts = counts.astype(np.int64)
        if self.site_ids is None:
            self.site_ids = [str(i) for i in range(counts.shape[0])]
        self.site_ids = [str(s) for s in self.site_ids]
        if len(self.site_ids) != counts.shape[0]:
            raise ValueError("site_ids length does not match counts")
        if self.intensities is not None:
            lam = np.asarray(self.intensities, dtype=float)
            if lam.shape != counts.shape or not np.all(lam > 0):
                raise ValueError("intensities must be positive and match counts")
            self.intensities = lam

    @property
    def n_sites(self) -> int:
        return self.counts.shape[0]

    @property
    def n_times(self) -> int:
        return self.counts.shape[1]


# -- pmf and recursion ------------------------------------------------------

def conditional_log_pmf(z, lam):
    """Poisson log mass ``z log(lam) - lam - log z!``; ``lam`` must be positive."""
    lam = np.asarray(lam, dtype=float)
    z = np.asarray(z)
    if np.any(~(lam > 0)):
        raise ValueError("Poisson intensity must be positive")
    if np.any(z < 0):
        raise ValueError("counts must be nonnegative")
    out = z * np.log(lam) - lam - gammaln(z + 1.0)
    return float(out) if out.ndim == 0 else out


def intensity_step(prev_lambda, prev_z, innovation, params: ProcessParams) -> np.ndarray:
    prev_lambda = np.asarray(prev_lambda, dtype=float)
    innovation = np.asarray(innovation, dtype=float)
    prev_z = np.asarray(prev_z, dtype=float)
    if not (np.all(np.isfinite(prev_lambda)) and np.all(np.isfinite(innovation))
            and np.all(np.isfinite(prev_z))):
        raise ValueError("non-finite input to intensity step")
    return innovation + params.eta * prev_z + params.kappa * prev_lambda


# -- simulation -------------------------------------------------------------

@dataclass
class SimulationState:
    lam: np.ndarray
    z: np.ndarray
    steps: int
    latent_rng: dict
    count_rng: dict
    fixed_log: np.ndarray | None
    field_values: np.ndarray | None


class Simulator:
    """Stepwise simulator with checkpointable state.

    Randomness comes from two streams spawned from ``rng_seed``: one for
    latent draws and one for Poisson counts. Variants with the same
    intensity path therefore consume the count stream identically.
    ``replicates`` runs independent copies side by side (arrays ``n x R``).
    """

    def __init__(self, model: ModelSpec, rng_seed=0, replicates: int = 1,
                 initial_intensity=None, initial_counts=None):
        self.model = model
        self.replicates = int(replicates)
        ss = rng_seed if isinstance(rng_seed, np.random.SeedSequence) else np.random.SeedSequence(rng_seed)
        latent_ss, count_ss = ss.spawn(2)
        self.latent_rng = np.random.default_rng(latent_ss)
        self.count_rng = np.random.default_rng(count_ss)
        n, r = model.n_sites, self.replicates
        variant = model.variant
        self._factor = None
        if isinstance(variant, Spingarch):
            self._factor = variant.car.factor()
        elif isinstance(variant, CovariateSpingarch):
            self._factor = variant.weighted_car.factor()

        # time-invariant components of the log-innovation
        self.field_values = None
        if isinstance(variant, Ingarch11):
            self.fixed_log = np.repeat(np.log(variant.d)[:, None], r, axis=1)
        elif isinstance(variant, TimeInvariantSpingarch):
            eps = self.latent_rng.standard_normal((n, r))
            self.field_values = variant.car.alpha[:, None] + self._factor @ eps
            self.fixed_log = self.field_values
        elif isinstance(variant, Spingarch):
            self.fixed_log = None
        elif isinstance(variant, CovariateSpingarch):
            eps = self.latent_rng.standard_normal((n, r))
            self.field_values = self._factor @ eps
            self.fixed_log = variant.linear_predictor()[:, None] + self.field_values
        else:
            raise TypeError(f"unknown model variant {type(variant).__name__}")

        if initial_intensity is not None:
            lam0 = initial_intensity
        elif model.lambda0 is None and self.field_values is not None:
            # stationary mean given the realised time-invariant field
            extra = 0.5 * variant.sigma2_ind if isinstance(variant, CovariateSpingarch) else 0.0
            lam0 = np.exp(self.fixed_log + extra) / (1.0 - model.params.persistence)
        else:
            lam0 = model.initial_intensity()
        self.lam = np.broadcast_to(np.asarray(lam0, dtype=float).reshape(n, -1), (n, r)).copy()
        if initial_counts is None:
            self.z = self.count_rng.poisson(self.lam).astype(float)
        else:
            self.z = np.broadcast_to(np.asarray(initial_counts, dtype=float).reshape(n, -1), (n, r)).copy()
        self.steps = 0

    def _log_innovation(self) -> np.ndarray | None:
        """Time-varying part of ``g_t`` (returns the draw, or None)."""
        variant = self.model.variant
        shape = (self.model.n_sites, self.replicates)
        if isinstance(variant, TimeInvariantSpingarch) or isinstance(variant, Ingarch11):
            return None
        eps = self.latent_rng.standard_normal(shape)
        if isinstance(variant, Spingarch):
            return variant.car.alpha[:, None] + self._factor @ eps
        return np.sqrt(variant.sigma2_ind) * eps

    def run(self, steps: int, record: bool = True) -> dict | None:
        """Advance ``steps`` steps; returns arrays of shape ``(n, R, steps)`` when recording."""
        steps = int(steps)
        params = self.model.params
        n, r = self.model.n_sites, self.replicates
        if record:
            counts = np.empty((n, r, steps), dtype=np.int64)
            lams = np.empty((n, r, steps))
            innovs = np.empty((n, r, steps))
            latents = np.empty((n, r, steps)) if self.fixed_log is None or isinstance(
                self.model.variant, CovariateSpingarch) else None
        for k in range(steps):
            drawn = self._log_innovation()
            if self.fixed_log is None:
                log_innov = drawn
            elif drawn is None:
                log_innov = self.fixed_log
            else:
                log_innov = self.fixed_log + drawn
            innov = np.exp(log_innov)
            lam = intensity_step(self.lam, self.z, innov, params)
            if np.any(lam > DIVERGENCE_THRESHOLD):
                site = int(np.argmax(lam.max(axis=1)))
                raise SimulationDivergence(site, self.steps, float(lam.max()))
            z = self.count_rng.poisson(lam)
            self.lam, self.z = lam, z.astype(float)
            self.steps += 1
            if record:
                counts[:, :, k] = z
                lams[:, :, k] = lam
                innovs[:, :, k] = innov
                if latents is not None:
                    latents[:, :, k] = drawn
        if record:
            return {"counts": counts, "intensities": lams, "innovations": innovs,
                    "latent": latents}
        return None

    def checkpoint(self) -> SimulationState:
        return SimulationState(
            lam=self.lam.copy(), z=self.z.copy(), steps=self.steps,
            latent_rng=copy.deepcopy(self.latent_rng.bit_generator.state),
            count_rng=copy.deepcopy(self.count_rng.bit_generator.state),
            fixed_log=None if self.fixed_log is None else self.fixed_log.copy(),
            field_values=None if self.field_values is None else self.field_values.copy(),
        )

    def restore(self, state: SimulationState) -> None:
        self.lam, self.z, self.steps = state.lam.copy(), state.z.copy(), state.steps
        self.latent_rng.bit_generator.state = copy.deepcopy(state.latent_rng)
        self.count_rng.bit_generator.state = copy.deepcopy(state.count_rng)
        self.fixed_log = None if state.fixed_log is None else state.fixed_log.copy()
        self.field_values = None if state.field_values is None else state.field_values.copy()


def simulate(model: ModelSpec, t_total: int, burn_in: int = DEFAULT_BURN_IN,
             rng_seed=0, site_ids=None) -> CountPanel:
    """Simulate ``t_total`` retained steps after discarding ``burn_in`` steps."""
    if int(t_total) < 1:
        raise ValueError("t_total must be positive")
    if int(burn_in) < 0:
        raise ValueError("burn_in must be nonnegative")
    sim = Simulator(model, rng_seed)
    sim.run(burn_in, record=False)
    init_lam, init_z = sim.lam[:, 0].copy(), sim.z[:, 0].copy()
    out = sim.run(t_total)
    latent = None
    if out["latent"] is not None:
        latent = LatentPanel(out["latent"][:, 0, :])
    field_panel = None
    if sim.field_values is not None:
        field_panel = LatentPanel(sim.field_values[:, 0], time_invariant=True)
    return CountPanel(
        counts=out["counts"][:, 0, :],
        site_ids=site_ids,
        intensities=out["intensities"][:, 0, :],
        innovations=out["innovations"][:, 0, :],
        latent=latent,
        field=field_panel,
        initial_intensity=init_lam,
        initial_counts=init_z,
    )


def simulate_batch(model: ModelSpec, t_total: int, replicates: int,
                   burn_in: int = DEFAULT_BURN_IN, rng_seed=0) -> np.ndarray:
    """Counts of ``replicates`` independent runs, shape ``(replicates, n, t_total)``."""
    sim = Simulator(model, rng_seed, replicates=replicates)
    sim.run(burn_in, record=False)
    return np.moveaxis(sim.run(t_total)["counts"], 1, 0)


def recursion_check(panel: CountPanel, model: ModelSpec, relative: bool = False) -> float:
    """Largest gap between the simulated intensities and their closed-form geometric sums.

    Time-varying variants are checked against the sum of discounted
    innovations; the time-invariant variant against the
    ``(1 - kappa^t) / (1 - kappa)`` multiple of ``exp(U)``.
    """
    if panel.intensities is None or panel.initial_intensity is None or (
            panel.innovations is None and panel.field is None):
        raise ValueError("panel has no retained latent draws; simulate it with spingarch.simulate")
    eta, kappa = model.params.eta, model.params.kappa
    z = panel.counts.astype(float)
    n, t_len = z.shape
    steps = np.arange(1, t_len + 1)
    lag = steps[:, None] - steps[None, :]
    discount = np.where(lag >= 0, kappa ** np.clip(lag, 0, None), 0.0)
    prev_z = np.concatenate([panel.initial_counts[:, None], z[:, :-1]], axis=1)
    excitation = eta * prev_z @ discount.T
    memory = panel.initial_intensity[:, None] * kappa ** steps[None, :]
    if isinstance(model.variant, TimeInvariantSpingarch):
        if panel.field is None:
            raise ValueError("time-invariant panel is missing its field U")
        baseline = np.exp(panel.field.values)[:, None] * (1.0 - kappa ** steps[None, :]) / (1.0 - kappa)
    else:
        baseline = panel.innovations @ discount.T
    closed = baseline + excitation + memory
    gap = np.abs(closed - panel.intensities)
    if relative:
        gap = gap / np.abs(panel.intensities)
    return float(gap.max())
