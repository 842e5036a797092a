"""Multi-chain HMC fitting and posterior summaries.

Seed splitting: ``SeedSequence(seed).spawn(chains)`` gives one child per
chain; each child spawns an HMC stream (initial point, momenta, jitter,
accept tests) and a Gibbs stream for parameters drawn from closed-form
conditionals.  Results therefore depend
only on ``(seed, chains)``, never on scheduling.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import effective_sample_size, split_rhat
from .hmc import ChainOutput, HmcSettings, sample_chain
from .posterior import Posterior, make_posterior

MAX_DIVERGENCE_RATE = 0.2


class FitError(RuntimeError):
    """Sampler failure, e.g. too many divergent transitions."""


@dataclass
class PosteriorChains:
    """Retained draws of the reported parameters.

    ``draws`` has shape ``(chains, iterations, len(names))``; ``latent_means``
    holds each chain's posterior mean of the natural-scale latent fields and
    ``latents`` every retained latent draw when requested.
    """

    names: list
    draws: np.ndarray
    meta: dict = field(default_factory=dict)
    latent_means: list = field(default_factory=list)
    latents: list | None = None

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_iterations(self) -> int:
        return self.draws.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, :, self.names.index(name)]

    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, len(self.names))

    def draw_dicts(self):
        """Reported parameters of every draw, chain-major."""
        for row in self.flat():
            yield dict(zip(self.names, (float(v) for v in row)))


@dataclass
class FitReport:
    names: list
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    rhat: np.ndarray
    ess: np.ndarray
    divergences: int
    n_draws: int

    def covers(self, truth: dict) -> dict:
        """Which true values fall inside their 95% interval."""
        out = {}
        for k, name in enumerate(self.names):
            if name in truth:
                out[name] = bool(self.lower[k] <= truth[name] <= self.upper[k])
        return out

    def rows(self):
        for k, name in enumerate(self.names):
            yield {"parameter": name, "mean": float(self.mean[k]),
                   "lower": float(self.lower[k]), "upper": float(self.upper[k]),
                   "rhat": float(self.rhat[k]), "ess": float(self.ess[k])}


@dataclass
class FitResult:
    chains: PosteriorChains
    report: FitReport
    posterior: Posterior


def summarize(chains: PosteriorChains, divergences: int = 0) -> FitReport:
    d = chains.draws
    flat = chains.flat()
    k = len(chains.names)
    rhat = np.array([split_rhat(d[:, :, j]) if d.shape[1] >= 4 else np.nan for j in range(k)])
    ess = np.array([effective_sample_size(d[:, :, j]) for j in range(k)])
    lower, upper = np.quantile(flat, [0.025, 0.975], axis=0)
    return FitReport(list(chains.names), flat.mean(axis=0), lower, upper, rhat, ess,
                     int(divergences), flat.shape[0])


class _Extractor:
    """Maps a state to its reported vector and accumulates latent means."""

    def __init__(self, posterior: Posterior, keep_latents: bool, rng: np.random.Generator):
        self.posterior = posterior
        self.rng = rng
        self.keep = keep_latents
        self.sums = None
        self.count = 0
        self.kept = []

    def __call__(self, q):
        draw = self.posterior.complete(q, self.rng)
        rep = self.posterior.reported(draw.theta)
        lat = draw.latents
        if lat:
            if self.sums is None:
                self.sums = {k: np.zeros_like(np.asarray(v, float)) for k, v in lat.items()}
            for k, v in lat.items():
                self.sums[k] += v
            if self.keep:
                self.kept.append({k: np.array(v, copy=True) for k, v in lat.items()})
        self.count += 1
        return np.array([rep[name] for name in self.posterior.parameter_names], dtype=float)

    def means(self):
        if self.sums is None:
            return {}
        return {k: v / max(self.count, 1) for k, v in self.sums.items()}


def _run_chain(posterior: Posterior, seed_seq, warmup, iterations, settings, keep_latents):
    hmc_ss, gibbs_ss = seed_seq.spawn(2)
    rng = np.random.default_rng(hmc_ss)
    extractor = _Extractor(posterior, keep_latents, np.random.default_rng(gibbs_ss))
    q0 = posterior.initial_point(rng)
    out: ChainOutput = sample_chain(posterior.logp_grad, q0, warmup, iterations, rng,
                                    settings, extract=extractor)
    out.final_q = None
    return out, extractor.means(), (extractor.kept if keep_latents else None)


def fit(variant: str, data, graph=None, covariates=None, priors=None, chains: int = 4,
        iterations: int = 1000, warmup: int = 1000, seed: int = 0,
        settings: HmcSettings | None = None, likelihood_weight: float = 1.0,
        keep_latents: bool = False, covariate_names=None, n_jobs: int = 1,
        lambda0=None) -> FitResult:
    """Sample the joint posterior of ``variant`` given an ``n x T`` panel.

    Raises
    ------
    FitError
        If more than 20% of post-warmup transitions diverge.
    """
    if chains < 2:
        raise ValueError("need at least two chains for R-hat")
    if iterations < 1 or warmup < 0:
        raise ValueError("iterations must be positive and warmup non-negative")
    settings = settings or HmcSettings()
    posterior = make_posterior(variant, data, graph, covariates, priors, likelihood_weight,
                               covariate_names, lambda0)
    children = np.random.SeedSequence(seed).spawn(chains)
    args = [(posterior, child, warmup, iterations, settings, keep_latents) for child in children]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_chain, *zip(*args)))
    else:
        results = [_run_chain(*a) for a in args]

    outputs = [r[0] for r in results]
    draws = np.stack([np.asarray(o.draws) for o in outputs])
    divergences = int(sum(o.divergent.sum() for o in outputs))
    meta = {
        "variant": variant, "seed": int(seed), "chains": int(chains),
        "warmup": int(warmup), "iterations": int(iterations),
        "likelihood_weight": float(likelihood_weight),
        "step_size": [float(o.step_size) for o in outputs],
        "mean_accept": [float(o.accept_prob.mean()) for o in outputs],
        "mean_leapfrog": [float(o.n_leapfrog.mean()) for o in outputs],
        "divergent": [int(o.divergent.sum()) for o in outputs],
        "adaptation": [o.adaptation for o in outputs],
        "trajectory_length": settings.trajectory_length,
        "lambda0": ("stationary" if posterior.fixed_lambda0 is None
                    else [float(v) for v in posterior.fixed_lambda0]),
    }
    pc = PosteriorChains(list(posterior.parameter_names), draws, meta,
                         [r[1] for r in results],
                         [r[2] for r in results] if keep_latents else None)
    report = summarize(pc, divergences)
    rate = divergences / float(chains * iterations)
    if rate > MAX_DIVERGENCE_RATE:
        raise FitError(f"{rate:.0%} of post-warmup transitions diverged; "
                       "retry with a smaller step size (higher target acceptance)")
    return FitResult(pc, report, posterior)
