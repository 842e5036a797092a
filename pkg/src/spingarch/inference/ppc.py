"""Posterior predictive p-values.

Each replicate takes one posterior draw, redraws the latent fields from
their model, starts from the observed first column with ``lambda0`` set as
in the fit (the stationary mean given the redrawn site levels) and
simulates the remaining ``T - 1`` columns.
The p-value is ``Pr(T(rep) >= T(obs))``; replicates on which a statistic
is undefined are excluded from that statistic and counted.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..process import Simulator
from ..stats import ALL_NAMES, STATISTIC_DEFINITIONS, all_statistics
from .fit import PosteriorChains
from .posterior import Posterior


@dataclass
class StatisticCheck:
    name: str
    observed: float
    p_value: float
    q025: float
    q50: float
    q975: float
    n_used: int
    n_excluded: int


@dataclass
class PredictiveReport:
    checks: dict
    replicates: np.ndarray  # (n_reps, len(names)); NaN where undefined
    names: tuple = ALL_NAMES
    definitions: dict = field(default_factory=lambda: dict(STATISTIC_DEFINITIONS))

    def p_values(self) -> dict:
        return {k: c.p_value for k, c in self.checks.items()}

    def rows(self):
        for c in self.checks.values():
            yield {"statistic": c.name, "observed": c.observed, "p_value": c.p_value,
                   "q025": c.q025, "q50": c.q50, "q975": c.q975,
                   "n_used": c.n_used, "n_excluded": c.n_excluded}


def predictive_p_value(observed: float, replicates) -> tuple[float, int, int]:
    """``Pr(rep >= obs)`` over the defined replicates; returns ``(p, used, excluded)``."""
    reps = np.asarray(replicates, dtype=float)
    ok = np.isfinite(reps)
    used = int(ok.sum())
    if used == 0 or not np.isfinite(observed):
        return float("nan"), used, int(reps.size - used)
    return float(np.mean(reps[ok] >= observed)), used, int(reps.size - used)


def replicate_panel(posterior: Posterior, theta: dict, seed) -> np.ndarray:
    """One replicate with the observed panel's shape."""
    counts = np.asarray(getattr(posterior.data, "counts", posterior.data), dtype=float)
    spec = posterior.model_spec(theta)
    sim = Simulator(spec, seed, initial_counts=counts[:, 0])
    out = sim.run(counts.shape[1] - 1)
    return np.concatenate([counts[:, :1], out["counts"][:, 0, :]], axis=1)


def posterior_predictive(chains: PosteriorChains, posterior: Posterior, n_reps: int = 200,
                         seed: int = 0) -> PredictiveReport:
    """Compare observed statistics with those of ``n_reps`` replicated panels."""
    if chains.draws.size == 0:
        raise ValueError("no posterior draws")
    if n_reps < 1:
        raise ValueError("n_reps must be positive")
    if posterior.graph is None:
        raise ValueError("posterior predictive checks need the neighborhood graph")
    observed_panel = np.asarray(getattr(posterior.data, "counts", posterior.data))
    observed = all_statistics(observed_panel, posterior.graph)
    flat = chains.flat()
    root = np.random.SeedSequence(seed)
    pick_ss, rep_ss = root.spawn(2)
    picks = np.random.default_rng(pick_ss).choice(
        flat.shape[0], size=n_reps, replace=n_reps > flat.shape[0])
    seeds = rep_ss.spawn(n_reps)
    reps = np.empty((n_reps, len(ALL_NAMES)))
    for k, (idx, ss) in enumerate(zip(picks, seeds)):
        theta = posterior.theta_from_reported(dict(zip(chains.names, flat[idx])))
        panel = replicate_panel(posterior, theta, ss)
        stats = all_statistics(panel, posterior.graph)
        reps[k] = [stats[name] for name in ALL_NAMES]
    checks = {}
    for j, name in enumerate(ALL_NAMES):
        col = reps[:, j]
        p, used, excluded = predictive_p_value(observed[name], col)
        ok = col[np.isfinite(col)]
        q = np.quantile(ok, [0.025, 0.5, 0.975]) if ok.size else [np.nan] * 3
        checks[name] = StatisticCheck(name, float(observed[name]), p, float(q[0]), float(q[1]),
                                      float(q[2]), used, excluded)
    return PredictiveReport(checks, reps)
