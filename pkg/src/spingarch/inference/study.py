"""Simulate once from a generator, fit several variants, tabulate intervals and p-values."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from ..process import (CovariateSpingarch, Ingarch11, ModelSpec, Spingarch,
                       TimeInvariantSpingarch, simulate)
from ..stats import CHECK_NAMES
from .fit import FitResult, fit
from .hmc import HmcSettings
from .ppc import PredictiveReport, posterior_predictive


def generator_truth(model: ModelSpec) -> dict:
    """True values under the names the fitted variants report."""
    v = model.variant
    out = {"eta": model.params.eta, "kappa": model.params.kappa}
    if isinstance(v, Ingarch11):
        d = np.asarray(v.d, dtype=float)
        if np.allclose(d, d.flat[0]):
            out["alpha"] = float(np.log(d.flat[0]))
    elif isinstance(v, Spingarch):
        alpha = np.asarray(v.car.alpha, dtype=float)
        if np.allclose(alpha, alpha.flat[0]):
            out["alpha"] = float(alpha.flat[0])
        out["sigma2"] = v.car.sigma2
        out["zeta"] = v.car.zeta
    elif isinstance(v, CovariateSpingarch):
        for name, b in zip(v.covariate_names, np.atleast_1d(v.beta)):
            out[f"beta_{name}"] = float(b)
        out["sigma2_ind"] = v.sigma2_ind
        out["sigma2_sp"] = v.weighted_car.sigma2
    return out


def generator_name(model: ModelSpec) -> str:
    v = model.variant
    if isinstance(v, TimeInvariantSpingarch):
        return "ti-spingarch"
    if isinstance(v, Spingarch):
        return "spingarch"
    if isinstance(v, CovariateSpingarch):
        return "cov-spingarch"
    return "ingarch"


@dataclass
class StudyReport:
    generator: str
    truth: dict
    fits: dict
    checks: dict

    def parameter_rows(self):
        for variant, res in self.fits.items():
            for row in res.report.rows():
                true = self.truth.get(row["parameter"])
                row = {"variant": variant, **row, "true": "" if true is None else true,
                       "covered": "" if true is None else int(row["lower"] <= true <= row["upper"])}
                yield row

    def check_rows(self):
        for variant, rep in self.checks.items():
            for row in rep.rows():
                yield {"variant": variant, **row}

    def interval_table(self) -> str:
        """Parameters by fitted variant, cells ``(lower, upper)``."""
        variants = list(self.fits)
        names = []
        for res in self.fits.values():
            names += [n for n in res.report.names if n not in names]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter", "true"] + variants)
        for name in names:
            cells = []
            for v in variants:
                rep = self.fits[v].report
                if name in rep.names:
                    k = rep.names.index(name)
                    cells.append(f"({rep.lower[k]:.3g}, {rep.upper[k]:.3g})")
                else:
                    cells.append("-")
            true = self.truth.get(name)
            w.writerow([name, "" if true is None else f"{true:g}"] + cells)
        return buf.getvalue()

    def p_value_table(self) -> str:
        """Statistics by fitted variant, cells are p-values."""
        variants = list(self.checks)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["statistic"] + variants)
        for name in CHECK_NAMES:
            w.writerow([name] + [f"{self.checks[v].checks[name].p_value:.3f}" for v in variants])
        return buf.getvalue()


def misspecification_study(generator: ModelSpec, fitted, graph, t_total: int = 100,
                           burn_in: int = 500, seed: int = 0, chains: int = 2,
                           iterations: int = 1000, warmup: int = 1000, n_reps: int = 200,
                           covariates=None, covariate_names=None,
                           settings: HmcSettings | None = None) -> StudyReport:
    """Simulate a panel from ``generator`` and fit every variant in ``fitted``."""
    fitted = list(fitted)
    if not fitted:
        raise ValueError("no variants to fit")
    data_ss, *fit_ss = np.random.SeedSequence(seed).spawn(1 + len(fitted))
    panel = simulate(generator, t_total, burn_in=burn_in, rng_seed=data_ss)
    fits: dict[str, FitResult] = {}
    checks: dict[str, PredictiveReport] = {}
    for variant, ss in zip(fitted, fit_ss):
        fit_seed, ppc_seed = (int(x) for x in ss.generate_state(2))
        res = fit(variant, panel, graph, covariates=covariates, chains=chains,
                  iterations=iterations, warmup=warmup, seed=fit_seed, settings=settings,
                  covariate_names=covariate_names)
        fits[variant] = res
        checks[variant] = posterior_predictive(res.chains, res.posterior, n_reps, ppc_seed)
    return StudyReport(generator_name(generator), generator_truth(generator), fits, checks)
