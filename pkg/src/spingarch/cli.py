"""Command-line entry point.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
Commands that write files also write ``manifest.json``; ``replay`` reruns a
manifest and checks every output byte for byte.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import io
from .graph import torus_grid
from .latent import CarSpec, Weighting, marginal_sigma
from .moments import (lag_h_autocorrelation, lag_h_autocovariance, spatial_correlation,
                      spatial_covariance, stationary_mean, stationary_variance,
                      variance_autocorr_tradeoff)
from .process import (CovariateSpingarch, Ingarch11, ModelSpec, ProcessParams, Spingarch,
                      TimeInvariantSpingarch, simulate)
from .stats import STATISTIC_DEFINITIONS, all_statistics

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
VARIANT_CHOICES = ("ingarch", "spingarch", "ti-spingarch", "cov-spingarch")


# -- configuration -> model ---------------------------------------------------

def model_from_config(cfg: io.Config, base_dir=None):
    """Build ``(ModelSpec, graph, covariate names)`` from ``[graph]``, ``[model]`` and friends."""
    graph = io.graph_from_config(cfg, base_dir)
    variant = cfg.get_str("model", "variant", choices=VARIANT_CHOICES)
    try:
        params = ProcessParams(cfg.get_float("model", "eta"), cfg.get_float("model", "kappa"))
    except ValueError as exc:
        if isinstance(exc, io.ConfigError):
            raise
        cfg.fail("model", "eta", str(exc))
    names = None
    try:
        if variant == "ingarch":
            v = Ingarch11(cfg.get_float("model", "d"), graph.n_sites, graph=graph)
        elif variant in ("spingarch", "ti-spingarch"):
            weighting = cfg.get_str("latent", "weighting", "standard",
                                    choices=("standard", "degree-weighted"))
            car = CarSpec(graph, cfg.get_float("latent", "alpha", 0.0),
                          cfg.get_float("latent", "zeta"), cfg.get_float("latent", "sigma2"),
                          Weighting.STANDARD if weighting == "standard" else Weighting.DEGREE_WEIGHTED)
            v = TimeInvariantSpingarch(car) if variant == "ti-spingarch" else Spingarch(car)
        else:
            path = Path(cfg.raw("covariates", "file"))
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            x, names = io.read_covariates(path, graph.n_sites)
            beta = cfg.get_floats("covariates", "beta")
            if len(beta) != x.shape[1]:
                cfg.fail("covariates", "beta", f"{len(beta)} coefficients for {x.shape[1]} columns")
            car = CarSpec(graph, 0.0, cfg.get_float("latent", "zeta", 0.999),
                          cfg.get_float("latent", "sigma2_sp"), Weighting.DEGREE_WEIGHTED)
            v = CovariateSpingarch(beta, x, cfg.get_float("latent", "sigma2_ind"), car, tuple(names))
    except io.ConfigError:
        raise
    except ValueError as exc:
        raise io.ConfigError(f"invalid model settings: {exc}", cfg.path) from exc
    return ModelSpec(v, params), graph, names


def _config_from_dict(data: dict, path="<manifest>") -> io.Config:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(data)
    return io.Config(path, parser, {})


# -- commands ------------------------------------------------------------------

def run_simulate(params: dict, out_dir: Path) -> dict:
    cfg = _config_from_dict(params["config"], params.get("config_path", "<config>"))
    model, graph, _ = model_from_config(cfg, params.get("base_dir"))
    t_total = cfg.get_int("simulation", "t_total")
    burn_in = cfg.get_int("simulation", "burn_in", 500)
    seed = cfg.get_int("simulation", "seed")
    panel = simulate(model, t_total, burn_in=burn_in, rng_seed=seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {"counts": out_dir / "counts.csv", "edges": out_dir / "edges.txt",
               "latent": out_dir / "latent.csv"}
    io.write_counts(outputs["counts"], panel.counts)
    io.write_edges(outputs["edges"], graph)
    fields = {}
    if panel.latent is not None:
        fields["Y"] = panel.latent.values
    if panel.field is not None:
        fields["U"] = panel.field.values
    io.write_latent(outputs["latent"], fields)
    return outputs


def _load_data(params: dict):
    graph = io.read_edges(params["edges"])
    counts = io.read_counts(params["counts"], graph.n_sites)
    covariates = names = None
    if params.get("covariates"):
        covariates, names = io.read_covariates(params["covariates"], graph.n_sites)
    return graph, counts, covariates, names


def run_fit(params: dict, out_dir: Path) -> dict:
    from .inference.fit import fit
    from .inference.priors import PriorSpec

    graph, counts, covariates, names = _load_data(params)
    priors = PriorSpec.from_overrides(params.get("prior") or [])
    res = fit(params["model"], counts, graph, covariates, priors, chains=params["chains"],
              iterations=params["iters"], warmup=params["warmup"], seed=params["seed"],
              covariate_names=names)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {"chains": out_dir / "chains.csv", "report": out_dir / "report.csv"}
    io.write_chains(outputs["chains"], res.chains)
    io.write_report(outputs["report"], res.report)
    if res.chains.latent_means and res.chains.latent_means[0]:
        outputs["latent"] = out_dir / "latent_mean.csv"
        pooled = {k: np.mean([m[k] for m in res.chains.latent_means], axis=0)
                  for k in res.chains.latent_means[0]}
        io.write_latent(outputs["latent"], pooled)
    params["_summary"] = {"divergences": res.report.divergences,
                          "max_rhat": float(np.nanmax(res.report.rhat))}
    return outputs


def run_ppc(params: dict, out_dir: Path) -> dict:
    from .inference.posterior import make_posterior
    from .inference.ppc import posterior_predictive
    from .inference.priors import PriorSpec

    graph, counts, covariates, names = _load_data(params)
    chains = io.read_chains(params["chains_csv"])
    priors = PriorSpec.from_overrides(params.get("prior") or [])
    post = make_posterior(params["model"], counts, graph, covariates, priors, covariate_names=names)
    if list(chains.names) != list(post.parameter_names):
        raise ValueError(f"chains hold {chains.names}, model {params['model']} "
                         f"expects {post.parameter_names}")
    report = posterior_predictive(chains, post, params["reps"], params["seed"])
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {"checks": out_dir / "checks.csv"}
    io.write_checks(outputs["checks"], report)
    return outputs


def run_study(params: dict, out_dir: Path) -> dict:
    from .inference.hmc import HmcSettings
    from .inference.study import misspecification_study

    cfg = _config_from_dict(params["config"], params.get("config_path", "<config>"))
    model, graph, names = model_from_config(cfg, params.get("base_dir"))
    fitted = [v.strip() for v in cfg.raw("study", "fitted").split(",") if v.strip()]
    for v in fitted:
        if v not in VARIANT_CHOICES:
            cfg.fail("study", "fitted", f"unknown variant {v!r}")
    covariates = None
    if "cov-spingarch" in fitted:
        if not isinstance(model.variant, CovariateSpingarch):
            cfg.fail("study", "fitted", "cov-spingarch needs a covariate generator")
        covariates = model.variant.covariates
    report = misspecification_study(
        model, fitted, graph, t_total=cfg.get_int("simulation", "t_total"),
        burn_in=cfg.get_int("simulation", "burn_in", 500), seed=cfg.get_int("simulation", "seed"),
        chains=cfg.get_int("study", "chains", 2), iterations=cfg.get_int("study", "iterations", 1000),
        warmup=cfg.get_int("study", "warmup", 1000), n_reps=cfg.get_int("study", "n_reps", 200),
        covariates=covariates, covariate_names=names,
        settings=HmcSettings(trajectory_length=cfg.get_float("study", "trajectory_length", 3.0)))
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {"intervals": out_dir / "intervals.csv", "p_values": out_dir / "p_values.csv",
               "parameters": out_dir / "parameters.csv", "checks": out_dir / "checks.csv"}
    outputs["intervals"].write_text(report.interval_table())
    outputs["p_values"].write_text(report.p_value_table())
    for key, rows in (("parameters", list(report.parameter_rows())),
                      ("checks", list(report.check_rows()))):
        with open(outputs[key], "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return outputs


RUNNERS = {"simulate": run_simulate, "fit": run_fit, "ppc": run_ppc, "study": run_study}


def _input_hashes(params: dict) -> dict:
    return {k: io.file_sha256(params[k]) for k in ("counts", "edges", "covariates", "chains_csv")
            if params.get(k)}


def _execute(command: str, params: dict, out_dir: Path) -> dict:
    params = dict(params)
    outputs = RUNNERS[command](params, out_dir)
    extra = params.pop("_summary", None)
    hashes = {k: io.file_sha256(p) for k, p in outputs.items()}
    manifest = io.build_manifest(command, params.get("seed"), params, hashes, extra)
    io.write_manifest(out_dir / "manifest.json", manifest)
    return manifest


def _absolute(path):
    return None if path is None else str(Path(path).resolve())


def _ini_params(path) -> dict:
    cfg = io.read_config(path)
    seed = cfg.get_int("simulation", "seed") if cfg.has("simulation", "seed") else None
    return {"config": cfg.as_dict(), "config_path": str(path),
            "base_dir": str(Path(path).resolve().parent), "seed": seed}


def _checked_ini(path):
    """Parse and validate a config up front so errors name the file line."""
    params = _ini_params(path)
    cfg = io.read_config(path)
    model_from_config(cfg, Path(path).resolve().parent)
    cfg.get_int("simulation", "t_total")
    cfg.get_int("simulation", "burn_in", 500)
    return params


def cmd_simulate(args):
    params = _checked_ini(args.config)
    return _execute("simulate", params, Path(args.out))


def cmd_study(args):
    params = _checked_ini(args.config)
    return _execute("study", params, Path(args.out))


def cmd_fit(args):
    params = {"model": args.model, "counts": _absolute(args.counts), "edges": _absolute(args.edges),
              "covariates": _absolute(args.covariates), "chains": args.chains, "iters": args.iters,
              "warmup": args.warmup, "seed": args.seed, "prior": list(args.prior or [])}
    if args.model == "cov-spingarch" and not args.covariates:
        raise ValueError("cov-spingarch needs --covariates")
    if args.chains < 2:
        raise ValueError("--chains must be at least 2")
    params["inputs"] = _input_hashes(params)
    return _execute("fit", params, Path(args.out))


def cmd_ppc(args):
    params = {"model": args.model, "counts": _absolute(args.counts), "edges": _absolute(args.edges),
              "covariates": _absolute(args.covariates), "chains_csv": _absolute(args.chains),
              "reps": args.reps, "seed": args.seed, "prior": list(args.prior or [])}
    params["inputs"] = _input_hashes(params)
    manifest = _execute("ppc", params, Path(args.out))
    sys.stdout.write((Path(args.out) / "checks.csv").read_text())
    return manifest


def cmd_stats(args):
    graph = io.read_edges(args.edges)
    counts = io.read_counts(args.counts, graph.n_sites)
    stats = all_statistics(counts, graph)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["statistic", "value", "definition"])
    for name, value in stats.items():
        w.writerow([name, repr(float(value)), STATISTIC_DEFINITIONS[name]])


def cmd_moments(args):
    rows = []
    if args.vmr is not None:
        for model in ("spingarch", "ingarch"):
            iv = variance_autocorr_tradeoff(args.vmr, model=model)
            rows += [(f"{model}_lag1_autocorr_lower", iv.lower), (f"{model}_lag1_autocorr_upper", iv.upper)]
    if args.eta is not None or args.kappa is not None:
        if args.eta is None or args.kappa is None:
            raise ValueError("--eta and --kappa go together")
        params = ProcessParams(args.eta, args.kappa)
        i = args.site
        sigma_ii = 0.0
        car = None
        if args.sigma2 is not None:
            if args.torus:
                try:
                    r, c = (int(v) for v in args.torus.lower().split("x"))
                except ValueError:
                    raise ValueError(f"--torus {args.torus!r} is not of the form RxC") from None
                graph = torus_grid(r, c)
            elif args.edges:
                graph = io.read_edges(args.edges)
            else:
                raise ValueError("--sigma2 needs --torus or --edges")
            car = CarSpec(graph, args.alpha, args.zeta, args.sigma2)
            sigma_ii = marginal_sigma(car, i, i)
        alpha = args.alpha
        rows += [("mean", stationary_mean(alpha, sigma_ii, params)),
                 ("variance", stationary_variance(alpha, sigma_ii, params))]
        for h in range(1, args.max_lag + 1):
            rows.append((f"autocov_lag{h}", lag_h_autocovariance(alpha, sigma_ii, params, h)))
            rows.append((f"autocorr_lag{h}", lag_h_autocorrelation(alpha, sigma_ii, params, h)))
        if args.pair is not None:
            if car is None:
                raise ValueError("--pair needs --sigma2")
            j = args.pair
            sigma_ij = marginal_sigma(car, i, j)
            sigma_jj = marginal_sigma(car, j, j)
            rows.append((f"spatial_cov_{i}_{j}",
                         spatial_covariance(alpha, sigma_ii, sigma_ij, params, sigma_jj)))
            if np.isclose(sigma_ii, sigma_jj):
                rows.append((f"spatial_corr_{i}_{j}",
                             spatial_correlation(alpha, sigma_ii, sigma_ij, params)))
    if not rows:
        raise ValueError("nothing to compute: give --vmr and/or --eta/--kappa")
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["quantity", "value"])
    for name, value in rows:
        w.writerow([name, repr(float(value))])


def cmd_replay(args):
    manifest = io.read_manifest(args.manifest)
    command = manifest["command"]
    if command not in RUNNERS:
        raise io.ManifestError(f"cannot replay command {command!r}")
    params = manifest["config"]
    for key, digest in (params.get("inputs") or {}).items():
        if io.file_sha256(params[key]) != digest:
            raise io.ManifestError(f"input {key} ({params[key]}) changed since the run")
    out = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="replay-"))
    fresh = _execute(command, params, out)
    mismatched = [k for k, h in manifest["outputs"].items() if fresh["outputs"].get(k) != h]
    if mismatched:
        raise io.ManifestError(f"replay differs in: {', '.join(mismatched)}")
    print(f"replay of {command} reproduced {len(manifest['outputs'])} outputs in {out}")
    return fresh


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spingarch", description="Spatial INGARCH count models")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a panel from an INI config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="sample the posterior of one variant")
    f.add_argument("--model", required=True, choices=VARIANT_CHOICES)
    f.add_argument("--counts", required=True)
    f.add_argument("--edges", required=True)
    f.add_argument("--covariates")
    f.add_argument("--chains", type=int, default=4)
    f.add_argument("--iters", type=int, default=1000)
    f.add_argument("--warmup", type=int, default=1000)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--prior", action="append", metavar="KEY=VALUE",
                   help="prior override, e.g. location_sd=5 (repeatable)")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("ppc", help="posterior predictive p-values from a chains CSV")
    c.add_argument("--model", required=True, choices=VARIANT_CHOICES)
    c.add_argument("--chains", required=True)
    c.add_argument("--counts", required=True)
    c.add_argument("--edges", required=True)
    c.add_argument("--covariates")
    c.add_argument("--reps", type=int, default=200)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--prior", action="append", metavar="KEY=VALUE")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_ppc)

    t = sub.add_parser("stats", help="summary statistics of a panel (CSV to stdout)")
    t.add_argument("--counts", required=True)
    t.add_argument("--edges", required=True)
    t.set_defaults(func=cmd_stats)

    m = sub.add_parser("moments", help="closed-form moments (CSV to stdout)")
    m.add_argument("--eta", type=float)
    m.add_argument("--kappa", type=float)
    m.add_argument("--alpha", type=float, default=0.0)
    m.add_argument("--sigma2", type=float, help="CAR variance; omit for INGARCH")
    m.add_argument("--zeta", type=float, default=0.0)
    m.add_argument("--torus", help="RxC torus lattice")
    m.add_argument("--edges")
    m.add_argument("--site", type=int, default=0)
    m.add_argument("--pair", type=int, help="second site for spatial covariance")
    m.add_argument("--max-lag", type=int, default=1)
    m.add_argument("--vmr", type=float, help="variance-to-mean ratio for the tradeoff interval")
    m.set_defaults(func=cmd_moments)

    st = sub.add_parser("study", help="simulate once and fit several variants")
    st.add_argument("--config", required=True)
    st.add_argument("--out", required=True)
    st.set_defaults(func=cmd_study)

    r = sub.add_parser("replay", help="rerun a manifest and verify its outputs")
    r.add_argument("--manifest", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    from .inference.fit import FitError

    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (FitError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
