"""Observable panel statistics used for posterior predictive checks.

``morans_i``, ``log_variance_mean_ratio``, ``diff_variance`` and
``mean_lag1_ar`` are the four checks T1..T4; ``max_count`` and
``zero_count`` are auxiliary.
"""
from __future__ import annotations

import numpy as np

from .graph import NeighborhoodGraph

# Pooling rules, recorded with every fitted output so p-values can be reproduced.
STATISTIC_DEFINITIONS = {
    "morans_i": "binary weights, n/S0 normalisation, per time slice, averaged over slices with nonzero variance",
    "log_vmr": "log(pooled sample variance (ddof=1) / pooled mean) over all cells",
    "diff_variance": "pooled sample variance (ddof=1) of Z(s,t) - Z(s,t-1) over all sites",
    "mean_lag1_ar": "per-site sample lag-1 autocorrelation, averaged over sites with nonzero variance",
    "max_count": "panel maximum",
    "zero_count": "number of zero cells",
}
CHECK_NAMES = ("morans_i", "log_vmr", "diff_variance", "mean_lag1_ar")
ALL_NAMES = CHECK_NAMES + ("max_count", "zero_count")


class UndefinedStatistic(ValueError):
    """Statistic undefined for this panel (e.g. every slice constant)."""


def _counts(panel) -> np.ndarray:
    counts = getattr(panel, "counts", panel)
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 2:
        raise ValueError("expected an n x T panel")
    return counts


def morans_i(panel, graph: NeighborhoodGraph) -> float:
    z = _counts(panel)
    if z.shape[0] != graph.n_sites:
        raise ValueError(f"panel has {z.shape[0]} sites, graph has {graph.n_sites}")
    dev = z - z.mean(axis=0, keepdims=True)
    denom = np.sum(dev**2, axis=0)
    edges = np.asarray(graph.edges)
    # sum_ij w_ij d_i d_j with symmetric binary weights
    numer = 2.0 * np.sum(dev[edges[:, 0]] * dev[edges[:, 1]], axis=0)
    keep = denom > 0
    if not keep.any():
        raise UndefinedStatistic("Moran's I undefined: every time slice is constant")
    s0 = 2.0 * len(edges)
    per_slice = graph.n_sites / s0 * numer[keep] / denom[keep]
    return float(per_slice.mean())


def variance_mean_ratio(panel) -> float:
    z = _counts(panel)
    mean = z.mean()
    if not mean > 0:
        raise UndefinedStatistic("variance-to-mean ratio undefined for an all-zero panel")
    return float(z.var(ddof=1) / mean)


def log_variance_mean_ratio(panel) -> float:
    ratio = variance_mean_ratio(panel)
    if ratio <= 0:
        raise UndefinedStatistic("log variance-to-mean ratio undefined for a constant panel")
    return float(np.log(ratio))


def diff_variance(panel) -> float:
    z = _counts(panel)
    if z.shape[1] < 2:
        raise UndefinedStatistic("need at least two time points")
    diffs = np.diff(z, axis=1)
    if diffs.size < 2:
        return 0.0
    return float(diffs.var(ddof=1))


def mean_lag1_ar(panel) -> float:
    z = _counts(panel)
    if z.shape[1] < 2:
        raise UndefinedStatistic("need at least two time points")
    dev = z - z.mean(axis=1, keepdims=True)
    denom = np.sum(dev**2, axis=1)
    keep = denom > 0
    if not keep.any():
        raise UndefinedStatistic("lag-1 autocorrelation undefined: every site is constant")
    numer = np.sum(dev[:, 1:] * dev[:, :-1], axis=1)
    return float(np.mean(numer[keep] / denom[keep]))


def max_count(panel) -> int:
    return int(_counts(panel).max())


def zero_count(panel) -> int:
    return int(np.sum(_counts(panel) == 0))


def all_statistics(panel, graph: NeighborhoodGraph) -> dict[str, float]:
    """Every statistic keyed by name; undefined ones map to NaN."""
    funcs = {
        "morans_i": lambda p: morans_i(p, graph),
        "log_vmr": log_variance_mean_ratio,
        "diff_variance": diff_variance,
        "mean_lag1_ar": mean_lag1_ar,
        "max_count": max_count,
        "zero_count": zero_count,
    }
    out = {}
    for name, func in funcs.items():
        try:
            out[name] = func(panel)
        except UndefinedStatistic:
            out[name] = float("nan")
    return out
