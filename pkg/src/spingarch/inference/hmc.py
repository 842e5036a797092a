"""Static-path HMC with jittered trajectory length, dual-averaging step size
and windowed diagonal mass-matrix adaptation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

MAX_ENERGY_ERROR = 1000.0


@dataclass
class HmcSettings:
    target_accept: float = 0.8
    trajectory_length: float = 3.0
    max_steps: int = 256
    jitter: float = 0.5
    # "diag", "dense", or "auto" (dense when the state has at most dense_max_dim entries)
    metric: str = "auto"
    dense_max_dim: int = 400
    # Stan-style warmup windows
    init_buffer: int = 75
    term_buffer: int = 50
    base_window: int = 25


@dataclass
class ChainOutput:
    draws: list
    accept_prob: np.ndarray
    divergent: np.ndarray
    n_leapfrog: np.ndarray
    step_size: float
    inv_mass: np.ndarray  # variances (diag) or covariance matrix (dense)
    warmup: int
    final_q: np.ndarray | None = None
    adaptation: list = field(default_factory=list)


class DualAveraging:
    def __init__(self, step_size: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size: float):
        self.mu = math.log(10.0 * step_size)
        self.h_bar = 0.0
        self.log_step = math.log(step_size)
        self.log_step_bar = 0.0
        self.count = 0

    def update(self, accept_prob: float) -> float:
        self.count += 1
        m = self.count
        w = 1.0 / (m + self.t0)
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob)
        self.log_step = self.mu - math.sqrt(m) / self.gamma * self.h_bar
        eta = m ** (-self.kappa)
        self.log_step_bar = eta * self.log_step + (1.0 - eta) * self.log_step_bar
        return math.exp(self.log_step)

    @property
    def final_step(self) -> float:
        return math.exp(self.log_step_bar)


def _adaptation_windows(warmup: int, s: HmcSettings) -> tuple[int, list[int]]:
    """First collected iteration and the (exclusive) window ends at which the mass matrix is updated."""
    init, term, base = s.init_buffer, s.term_buffer, s.base_window
    if warmup < 20:
        return warmup, []
    if init + term + base > warmup:
        init, term = int(0.15 * warmup), int(0.1 * warmup)
        base = warmup - init - term
    ends = []
    start, width = init, base
    last = warmup - term
    while start < last:
        end = start + width
        if end + 2 * width > last:
            end = last
        ends.append(end)
        start, width = end, 2 * width
    return init, ends


class Metric:
    """Euclidean kinetic energy with a diagonal or dense inverse mass matrix."""

    def __init__(self, inv_mass):
        self.inv_mass = np.asarray(inv_mass, dtype=float)
        self.dense = self.inv_mass.ndim == 2
        if self.dense:
            self.chol = np.linalg.cholesky(self.inv_mass)

    @classmethod
    def identity(cls, dim, dense=False):
        return cls(np.eye(dim) if dense else np.ones(dim))

    def velocity(self, p):
        return self.inv_mass @ p if self.dense else self.inv_mass * p

    def kinetic(self, p):
        return 0.5 * float(p @ self.velocity(p))

    def sample_momentum(self, rng, dim):
        z = rng.standard_normal(dim)
        if self.dense:
            # p ~ N(0, M) with M = inv_mass^{-1} = L^{-T} L^{-1}
            return np.linalg.solve(self.chol.T, z)
        return z / np.sqrt(self.inv_mass)


def leapfrog(logp_grad, q, p, grad, step, metric, n_steps):
    if not isinstance(metric, Metric):
        metric = Metric(metric)
    q = q.copy()
    p = p + 0.5 * step * grad
    logp = -np.inf
    for k in range(n_steps):
        q = q + step * metric.velocity(p)
        logp, grad = logp_grad(q)
        if not np.isfinite(logp):
            return q, p, -np.inf, grad
        if k < n_steps - 1:
            p = p + step * grad
    p = p + 0.5 * step * grad
    return q, p, logp, grad


def _find_reasonable_step(logp_grad, q, logp, grad, metric, rng):
    step = 0.1
    p = metric.sample_momentum(rng, q.size)
    h0 = logp - metric.kinetic(p)

    def log_ratio(eps):
        _, p1, lp1, _ = leapfrog(logp_grad, q, p, grad, eps, metric, 1)
        if not np.isfinite(lp1):
            return -np.inf
        return lp1 - metric.kinetic(p1) - h0

    direction = 1.0 if log_ratio(step) > math.log(0.5) else -1.0
    for _ in range(60):
        lr = log_ratio(step)
        if direction > 0 and not lr > math.log(0.5):
            break
        if direction < 0 and lr > math.log(0.5):
            break
        step = step * (2.0 ** direction)
    return step


def sample_chain(logp_grad: Callable, q0: np.ndarray, warmup: int, iterations: int,
                 rng: np.random.Generator, settings: HmcSettings | None = None,
                 extract: Callable | None = None) -> ChainOutput:
    """Run one chain; ``extract(q)`` maps each retained state to the stored draw."""
    with np.errstate(all="ignore"):
        return _sample_chain(logp_grad, q0, warmup, iterations, rng,
                             settings or HmcSettings(), extract)


def _use_dense(dim: int, s: HmcSettings) -> bool:
    if s.metric not in ("auto", "diag", "dense"):
        raise ValueError(f"unknown metric {s.metric!r}")
    return s.metric == "dense" or (s.metric == "auto" and dim <= s.dense_max_dim)


def _sample_chain(logp_grad, q0, warmup, iterations, rng, s, extract):
    q = np.asarray(q0, dtype=float).copy()
    logp, grad = logp_grad(q)
    if not np.isfinite(logp):
        raise FloatingPointError("initial point has zero posterior density")
    dim = q.size
    dense = _use_dense(dim, s)
    metric = Metric.identity(dim)
    step = _find_reasonable_step(logp_grad, q, logp, grad, metric, rng)
    adapter = DualAveraging(step, s.target_accept)
    window_start, window_ends = _adaptation_windows(warmup, s)
    window_ends = set(window_ends)
    w_mean = np.zeros(dim)
    w_m2 = np.zeros((dim, dim)) if dense else np.zeros(dim)
    w_count = 0
    adaptation = []

    total = warmup + iterations
    draws = []
    accept = np.empty(iterations)
    divergent = np.zeros(iterations, dtype=bool)
    n_leap = np.empty(iterations, dtype=int)
    for it in range(total):
        n_steps = int(min(s.max_steps, max(1, math.ceil(
            s.trajectory_length / step * rng.uniform(1.0 - s.jitter, 1.0 + s.jitter)))))
        p0 = metric.sample_momentum(rng, dim)
        h0 = logp - metric.kinetic(p0)
        q1, p1, logp1, grad1 = leapfrog(logp_grad, q, p0, grad, step, metric, n_steps)
        if np.isfinite(logp1):
            delta = logp1 - metric.kinetic(p1) - h0
        else:
            delta = -np.inf
        is_div = not np.isfinite(delta) or -delta > MAX_ENERGY_ERROR
        a = 0.0 if is_div else min(1.0, math.exp(min(0.0, delta)))
        if not is_div and rng.uniform() < a:
            q, logp, grad = q1, logp1, grad1

        if it < warmup:
            step = adapter.update(a)
            if window_start <= it:
                w_count += 1
                d = q - w_mean
                w_mean += d / w_count
                w_m2 += np.outer(d, q - w_mean) if dense else d * (q - w_mean)
            if (it + 1) in window_ends:
                cov = w_m2 / max(w_count - 1, 1)
                shrink = w_count / (w_count + 5.0)
                reg = 1e-3 * (5.0 / (w_count + 5.0))
                cov = shrink * cov + (reg * np.eye(dim) if dense else reg)
                try:
                    metric = Metric(cov)
                except np.linalg.LinAlgError:
                    metric = Metric(np.diag(np.diag(cov)))
                step = _find_reasonable_step(logp_grad, q, logp, grad, metric, rng)
                adapter.restart(step)
                adaptation.append({"iteration": it + 1, "step_size": step,
                                   "mean_inv_mass": float(np.mean(np.diag(cov) if dense else cov))})
                w_mean[:] = 0.0
                w_m2[:] = 0.0
                w_count = 0
            if it == warmup - 1:
                step = adapter.final_step
        else:
            k = it - warmup
            accept[k] = a
            divergent[k] = is_div
            n_leap[k] = n_steps
            draws.append(extract(q) if extract is not None else q.copy())
    return ChainOutput(draws, accept, divergent, n_leap, step, metric.inv_mass, warmup,
                       final_q=q, adaptation=adaptation)
