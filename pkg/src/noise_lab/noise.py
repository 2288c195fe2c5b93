"""Gradient-noise and search-direction-noise measurement.

Gradient noise is ||G(x) - grad f(x)||, the deviation of a single
stochastic gradient from the full gradient. Search-direction noise
omega_t is the deviation of the direction the optimizer actually
followed: the minibatch gradient for sgd (where the two notions
coincide record-by-record), d_t for nshb, m_t for shb.

Two inequalities are evaluated on every trace and reported, never
asserted:

  * direction-noise bound: windowed mean ||omega_t||^2 <= C^2 / b
    (squared form; the momentum factor is absent from the bound);
  * buffer-lag bound: windowed mean ||d_{t-1} - g_t||^2 <=
    beta (2 - beta) * windowed mean ||g_t - grad f(x_t)||^2.

The second is reported because it fails in an easily reachable regime:
on the constant-gradient problem at stationarity the left side tends to
2/(1+beta) * C^2/b while the right side is beta(2-beta) * C^2/b, which
is smaller for beta = 0.9. The first holds there (the true stationary
mean of ||omega||^2 is (1-beta)/(1+beta) * C^2/b), so the report
distinguishes the two claims. Early steps, where the zero-initialised
buffer biases omega_t by beta^{t+1} * ||grad f||, are excluded by a
burn-in window and summarised separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .optimizers import Trace
from .problems import Objective, RngStream


def default_burn_in(beta: float) -> int:
    """Steps to discard before noise summaries: max(100, 10/(1-beta))."""
    return max(100, math.ceil(10.0 / (1.0 - beta) - 1e-9))


def gradient_noise_samples(spec: Objective, x, m: int, rng: RngStream) -> np.ndarray:
    """m iid values of ||G(x) - grad f(x)|| at a fixed point."""
    if m < 1:
        raise ValueError(f"sample count must be >= 1, got {m}")
    x = np.asarray(x, dtype=float)
    g = spec.grad(x)
    draws = spec.stochastic_grads(x, m, rng)
    return np.linalg.norm(draws - g, axis=1)


def minibatch_deviation_sq_samples(spec: Objective, x, b: int, m: int,
                                   rng: RngStream) -> np.ndarray:
    """m iid values of ||minibatch_grad - grad f||^2 at a fixed point; their
    mean estimates C^2 / b."""
    x = np.asarray(x, dtype=float)
    g = spec.grad(x)
    means = spec.minibatch_grad_means(x, b, m, rng)
    d = means - g
    return np.sum(d * d, axis=1)


@dataclass(frozen=True)
class NoiseSummary:
    window_start: int
    window_stop: int
    mean_omega_sq: float
    mean_grad_noise_sq: float
    bound_c2_over_b: Optional[float]
    direction_noise_bound_holds: Optional[bool]
    buffer_lag_lhs: float
    buffer_lag_rhs: float
    buffer_lag_bound_holds: bool
    early_mean_omega_sq: Optional[float]
    early_bias_flagged: bool

    def as_dict(self) -> dict:
        return {
            "window_start": self.window_start,
            "window_stop": self.window_stop,
            "mean_omega_sq": self.mean_omega_sq,
            "mean_grad_noise_sq": self.mean_grad_noise_sq,
            "bound_c2_over_b": self.bound_c2_over_b,
            "direction_noise_bound_holds": self.direction_noise_bound_holds,
            "buffer_lag_lhs": self.buffer_lag_lhs,
            "buffer_lag_rhs": self.buffer_lag_rhs,
            "buffer_lag_bound_holds": self.buffer_lag_bound_holds,
            "early_mean_omega_sq": self.early_mean_omega_sq,
            "early_bias_flagged": self.early_bias_flagged,
        }


@dataclass(frozen=True)
class NoiseReport:
    t: np.ndarray
    grad_noise_sq: np.ndarray     # ||minibatch_grad - grad||^2 per step
    omega_sq: np.ndarray          # ||search_direction - grad||^2 per step
    summary: NoiseSummary

    def rows(self):
        for i in range(len(self.t)):
            yield {
                "t": int(self.t[i]),
                "grad_noise_sq": float(self.grad_noise_sq[i]),
                "omega_sq": float(self.omega_sq[i]),
            }


def search_direction_noise(trace: Trace, spec: Objective,
                           burn_in: Optional[int] = None) -> NoiseReport:
    """Per-step noise norms plus a windowed summary of the two reported
    inequalities. The window is [burn_in, len(trace)); burn_in defaults to
    max(100, 10/(1-beta)) so the momentum buffer reaches stationarity."""
    _, beta = trace.config.effective_eta_beta()
    if burn_in is None:
        burn_in = default_burn_in(beta)
    n = len(trace.records)
    if n <= burn_in:
        raise ValueError(f"trace has {n} steps, need more than burn_in={burn_in}")

    grads = trace.grads()
    dirs = trace.directions()
    mbs = trace.minibatch_grads()

    omega = dirs - grads
    omega_sq = np.sum(omega * omega, axis=1)
    gdev = mbs - grads
    grad_noise_sq = np.sum(gdev * gdev, axis=1)

    w = slice(burn_in, n)
    mean_omega_sq = float(np.mean(omega_sq[w]))
    mean_grad_noise_sq = float(np.mean(grad_noise_sq[w]))

    c_sq = spec.constants().variance
    bound = None if c_sq is None else c_sq / trace.config.batch_size
    bound_holds = None if bound is None else bool(mean_omega_sq <= bound)

    # buffer lag: d_{t-1} (zero vector before the first step) vs the fresh draw
    prev_dirs = np.vstack([np.zeros(spec.dim), dirs[:-1]])
    lag = prev_dirs - mbs
    lag_sq = np.sum(lag * lag, axis=1)
    lhs = float(np.mean(lag_sq[w]))
    rhs = float(beta * (2.0 - beta) * mean_grad_noise_sq)

    early = omega_sq[:burn_in]
    early_mean = float(np.mean(early)) if early.size else None
    early_flag = early_mean is not None and early_mean > 2.0 * mean_omega_sq

    summary = NoiseSummary(
        window_start=burn_in,
        window_stop=n,
        mean_omega_sq=mean_omega_sq,
        mean_grad_noise_sq=mean_grad_noise_sq,
        bound_c2_over_b=bound,
        direction_noise_bound_holds=bound_holds,
        buffer_lag_lhs=lhs,
        buffer_lag_rhs=rhs,
        buffer_lag_bound_holds=bool(lhs <= rhs),
        early_mean_omega_sq=early_mean,
        early_bias_flagged=bool(early_flag),
    )
    return NoiseReport(
        t=np.arange(n),
        grad_noise_sq=grad_noise_sq,
        omega_sq=omega_sq,
        summary=summary,
    )


@dataclass(frozen=True)
class TailStats:
    sample_count: int
    mean: float
    variance: float
    excess_kurtosis: float
    tail_mass: dict    # {k: fraction of samples beyond k standard deviations}

    def as_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "mean": self.mean,
            "variance": self.variance,
            "excess_kurtosis": self.excess_kurtosis,
            "tail_mass": {str(k): v for k, v in self.tail_mass.items()},
        }


def tail_stats(samples, ks=(3, 4, 5)) -> TailStats:
    """Moment statistics and empirical k-sigma tail masses; a light-tailed
    sample shows excess kurtosis near or below zero and rapidly vanishing
    tail mass."""
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 30:
        raise ValueError(f"need at least 30 samples for tail statistics, got {n}")
    mean = float(np.mean(x))
    centered = x - mean
    m2 = float(np.mean(centered ** 2))
    var = float(np.var(x, ddof=1))
    if m2 == 0.0:
        kurt = 0.0
        masses = {k: 0.0 for k in ks}
    else:
        m4 = float(np.mean(centered ** 4))
        kurt = m4 / (m2 * m2) - 3.0
        sd = math.sqrt(m2)
        masses = {k: float(np.mean(np.abs(centered) > k * sd)) for k in ks}
    return TailStats(
        sample_count=n,
        mean=mean,
        variance=var,
        excess_kurtosis=kurt,
        tail_mass=masses,
    )
