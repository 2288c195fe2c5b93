"""Batch-size sweeps, stopping rules, and the analytic step/SFO curves.

A sweep measures, for each batch size b, the number of steps T(b) until a
running average falls below a threshold, and the stochastic-first-order
cost T(b) * b. The empirical critical batch size is the grid argmin of
the mean SFO cost.

The matching analytic model writes the guaranteed bound on the averaged
inner products as X/T + Y/b + Z, giving

    T(b)   = X b / ((eps^2 - Z) b - Y)      for b > Y / (eps^2 - Z)
    SFO(b) = X b^2 / ((eps^2 - Z) b - Y)
    b*     = 2 Y / (eps^2 - Z)

with X = ||x0 - x||^2 / (2 eta), Y = eta C^2 / 2, and Z = eta K^2 / 2
(plus beta * D * sqrt(C^2) when the search direction carries momentum).
T is decreasing and convex past the pole; SFO is convex with a unique
minimizer at b*, which rearranges into the variance back-estimate
C^2 < b* eps^2 / eta.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .optimizers import OptimizerConfig, Trace, TraceOptions, run
from .problems import Objective, RngStream

STOP_KINDS = ("cumulative-grad-norm", "inner-product")


class DomainError(ValueError):
    """Raised when an analytic curve is evaluated outside its domain."""


class _CumulativeNormStop:
    def __init__(self, epsilon: float, use_minibatch_norm: bool):
        self.epsilon = epsilon
        self.use_minibatch = use_minibatch_norm
        self.total = 0.0
        self.count = 0

    def observe(self, t, grad, minibatch_grad, x) -> bool:
        g = minibatch_grad if self.use_minibatch else grad
        self.total += float(np.linalg.norm(g))
        self.count += 1
        return self.total / self.count < self.epsilon


class _InnerProductStop:
    def __init__(self, epsilon: float, reference_point: np.ndarray):
        self.eps_sq = epsilon * epsilon
        self.ref = reference_point
        self.total = 0.0
        self.count = 0

    def observe(self, t, grad, minibatch_grad, x) -> bool:
        self.total += float(np.dot(x - self.ref, grad))
        self.count += 1
        return self.total / self.count <= self.eps_sq


@dataclass(frozen=True)
class StopRule:
    """Epsilon-approximation rule evaluated each step on exact full
    gradients.

    cumulative-grad-norm: stop at the first t where the mean of
    ||grad f(x_s)|| over s <= t is strictly below epsilon (a minibatch-norm
    variant is available behind use_minibatch_norm).

    inner-product: stop once the running mean of <x_s - ref, grad f(x_s)>
    is at most epsilon^2; requires a reference point.
    """

    epsilon: float
    kind: str = "cumulative-grad-norm"
    reference_point: Optional[np.ndarray] = None
    use_minibatch_norm: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.kind not in STOP_KINDS:
            raise ValueError(f"stop kind must be one of {STOP_KINDS}, got {self.kind!r}")
        if self.kind == "inner-product":
            if self.reference_point is None:
                raise ValueError("inner-product stop rule requires a reference point")
            object.__setattr__(self, "reference_point",
                               np.asarray(self.reference_point, dtype=float))

    def start(self):
        if self.kind == "cumulative-grad-norm":
            return _CumulativeNormStop(self.epsilon, self.use_minibatch_norm)
        return _InnerProductStop(self.epsilon, self.reference_point)


@dataclass(frozen=True)
class SweepRow:
    b: int
    seed: int
    steps_T: int
    sfo: int
    exit_reason: str

    def as_dict(self) -> dict:
        return {"b": self.b, "seed": self.seed, "steps": self.steps_T,
                "sfo": self.sfo, "exit_reason": self.exit_reason}


@dataclass(frozen=True)
class BatchStats:
    b: int
    mean_steps: float
    mean_sfo: float
    converged_fraction: float

    def as_dict(self) -> dict:
        return {"b": self.b, "mean_steps": self.mean_steps,
                "mean_sfo": self.mean_sfo,
                "converged_fraction": self.converged_fraction}


@dataclass(frozen=True)
class SweepSummary:
    rows: tuple
    per_batch: tuple
    epsilon: float

    def converged_batches(self) -> list:
        return [s for s in self.per_batch if s.converged_fraction == 1.0]


def steps_to_epsilon(spec: Objective, config: OptimizerConfig, stop: StopRule,
                     cap: int, rng: RngStream, x0=None, seed: int = 0) -> SweepRow:
    """Run until the stop rule fires (exit converged, T = first firing step)
    or the cap is reached (exit step-cap)."""
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    trace = run(spec, config, x0=x0, stop=stop, max_steps=cap, rng=rng,
                trace_options=TraceOptions(record=False))
    return SweepRow(
        b=config.batch_size,
        seed=seed,
        steps_T=trace.steps,
        sfo=trace.steps * config.batch_size,
        exit_reason=trace.exit_reason,
    )


def run_sweep(spec: Objective, config_template: OptimizerConfig,
              batch_grid: Sequence[int], seeds, stop: StopRule, cap: int,
              x0=None, master_seed: int = 0, jobs: int = 1) -> SweepSummary:
    """Per-(b, seed) step counts and SFO costs, aggregated per batch size.

    `seeds` is a count (seed ids 0..seeds-1) or an explicit id list. Each
    cell draws from RngStream(master_seed).child(b, seed), so results do
    not depend on execution order or on `jobs`.
    """
    grid = [int(b) for b in batch_grid]
    if not grid:
        raise ValueError("batch_grid must be non-empty")
    if any(b < 1 for b in grid):
        raise ValueError("batch sizes must be >= 1")
    if sorted(grid) != grid:
        raise ValueError("batch_grid must be ascending")
    seed_ids = list(range(seeds)) if isinstance(seeds, int) else [int(s) for s in seeds]
    if not seed_ids:
        raise ValueError("need at least one seed")

    master = RngStream(master_seed)
    cells = [(b, s) for b in grid for s in seed_ids]

    def cell(args):
        b, s = args
        config = replace(config_template, batch_size=b)
        return steps_to_epsilon(spec, config, stop, cap, master.child(b, s),
                                x0=x0, seed=s)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(cell, cells))
    else:
        rows = [cell(c) for c in cells]
    rows.sort(key=lambda r: (r.b, r.seed))

    per_batch = []
    for b in grid:
        batch_rows = [r for r in rows if r.b == b]
        per_batch.append(BatchStats(
            b=b,
            mean_steps=float(np.mean([r.steps_T for r in batch_rows])),
            mean_sfo=float(np.mean([r.sfo for r in batch_rows])),
            converged_fraction=float(np.mean(
                [1.0 if r.exit_reason == "converged" else 0.0 for r in batch_rows])),
        ))
    return SweepSummary(rows=tuple(rows), per_batch=tuple(per_batch),
                        epsilon=stop.epsilon)


def empirical_critical_batch(summary: SweepSummary) -> int:
    """Grid batch size minimizing mean SFO over fully converged grid points;
    ties break toward the smaller b."""
    candidates = summary.converged_batches()
    if not candidates:
        raise ValueError("no fully converged grid point; cannot take the SFO argmin")
    best = min(candidates, key=lambda s: (s.mean_sfo, s.b))
    return best.b


@dataclass(frozen=True)
class AnalyticCurveParams:
    """Coefficients of the bound X/T + Y/b + Z <= eps^2 rearranged into the
    step and SFO curves. The curves exist only for eps^2 > Z and
    b > Y / (eps^2 - Z)."""

    X: float
    Y: float
    Z: float
    epsilon_sq: float
    notes: tuple = ()

    def pole(self) -> float:
        if self.epsilon_sq <= self.Z:
            raise DomainError(
                f"epsilon_sq={self.epsilon_sq} must exceed Z={self.Z}; "
                "no batch size reaches the threshold under this bound")
        return self.Y / (self.epsilon_sq - self.Z)

    def as_dict(self) -> dict:
        return {"X": self.X, "Y": self.Y, "Z": self.Z,
                "epsilon_sq": self.epsilon_sq, "notes": list(self.notes)}


def analytic_T(params: AnalyticCurveParams, b: float) -> float:
    """X b / ((eps^2 - Z) b - Y); decreasing and convex past the pole."""
    denom = (params.epsilon_sq - params.Z) * b - params.Y
    if params.epsilon_sq <= params.Z or denom <= 0:
        raise DomainError(
            f"b={b} is at or below the curve's pole; need b > {params.Y} / "
            f"(epsilon_sq - Z) = {params.Y / max(params.epsilon_sq - params.Z, 1e-300):.6g}")
    return params.X * b / denom


def analytic_sfo(params: AnalyticCurveParams, b: float) -> float:
    """X b^2 / ((eps^2 - Z) b - Y); convex with minimizer 2Y/(eps^2 - Z)."""
    return analytic_T(params, b) * b


def analytic_critical_batch(params: AnalyticCurveParams) -> float:
    """2 Y / (eps^2 - Z), the unique minimizer of the SFO curve."""
    if params.epsilon_sq <= params.Z:
        raise DomainError(
            f"epsilon_sq={params.epsilon_sq} <= Z={params.Z}: "
            "the SFO curve has no finite minimizer")
    return 2.0 * params.Y / (params.epsilon_sq - params.Z)


def variance_upper_bound(b_star: float, epsilon: float, eta: float) -> float:
    """b* eps^2 / eta, the back-estimated upper bound on the stochastic
    gradient variance C^2 given a measured critical batch size."""
    if b_star <= 0 or epsilon <= 0 or eta <= 0:
        raise ValueError("b_star, epsilon and eta must all be positive")
    return b_star * epsilon * epsilon / eta


def xyz_from_setup(spec: Objective, config: OptimizerConfig, x_ref,
                   trace: Optional[Trace] = None, epsilon: float = 1.0,
                   x0=None) -> AnalyticCurveParams:
    """Assemble (X, Y, Z) for a concrete setup.

    X = ||x0 - x_ref||^2 / (2 eta); Y = eta C^2 / 2; Z = eta K^2 / 2, plus
    beta * D * sqrt(C^2) when momentum is on. Constants come from the
    objective when known, otherwise they are estimated from the trace
    (C^2-hat: mean of b * ||minibatch deviation||^2; K^2-hat: max
    ||grad f(x_t)||^2; D-hat: max ||x_t - x_ref||). The notes record which
    source was used for each.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    eta, beta = config.effective_eta_beta()
    x_ref = np.asarray(x_ref, dtype=float)
    notes = []

    if x0 is not None:
        x_start = np.asarray(x0, dtype=float)
    elif trace is not None and trace.records and trace.records[0].x_snapshot is not None:
        x_start = trace.records[0].x_snapshot
    else:
        x_start = spec.default_start()
        notes.append("x0: objective default start")
    X = float(np.dot(x_start - x_ref, x_start - x_ref)) / (2.0 * eta)

    consts = spec.constants()
    if consts.variance is not None:
        c_sq = consts.variance
        notes.append("C^2: configured")
    elif trace is not None:
        dev = trace.minibatch_grads() - trace.grads()
        c_sq = float(np.mean(np.sum(dev * dev, axis=1)) * trace.config.batch_size)
        notes.append("C^2: trace-estimated")
    else:
        raise ValueError("variance C^2 unknown and no trace to estimate it from")

    if consts.grad_sq_bound is not None:
        k_sq = consts.grad_sq_bound
        notes.append("K^2: configured")
    elif trace is not None:
        grads = trace.grads()
        k_sq = float(np.max(np.sum(grads * grads, axis=1)))
        notes.append("K^2: trace-estimated")
    else:
        raise ValueError("gradient bound K^2 unknown and no trace to estimate it from")

    Z = eta * k_sq / 2.0
    if beta > 0.0:
        if trace is None:
            raise ValueError("momentum term needs a trace to estimate D = max ||x_t - x_ref||")
        xs = trace.xs()
        d_hat = float(np.max(np.linalg.norm(xs - x_ref, axis=1)))
        Z += beta * d_hat * math.sqrt(c_sq)
        notes.append(f"D: trace-estimated ({d_hat:.6g})")

    return AnalyticCurveParams(X=X, Y=eta * c_sq / 2.0, Z=Z,
                               epsilon_sq=epsilon * epsilon, notes=tuple(notes))
