"""Convergence-bound evaluation and algebraic identity checks.

The guaranteed bound on the averaged inner products (1/T) sum_t
E <x_t - x, grad f(x_t)> decomposes into

    first_term      ||x0 - x||^2 / (2 eta T)
    momentum_term   D beta sqrt(C^2 / b)     (zero without momentum)
    variance_term   (eta / 2) (C^2 / b + K^2)

and the left side is Monte-Carlo estimated from an ensemble of
independent-seed traces. The plain-SGD bound is asserted by the verify
suite; the momentum bound is reported as a diagnostic because its proof
routes through the buffer-lag inequality that fails at stationarity (see
the noise module). The averaged inner product has no a-priori sign on
nonconvex problems; a negative value means the iterates sit at or past
stationarity, not a violated bound.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import smoothing as _smoothing
from . import sweep as _sweep
from .noise import default_burn_in, minibatch_deviation_sq_samples, search_direction_noise
from .optimizers import OptimizerConfig, Trace, TraceOptions, run
from .problems import ConstantGradient, NoisyQuadratic, Objective, RngStream


@dataclass(frozen=True)
class BoundComponents:
    first_term: float
    momentum_term: float
    variance_term: float

    @property
    def rhs(self) -> float:
        return self.first_term + self.momentum_term + self.variance_term

    def as_dict(self) -> dict:
        return {"first_term": self.first_term, "momentum_term": self.momentum_term,
                "variance_term": self.variance_term, "rhs": self.rhs}


def thm_rhs(algo: str, norm_x0_sq: float, eta: float, T: int, c_sq: float,
            b: int, k_sq: float, d: float = 0.0, beta: float = 0.0) -> BoundComponents:
    """Right-hand side of the averaged-inner-product bound for sgd (no
    momentum term) or nshb/shb (adds D * beta * sqrt(C^2 / b))."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if b < 1:
        raise ValueError(f"b must be >= 1, got {b}")
    momentum = 0.0
    if algo != "sgd" and beta > 0.0:
        momentum = d * beta * math.sqrt(c_sq / b)
    return BoundComponents(
        first_term=norm_x0_sq / (2.0 * eta * T),
        momentum_term=momentum,
        variance_term=(eta / 2.0) * (c_sq / b + k_sq),
    )


def lhs_inner_product(traces: Sequence[Trace], x_ref) -> tuple[float, float]:
    """Cross-seed mean and 3-standard-error confidence radius of the
    per-trace time average of <x_t - x_ref, grad f(x_t)>."""
    if len(traces) < 30:
        raise ValueError(f"need >= 30 traces for a stable estimate, got {len(traces)}")
    lengths = {len(t.records) for t in traces}
    if len(lengths) != 1:
        raise ValueError(f"traces have unequal lengths {sorted(lengths)}")
    x_ref = np.asarray(x_ref, dtype=float)
    per_trace = np.array([
        float(np.mean(np.sum((t.xs() - x_ref) * t.grads(), axis=1)))
        for t in traces
    ])
    mean = float(np.mean(per_trace))
    stderr = float(np.std(per_trace, ddof=1) / math.sqrt(len(per_trace)))
    return mean, 3.0 * stderr


def weighted_norm_identity(x, y, alpha: float) -> dict:
    """Both sides of ||a x + (1-a) y||^2 =
    a ||x||^2 + (1-a) ||y||^2 - a (1-a) ||x - y||^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    combo = alpha * x + (1.0 - alpha) * y
    lhs = float(np.dot(combo, combo))
    diff = x - y
    rhs = float(alpha * np.dot(x, x) + (1.0 - alpha) * np.dot(y, y)
                - alpha * (1.0 - alpha) * np.dot(diff, diff))
    return {"lhs": lhs, "rhs": rhs, "abs_diff": abs(lhs - rhs)}


def stationarity_check(spec: Objective, x_star, directions: int,
                       rng: Optional[RngStream] = None,
                       grad_tol: float = 1e-8) -> dict:
    """Compare the two equivalent stationarity certificates at x_star:
    grad f(x_star) = 0, and <grad f(x_star), y - x_star> >= 0 for all y.
    Sampled y come from a standard normal cloud around x_star plus the
    witness y = x_star - grad f(x_star)."""
    if directions < 1:
        raise ValueError(f"directions must be >= 1, got {directions}")
    rng = rng or RngStream(0)
    x_star = np.asarray(x_star, dtype=float)
    g = spec.grad(x_star)
    grad_norm = float(np.linalg.norm(g))
    gen = rng.generator()
    ys = x_star + gen.standard_normal((directions, x_star.size))
    ys = np.vstack([ys, x_star - g])
    ips = (ys - x_star) @ g
    min_ip = float(np.min(ips))
    max_radius = float(np.max(np.linalg.norm(ys - x_star, axis=1)))
    ip_tol = grad_tol * max(max_radius, 1.0)
    consistent = (grad_norm <= grad_tol) == (min_ip >= -ip_tol)
    return {"grad_norm": grad_norm, "min_inner_product": min_ip,
            "consistent": bool(consistent)}


def ensemble(spec: Objective, config: OptimizerConfig, x0, steps: int, seeds: int,
             rng: RngStream, jobs: int = 1, record_f: bool = False) -> list:
    """Independent-seed traces of equal length with x snapshots, produced
    concurrently but reduced in seed order."""
    opts = TraceOptions(record=True, record_x=True, record_f=record_f)

    def one(seed: int) -> Trace:
        return run(spec, config, x0=x0, max_steps=steps, rng=rng.child(seed),
                   trace_options=opts)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, range(seeds)))
    return [one(s) for s in range(seeds)]


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    lhs_confidence: float
    components: BoundComponents
    holds: bool
    regime_notes: tuple = ()

    @property
    def rhs(self) -> float:
        return self.components.rhs

    def as_dict(self) -> dict:
        return {"lhs": self.lhs, "lhs_confidence": self.lhs_confidence,
                "components": self.components.as_dict(), "rhs": self.rhs,
                "holds": self.holds, "regime_notes": list(self.regime_notes)}


def convergence_bound_report(spec: Objective, config: OptimizerConfig, x0, x_ref,
                             steps: int, seeds: int, rng: RngStream,
                             jobs: int = 1) -> BoundReport:
    """Monte-Carlo left side vs analytic right side of the inner-product
    bound, with empirical stand-ins for unknown constants recorded in the
    notes. holds means lhs - confidence <= rhs."""
    x0 = np.asarray(x0, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    traces = ensemble(spec, config, x0, steps, seeds, rng, jobs=jobs)
    lhs, conf = lhs_inner_product(traces, x_ref)

    notes = []
    consts = spec.constants()
    if consts.variance is not None:
        c_sq = consts.variance
        notes.append("C^2: configured")
    else:
        dev = np.concatenate([
            np.sum((t.minibatch_grads() - t.grads()) ** 2, axis=1) for t in traces])
        c_sq = float(np.mean(dev) * config.batch_size)
        notes.append("C^2: ensemble-estimated")
    if consts.grad_sq_bound is not None:
        k_sq = consts.grad_sq_bound
        notes.append("K^2: configured")
    else:
        k_sq = max(float(np.max(np.sum(t.grads() ** 2, axis=1))) for t in traces)
        notes.append("K^2: ensemble max of ||grad||^2")

    eta, beta = config.effective_eta_beta()
    d_hat = 0.0
    if config.algo != "sgd" and beta > 0.0:
        d_hat = max(float(np.max(np.linalg.norm(t.xs() - x_ref, axis=1))) for t in traces)
        notes.append(f"D: ensemble max ||x_t - x_ref|| = {d_hat:.6g}")
    if lhs < 0:
        notes.append("lhs is negative: iterates at or past stationarity on average")

    comps = thm_rhs(config.algo, float(np.dot(x0 - x_ref, x0 - x_ref)), eta, steps,
                    c_sq, config.batch_size, k_sq, d=d_hat, beta=beta)
    return BoundReport(
        lhs=lhs, lhs_confidence=conf, components=comps,
        holds=bool(lhs - conf <= comps.rhs), regime_notes=tuple(notes),
    )


def minibatch_second_moment_check(trace: Trace, burn_in: Optional[int] = None,
                                  slack: float = 0.05) -> dict:
    """Windowed mean of ||minibatch grad||^2 against the empirical
    C^2/b + K^2 measured on the same trace (5% slack)."""
    _, beta = trace.config.effective_eta_beta()
    if burn_in is None:
        burn_in = default_burn_in(beta)
    n = len(trace.records)
    if n <= burn_in:
        raise ValueError(f"trace has {n} steps, need more than burn_in={burn_in}")
    w = slice(burn_in, n)
    mbs = trace.minibatch_grads()
    grads = trace.grads()
    lhs = float(np.mean(np.sum(mbs[w] ** 2, axis=1)))
    c2b = float(np.mean(np.sum((mbs[w] - grads[w]) ** 2, axis=1)))
    k2 = float(np.max(np.sum(grads[w] ** 2, axis=1)))
    rhs = c2b + k2
    return {"lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs * (1.0 + slack))}


def buffer_second_moment_check(trace: Trace, burn_in: Optional[int] = None,
                               slack: float = 0.05) -> dict:
    """Windowed mean of ||d_t||^2 against the same empirical C^2/b + K^2."""
    _, beta = trace.config.effective_eta_beta()
    if burn_in is None:
        burn_in = default_burn_in(beta)
    n = len(trace.records)
    if n <= burn_in:
        raise ValueError(f"trace has {n} steps, need more than burn_in={burn_in}")
    w = slice(burn_in, n)
    dirs = trace.directions()
    mbs = trace.minibatch_grads()
    grads = trace.grads()
    lhs = float(np.mean(np.sum(dirs[w] ** 2, axis=1)))
    c2b = float(np.mean(np.sum((mbs[w] - grads[w]) ** 2, axis=1)))
    k2 = float(np.max(np.sum(grads[w] ** 2, axis=1)))
    rhs = c2b + k2
    return {"lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs * (1.0 + slack))}


@dataclass(frozen=True)
class CheckResult:
    check: str
    lhs: float
    rhs: float
    holds: bool
    asserted: bool
    notes: str = ""

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    def as_dict(self) -> dict:
        return {"check": self.check, "lhs": self.lhs, "rhs": self.rhs,
                "margin": self.margin, "holds": self.holds,
                "asserted": self.asserted, "notes": self.notes}


@dataclass(frozen=True)
class VerifySettings:
    master_seed: int = 2024
    ensemble_seeds: int = 100
    ensemble_steps: int = 300
    noise_steps: int = 1500
    variance_draws: int = 100_000
    identity_triples: int = 10_000
    replicas: int = 4_000
    jobs: int = 1


def run_verify_suite(settings: Optional[VerifySettings] = None) -> list:
    """The default identity-and-bound battery. Asserted checks are expected
    to pass on every run with any seed budget; diagnostics report the two
    momentum inequalities whose general validity the measurements decide."""
    s = settings or VerifySettings()
    rng = RngStream(s.master_seed)
    results = []

    # norm interpolation identity on random triples
    gen = rng.child("identity").generator()
    worst = 0.0
    for _ in range(s.identity_triples):
        x = gen.standard_normal(4) * 10.0 ** gen.integers(-3, 4)
        y = gen.standard_normal(4) * 10.0 ** gen.integers(-3, 4)
        a = float(gen.uniform(-2.0, 3.0))
        out = weighted_norm_identity(x, y, a)
        scale = max(float(np.dot(x, x)), float(np.dot(y, y)), 1e-300)
        worst = max(worst, out["abs_diff"] / scale)
    results.append(CheckResult("weighted-norm-identity", worst, 1e-12,
                               worst <= 1e-12, True,
                               f"max scaled deviation over {s.identity_triples} random triples"))

    # minibatch deviation second moment scales as C^2 / b
    quad = NoisyQuadratic(dim=2, variance=4.0)
    x_probe = np.array([1.0, -2.0])
    worst_rel = 0.0
    for b in (1, 4, 16, 64):
        samples = minibatch_deviation_sq_samples(quad, x_probe, b, s.variance_draws,
                                                 rng.child("scaling", b))
        rel = abs(float(np.mean(samples)) - 4.0 / b) / (4.0 / b)
        worst_rel = max(worst_rel, rel)
    results.append(CheckResult("minibatch-variance-scaling", worst_rel, 0.05,
                               worst_rel <= 0.05, True,
                               f"worst relative error over b in (1,4,16,64) at {s.variance_draws} draws"))

    # stationary momentum trace on the constant-gradient problem
    const = ConstantGradient(dim=2, variance=1.0, coefficient=[1.0, 1.0])
    nshb = OptimizerConfig(algo="nshb", eta=0.05, beta=0.9, batch_size=1)
    trace = run(const, nshb, x0=np.zeros(2), max_steps=s.noise_steps,
                rng=rng.child("noise-trace"),
                trace_options=TraceOptions(record=True, record_x=False, record_f=False))
    report = search_direction_noise(trace, const)

    a2 = minibatch_second_moment_check(trace)
    results.append(CheckResult("minibatch-second-moment-bound", a2["lhs"],
                               a2["rhs"] * 1.05, a2["holds"], True,
                               "windowed mean ||minibatch grad||^2 vs empirical C^2/b + K^2"))
    a3 = buffer_second_moment_check(trace)
    results.append(CheckResult("momentum-buffer-second-moment-bound", a3["lhs"],
                               a3["rhs"] * 1.05, a3["holds"], True,
                               "windowed mean ||d_t||^2 vs empirical C^2/b + K^2"))
    results.append(CheckResult(
        "direction-noise-second-moment-bound",
        report.summary.mean_omega_sq, report.summary.bound_c2_over_b,
        bool(report.summary.direction_noise_bound_holds), False,
        "diagnostic; stationary mean is (1-beta)/(1+beta) * C^2/b, below the bound"))
    results.append(CheckResult(
        "buffer-lag-noise-bound",
        report.summary.buffer_lag_lhs, report.summary.buffer_lag_rhs,
        report.summary.buffer_lag_bound_holds, False,
        "diagnostic; fails at stationarity for large beta (lhs -> 2/(1+beta) * C^2/b)"))

    # inner-product bounds on the noisy quadratic
    quad8 = NoisyQuadratic(dim=2, variance=4.0)
    x0 = np.array([2.0, -1.0])
    sgd = OptimizerConfig(algo="sgd", eta=0.1, batch_size=8)
    sgd_report = convergence_bound_report(quad8, sgd, x0, np.zeros(2),
                                          s.ensemble_steps, s.ensemble_seeds,
                                          rng.child("bound-sgd"), jobs=s.jobs)
    results.append(CheckResult("sgd-inner-product-bound",
                               sgd_report.lhs - sgd_report.lhs_confidence,
                               sgd_report.rhs, sgd_report.holds, True,
                               "; ".join(sgd_report.regime_notes)))
    nshb_q = OptimizerConfig(algo="nshb", eta=0.1, beta=0.9, batch_size=8)
    nshb_report = convergence_bound_report(quad8, nshb_q, x0, np.zeros(2),
                                           s.ensemble_steps, s.ensemble_seeds,
                                           rng.child("bound-nshb"), jobs=s.jobs)
    results.append(CheckResult("nshb-inner-product-bound",
                               nshb_report.lhs - nshb_report.lhs_confidence,
                               nshb_report.rhs, nshb_report.holds, False,
                               "; ".join(nshb_report.regime_notes)))

    # replica-mean update identity
    upd = _smoothing.gd_vs_nshb_expectation(const, np.zeros(2), eta=0.1, beta=0.9,
                                            replicas=s.replicas, burn_in=200,
                                            rng=rng.child("mean-update"))
    results.append(CheckResult("momentum-vs-gd-mean-update", upd.discrepancy,
                               upd.confidence_radius, upd.within_confidence, True,
                               f"{upd.replicas} replicas, burn-in {upd.burn_in}"))

    # algorithm equivalences under shared noise
    shared = rng.child("equiv")
    shb_cfg = OptimizerConfig(algo="shb", gamma=0.05, beta_bar=0.9, batch_size=4)
    eta_eq, beta_eq = shb_cfg.effective_eta_beta()
    nshb_cfg = OptimizerConfig(algo="nshb", eta=eta_eq, beta=beta_eq, batch_size=4)
    t_shb = run(quad8, shb_cfg, x0=x0, max_steps=1000, rng=shared,
                trace_options=TraceOptions(record=True, record_f=False))
    t_nshb = run(quad8, nshb_cfg, x0=x0, max_steps=1000, rng=shared,
                 trace_options=TraceOptions(record=True, record_f=False))
    rel = _max_rel_divergence(t_shb.xs(), t_nshb.xs())
    results.append(CheckResult("shb-nshb-reparameterization", rel, 1e-10,
                               rel <= 1e-10, True,
                               "max per-coordinate relative divergence over 1000 shared-noise steps"))

    t_n0 = run(quad8, OptimizerConfig(algo="nshb", eta=0.1, beta=0.0, batch_size=4),
               x0=x0, max_steps=1000, rng=shared,
               trace_options=TraceOptions(record=True, record_f=False))
    t_s0 = run(quad8, OptimizerConfig(algo="sgd", eta=0.1, batch_size=4),
               x0=x0, max_steps=1000, rng=shared,
               trace_options=TraceOptions(record=True, record_f=False))
    rel0 = _max_rel_divergence(t_n0.xs(), t_s0.xs())
    results.append(CheckResult("zero-momentum-reduces-to-sgd", rel0, 1e-12,
                               rel0 <= 1e-12, True, ""))

    # stationarity certificates agree
    st = stationarity_check(NoisyQuadratic(dim=3), np.zeros(3), 64, rng.child("stationary"))
    st2 = stationarity_check(ConstantGradient(dim=2, coefficient=[1.0, 0.0]),
                             np.array([0.5, 0.5]), 64, rng.child("nonstationary"))
    ok = st["consistent"] and st2["consistent"]
    results.append(CheckResult("stationarity-variational-consistency",
                               0.0 if ok else 1.0, 0.0, ok, True,
                               "minimizer and non-stationary certificates both consistent"))

    # smoothing gap bound on a problem with known Lipschitz constant
    gen_pts = rng.child("gap-points").generator()
    pts = gen_pts.standard_normal((5, 2)) * 2.0
    gap = _smoothing.smoothing_gap_check(const, pts, delta=0.5, samples=20_000,
                                         rng=rng.child("gap"))
    worst_gap = max(p.gap - (p.bound + 3.0 * p.std_error) for p in gap.points)
    results.append(CheckResult("smoothing-gap-bound", worst_gap, 0.0,
                               gap.all_passed, True,
                               "worst gap minus allowance over 5 points at delta=0.5"))

    # analytic curve shape, minimizer placement, lower bound, round trip
    shape_ok, curve_notes = _curve_shape_checks(rng.child("curves"))
    results.append(CheckResult("steps-curve-shape", 0.0 if shape_ok else 1.0, 0.0,
                               shape_ok, True, curve_notes))
    place_ok, place_notes = _minimizer_placement_checks(rng.child("argmin"))
    results.append(CheckResult("sfo-curve-minimizer", 0.0 if place_ok else 1.0, 0.0,
                               place_ok, True, place_notes))

    lb_ok = True
    for eta in (0.01, 0.1, 0.5):
        for c_sq in (10.0, 1280.0, 5000.0):
            for eps in (0.6, 1.0, 2.0):
                params = _sweep.AnalyticCurveParams(X=1.0, Y=eta * c_sq / 2.0,
                                                    Z=eta * 1.0 / 2.0,
                                                    epsilon_sq=eps * eps)
                lb_ok &= _sweep.analytic_critical_batch(params) > eta * c_sq / (eps * eps)
    results.append(CheckResult("critical-batch-lower-bound", 0.0 if lb_ok else 1.0,
                               0.0, lb_ok, True,
                               "b* > eta C^2 / eps^2 across a 3x3x3 (eta, C^2, eps) grid with Z > 0"))

    # b* -> bound round trip: the estimate is C^2 * eps^2 / (eps^2 - Z), so it
    # recovers C^2 exactly at Z=0 and overestimates (stays an upper bound) otherwise
    eta, c_sq, eps = 0.1, 1280.0, 0.5
    rt_err = 0.0
    for z in (0.0, 0.05, 0.1):
        params = _sweep.AnalyticCurveParams(X=1.0, Y=eta * c_sq / 2.0, Z=z,
                                            epsilon_sq=eps * eps)
        round_trip = _sweep.variance_upper_bound(
            _sweep.analytic_critical_batch(params), eps, eta)
        expected = c_sq * eps * eps / (eps * eps - z)
        rt_err = max(rt_err, abs(round_trip - expected) / expected,
                     0.0 if round_trip >= c_sq else 1.0)
    results.append(CheckResult("variance-backestimate-roundtrip", rt_err, 1e-12,
                               rt_err <= 1e-12, True,
                               "b* -> bound equals C^2 eps^2/(eps^2 - Z); exact C^2 at Z=0, never below C^2"))

    return results


def _max_rel_divergence(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b) / scale))


def grid_monotone_decreasing(values: np.ndarray) -> bool:
    return bool(np.all(np.diff(values) < 0))


def grid_convex(grid: np.ndarray, values: np.ndarray, rel_tol: float = 1e-9) -> bool:
    """Discrete convexity on a (possibly uneven) grid: consecutive slopes
    never decrease."""
    slopes = np.diff(values) / np.diff(grid)
    scale = np.maximum(np.abs(slopes[:-1]), np.abs(slopes[1:]))
    return bool(np.all(np.diff(slopes) >= -rel_tol * np.maximum(scale, 1e-300)))


def _curve_shape_checks(rng: RngStream) -> tuple[bool, str]:
    gen = rng.generator()
    ok = True
    for _ in range(50):
        y = float(gen.uniform(0.5, 200.0))
        z = float(gen.uniform(0.0, 0.5))
        eps_sq = z + float(gen.uniform(0.05, 2.0))
        x = float(gen.uniform(1.0, 500.0))
        params = _sweep.AnalyticCurveParams(X=x, Y=y, Z=z, epsilon_sq=eps_sq)
        pole = params.pole()
        bs = np.geomspace(pole * 1.05, pole * 200.0, 24)
        ts = np.array([_sweep.analytic_T(params, b) for b in bs])
        ok &= grid_monotone_decreasing(ts) and grid_convex(bs, ts)
    return ok, "first differences negative, slopes non-decreasing, 50 random curves"


def _minimizer_placement_checks(rng: RngStream) -> tuple[bool, str]:
    gen = rng.generator()
    ok = True
    for _ in range(50):
        y = float(gen.uniform(0.5, 200.0))
        z = float(gen.uniform(0.0, 0.5))
        eps_sq = z + float(gen.uniform(0.05, 2.0))
        params = _sweep.AnalyticCurveParams(X=7.0, Y=y, Z=z, epsilon_sq=eps_sq)
        b_star = _sweep.analytic_critical_batch(params)
        grid = np.geomspace(params.pole() * 1.02, b_star * 64.0, 40)
        sfo = np.array([_sweep.analytic_sfo(params, b) for b in grid])
        idx = int(np.argmin(sfo))
        lo = grid[max(0, idx - 1)]
        hi = grid[min(len(grid) - 1, idx + 1)]
        ok &= bool(lo <= b_star <= hi)
        ok &= grid_convex(grid, sfo)
    return ok, "grid argmin within one cell of 2Y/(eps^2 - Z), SFO convex, 50 random curves"
