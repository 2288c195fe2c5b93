"""SGD and the two heavy-ball momentum variants, with a shared-noise run loop.

Updates (g is the minibatch gradient at x_t, buffers start at zero):

  sgd    x <- x - eta * g
  nshb   d <- (1 - beta) * g + beta * d;   x <- x - eta * d
  shb    m <- g + beta_bar * m;            x <- x - gamma * m

shb(gamma, beta_bar) traces the same iterates as nshb(eta, beta) under
eta = gamma / (1 - beta_bar), beta = beta_bar, because m_t = d_t / (1 - beta).

The run loop draws the minibatch once per step from a substream derived
from the step index, so two algorithms driven by the same RngStream see
identical noise and cross-algorithm comparisons are exact rather than
statistical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .problems import Objective, RngStream

ALGOS = ("sgd", "nshb", "shb")

# any coordinate beyond this magnitude terminates a run as diverged
DIVERGENCE_LIMIT = 1e30


@dataclass(frozen=True)
class OptimizerConfig:
    algo: str
    batch_size: int = 1
    eta: Optional[float] = None        # sgd / nshb learning rate
    beta: float = 0.0                  # nshb momentum, in [0, 1)
    gamma: Optional[float] = None      # shb learning rate
    beta_bar: float = 0.0              # shb momentum, in [0, 1)

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must be in [0, 1), got {self.beta}")
        if not 0.0 <= self.beta_bar < 1.0:
            raise ValueError(f"beta_bar must be in [0, 1), got {self.beta_bar}")
        if self.algo in ("sgd", "nshb"):
            if self.eta is None or self.eta <= 0:
                raise ValueError(f"{self.algo} needs eta > 0, got {self.eta}")
        else:
            if self.gamma is None or self.gamma <= 0:
                raise ValueError(f"shb needs gamma > 0, got {self.gamma}")

    def effective_eta_beta(self) -> tuple[float, float]:
        """The nshb-equivalent (eta, beta) pair for any algorithm."""
        if self.algo == "sgd":
            return float(self.eta), 0.0
        if self.algo == "nshb":
            return float(self.eta), float(self.beta)
        return map_shb_to_nshb(float(self.gamma), float(self.beta_bar))


@dataclass
class OptimizerState:
    """Iterate plus momentum buffer (d for nshb, m for shb); buffers are the
    zero vector at t = 0."""

    x: np.ndarray
    momentum: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls, x0) -> "OptimizerState":
        x0 = np.asarray(x0, dtype=float).copy()
        return cls(x=x0, momentum=np.zeros_like(x0), t=0)


def _check_grad(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient passed to optimizer step")
    return g


def sgd_step(state: OptimizerState, g, eta: float) -> OptimizerState:
    """x <- x - eta * g."""
    g = _check_grad(g)
    state.x = state.x - eta * g
    state.t += 1
    return state


def nshb_step(state: OptimizerState, g, eta: float, beta: float) -> OptimizerState:
    """d <- (1 - beta) g + beta d;  x <- x - eta * d."""
    g = _check_grad(g)
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must be in [0, 1), got {beta}")
    state.momentum = (1.0 - beta) * g + beta * state.momentum
    state.x = state.x - eta * state.momentum
    state.t += 1
    return state


def shb_step(state: OptimizerState, g, gamma: float, beta_bar: float) -> OptimizerState:
    """m <- g + beta_bar m;  x <- x - gamma * m."""
    g = _check_grad(g)
    if not 0.0 <= beta_bar < 1.0:
        raise ValueError(f"beta_bar must be in [0, 1), got {beta_bar}")
    state.momentum = g + beta_bar * state.momentum
    state.x = state.x - gamma * state.momentum
    state.t += 1
    return state


def map_shb_to_nshb(gamma: float, beta_bar: float) -> tuple[float, float]:
    """(gamma, beta_bar) -> (eta, beta) = (gamma / (1 - beta_bar), beta_bar)."""
    if not 0.0 <= beta_bar < 1.0:
        raise ValueError(f"beta_bar must be in [0, 1), got {beta_bar}")
    return gamma / (1.0 - beta_bar), beta_bar


@dataclass(frozen=True)
class TraceRecord:
    """Per-step observables. `grad` is always the exact oracle gradient at
    x_t, never the minibatch estimate; `search_direction` is what the
    update actually followed (g, d_t, or m_t)."""

    t: int
    f_value: float
    grad: np.ndarray
    search_direction: np.ndarray
    minibatch_grad: np.ndarray
    x_snapshot: Optional[np.ndarray] = None
    dist_to_ref: Optional[float] = None

    def as_dict(self) -> dict:
        out = {
            "t": self.t,
            "f_value": self.f_value,
            "grad": [float(v) for v in self.grad],
            "search_direction": [float(v) for v in self.search_direction],
            "minibatch_grad": [float(v) for v in self.minibatch_grad],
        }
        out["x_snapshot"] = None if self.x_snapshot is None else [float(v) for v in self.x_snapshot]
        out["dist_to_ref"] = None if self.dist_to_ref is None else float(self.dist_to_ref)
        return out


@dataclass(frozen=True)
class TraceOptions:
    record: bool = True
    record_x: bool = True
    record_f: bool = True
    reference_point: Optional[np.ndarray] = None


@dataclass
class Trace:
    records: list
    exit_reason: str          # "converged" | "step-cap" | "diverged"
    steps: int
    config: OptimizerConfig
    x_final: np.ndarray
    reference_point: Optional[np.ndarray] = None
    _cols: dict = field(default_factory=dict, repr=False)

    def _stack(self, name, getter):
        if name not in self._cols:
            self._cols[name] = np.stack([getter(r) for r in self.records])
        return self._cols[name]

    def grads(self) -> np.ndarray:
        return self._stack("grads", lambda r: r.grad)

    def directions(self) -> np.ndarray:
        return self._stack("directions", lambda r: r.search_direction)

    def minibatch_grads(self) -> np.ndarray:
        return self._stack("minibatch_grads", lambda r: r.minibatch_grad)

    def xs(self) -> np.ndarray:
        if any(r.x_snapshot is None for r in self.records):
            raise ValueError("trace was recorded without x snapshots")
        return self._stack("xs", lambda r: r.x_snapshot)

    def f_values(self) -> np.ndarray:
        return np.array([r.f_value for r in self.records])


def run(spec: Objective, config: OptimizerConfig, x0=None, stop=None,
        max_steps: int = 1000, rng: Optional[RngStream] = None,
        trace_options: Optional[TraceOptions] = None) -> Trace:
    """Drive the configured algorithm against the objective's minibatch
    oracle until the stop rule fires, the step cap is reached, or the
    iterate diverges.

    `stop` is any object with start() returning an accumulator whose
    observe(t, grad, minibatch_grad, x) returns True when the run should
    end (see sweep.StopRule). The minibatch at step t comes from
    rng.child(t), so runs sharing an RngStream share noise draw-for-draw.
    """
    if max_steps < 1:
        raise ValueError(f"max_steps must be >= 1, got {max_steps}")
    if rng is None:
        rng = RngStream(0)
    opts = trace_options or TraceOptions()
    x = np.asarray(x0, dtype=float).copy() if x0 is not None else spec.default_start()
    if x.shape != (spec.dim,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({spec.dim},)")
    state = OptimizerState.initial(x)
    b = config.batch_size
    acc = stop.start() if stop is not None else None
    ref = None if opts.reference_point is None else np.asarray(opts.reference_point, dtype=float)

    records = []
    exit_reason = "step-cap"
    steps = 0
    for t in range(max_steps):
        x_t = state.x
        g = spec.grad(x_t)
        gb = spec.minibatch_grad(x_t, b, rng.child(t))

        if config.algo == "sgd":
            sgd_step(state, gb, config.eta)
            direction = gb
        elif config.algo == "nshb":
            nshb_step(state, gb, config.eta, config.beta)
            direction = state.momentum
        else:
            shb_step(state, gb, config.gamma, config.beta_bar)
            direction = state.momentum

        if opts.record:
            records.append(TraceRecord(
                t=t,
                f_value=spec.value(x_t) if opts.record_f else float("nan"),
                grad=g,
                search_direction=direction.copy(),
                minibatch_grad=gb,
                x_snapshot=x_t.copy() if opts.record_x else None,
                dist_to_ref=float(np.linalg.norm(x_t - ref)) if ref is not None else None,
            ))
        steps = t + 1

        if not np.all(np.isfinite(state.x)) or np.max(np.abs(state.x)) > DIVERGENCE_LIMIT:
            exit_reason = "diverged"
            break
        if acc is not None and acc.observe(t, g, gb, x_t):
            exit_reason = "converged"
            break

    return Trace(
        records=records,
        exit_reason=exit_reason,
        steps=steps,
        config=config,
        x_final=state.x.copy(),
        reference_point=ref,
    )
