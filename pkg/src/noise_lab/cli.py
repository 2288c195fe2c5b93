"""Command-line entry point.

Subcommands: run, sweep, noise, smooth, sharpness, verify, table1.
Configuration comes from a single JSON file (--config); a few flags
override their config-block counterparts. Exit status: 0 on success,
1 when an asserted verification check fails, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, noise as noise_mod, smoothing, sweep as sweep_mod
from .config import (SEED_ENV_VAR, ConfigError, build_objective, build_optimizer,
                     load_config, resolve_seed, validate_config)
from .optimizers import TraceOptions, run as run_optimizer
from .problems import RngStream
from .reporting import dump_json, emit_csv, emit_jsonl

DEFAULT_BATCH_GRID = [2 ** k for k in range(3, 14)]

# rows of the built-in arithmetic fixture: (group, eta, eps, b*)
_FIXTURE_ROWS = [
    ("A1", 0.01, 1.0, 2 ** 7),
    ("A2", 0.05, 0.5, 2 ** 8),
    ("A3", 0.10, 0.5, 2 ** 9),
    ("A4", 0.50, 0.5, 2 ** 9),
    ("A5", 1.00, 0.5, 2 ** 9),
    ("B1", 0.10, 0.5, 2 ** 2),
    ("B2", 0.10, 0.5, 2 ** 3),
    ("B3", 0.10, 0.5, 2 ** 3),
]


def fixture_table_text() -> str:
    """The variance back-estimation fixture: bound = b* eps^2 / eta."""
    lines = [
        "variance upper bounds back-estimated from critical batch sizes",
        "bound = b_star * eps^2 / eta",
        "",
        "group    eta    eps   b_star    bound",
    ]
    for group, eta, eps, b_star in _FIXTURE_ROWS:
        bound = sweep_mod.variance_upper_bound(b_star, eps, eta)
        lines.append(f"{group:<5} {eta:>6.2f} {eps:>6.1f} {b_star:>8d} {bound:>8g}")
    return "\n".join(lines) + "\n"


def _out_dir(args, cfg) -> Path:
    out = args.out or cfg.get("output_dir") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _resolved(cfg: dict, seed: int, **blocks) -> dict:
    resolved = {k: v for k, v in cfg.items() if k != "output_dir"}
    resolved["master_seed"] = seed
    for name, block in blocks.items():
        resolved[name] = block
    return validate_config(resolved)


def _require_config(args) -> dict:
    if not args.config:
        raise ConfigError("this subcommand needs --config")
    return load_config(args.config)


def cmd_run(args) -> int:
    cfg = _require_config(args)
    spec = build_objective(cfg)
    opt = build_optimizer(cfg)
    block = dict(cfg.get("run", {}))
    block.setdefault("max_steps", 1000)
    block.setdefault("record_x", True)
    seed = resolve_seed(cfg)

    stop = None
    if "epsilon" in block:
        stop = sweep_mod.StopRule(epsilon=block["epsilon"])
    ref = block.get("reference_point")
    trace = run_optimizer(
        spec, opt,
        x0=block.get("x0"),
        stop=stop,
        max_steps=block["max_steps"],
        rng=RngStream(seed),
        trace_options=TraceOptions(record=True, record_x=block["record_x"],
                                   reference_point=ref),
    )
    out = _out_dir(args, cfg)
    path = emit_jsonl([r.as_dict() for r in trace.records], out / "run.jsonl")
    print(f"wrote {path} ({trace.steps} records, exit {trace.exit_reason})")
    return 0


def _stop_rule_from(block: dict, spec) -> sweep_mod.StopRule:
    kind = block.get("stop_kind", "cumulative-grad-norm")
    ref = block.get("reference_point")
    if kind == "inner-product" and ref is None:
        ref = spec.minimizer()
        if ref is None:
            raise ConfigError("inner-product stop rule needs a reference_point",
                              "$.sweep.reference_point")
        ref = [float(v) for v in ref]
    try:
        return sweep_mod.StopRule(
            epsilon=block["epsilon"], kind=kind, reference_point=ref,
            use_minibatch_norm=block.get("use_minibatch_norm", False),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "$.sweep") from exc


def cmd_sweep(args) -> int:
    cfg = _require_config(args)
    block = dict(cfg.get("sweep", {}))
    if args.batch_grid:
        block["batch_grid"] = [int(v) for v in args.batch_grid.split(",")]
    if args.epsilon is not None:
        block["epsilon"] = args.epsilon
    if args.seeds is not None:
        block["seeds"] = args.seeds
    if args.max_steps is not None:
        block["max_steps"] = args.max_steps
    block.setdefault("batch_grid", list(DEFAULT_BATCH_GRID))
    block.setdefault("seeds", 3)
    block.setdefault("max_steps", 30_000)
    if "epsilon" not in block:
        raise ConfigError("sweep needs an epsilon (flag or config)", "$.sweep.epsilon")
    seed = resolve_seed(cfg)
    resolved = _resolved(cfg, seed, sweep=block)

    spec = build_objective(resolved)
    opt = build_optimizer(resolved)
    stop = _stop_rule_from(block, spec)
    summary = sweep_mod.run_sweep(
        spec, opt, block["batch_grid"], block["seeds"], stop, block["max_steps"],
        x0=block.get("x0"), master_seed=seed, jobs=args.jobs,
    )

    out = _out_dir(args, cfg)
    p1 = emit_csv([r.as_dict() for r in summary.rows], out / "sweep.csv",
                  ["b", "seed", "steps", "sfo", "exit_reason"])
    print(f"wrote {p1} ({len(summary.rows)} rows)")
    p2 = emit_csv([s.as_dict() for s in summary.per_batch], out / "summary.csv",
                  ["b", "mean_steps", "mean_sfo", "converged_fraction"])
    print(f"wrote {p2} ({len(summary.per_batch)} batch sizes)")

    critical = _critical_report(spec, opt, stop, block, summary, seed)
    critical["config"] = resolved
    p3 = dump_json(critical, out / "critical.json")
    print(f"wrote {p3} (empirical b* = {critical['empirical_b_star']})")
    return 0


def _critical_report(spec, opt, stop, block, summary, seed) -> dict:
    eta, _ = opt.effective_eta_beta()
    notes = []
    try:
        b_star = sweep_mod.empirical_critical_batch(summary)
    except ValueError as exc:
        b_star = None
        notes.append(str(exc))
    bound = None if b_star is None else sweep_mod.variance_upper_bound(
        b_star, stop.epsilon, eta)

    unconverged = [s.b for s in summary.per_batch if s.converged_fraction < 1.0]
    if unconverged:
        notes.append(f"excluded from argmin (not fully converged): {unconverged}")
    notes.append("stop rule gradient norms: "
                 + ("minibatch" if stop.use_minibatch_norm else "exact full gradient"))

    report = {
        "empirical_b_star": b_star,
        "variance_upper_bound": bound,
        "epsilon": stop.epsilon,
        "analytic_b_star": None,
        "params": None,
        "notes": notes,
    }

    x_ref = block.get("reference_point")
    if x_ref is None and spec.minimizer() is not None:
        x_ref = spec.minimizer()
        notes.append("analytic reference point: objective minimizer")
    if x_ref is None:
        notes.append("analytic curve skipped: no reference point available")
        return report

    ref_config = replace(opt, batch_size=int(block["batch_grid"][0]))
    ref_trace = run_optimizer(
        spec, ref_config, x0=block.get("x0"), stop=stop,
        max_steps=int(block["max_steps"]),
        rng=RngStream(seed).child("reference"),
        trace_options=TraceOptions(record=True, record_x=True, record_f=False),
    )
    try:
        params = sweep_mod.xyz_from_setup(spec, opt, x_ref, trace=ref_trace,
                                          epsilon=stop.epsilon,
                                          x0=block.get("x0"))
        report["params"] = params.as_dict()
        report["analytic_b_star"] = sweep_mod.analytic_critical_batch(params)
    except (sweep_mod.DomainError, ValueError) as exc:
        notes.append(f"analytic curve unavailable: {exc}")
    return report


def cmd_noise(args) -> int:
    cfg = _require_config(args)
    spec = build_objective(cfg)
    opt = build_optimizer(cfg)
    block = dict(cfg.get("noise", {}))
    block.setdefault("steps", 1500)
    seed = resolve_seed(cfg)
    resolved = _resolved(cfg, seed, noise=block)

    trace = run_optimizer(
        spec, opt, x0=block.get("x0"), max_steps=block["steps"],
        rng=RngStream(seed),
        trace_options=TraceOptions(record=True, record_x=False, record_f=False),
    )
    report = noise_mod.search_direction_noise(trace, spec,
                                              burn_in=block.get("burn_in"))
    out = _out_dir(args, cfg)
    p1 = emit_csv(list(report.rows()), out / "noise.csv",
                  ["t", "grad_noise_sq", "omega_sq"])
    print(f"wrote {p1} ({trace.steps} steps)")
    p2 = dump_json({"summary": report.summary.as_dict(), "config": resolved},
                   out / "noise.json")
    print(f"wrote {p2} (mean omega^2 = {report.summary.mean_omega_sq:.6g})")
    return 0


def cmd_smooth(args) -> int:
    cfg = _require_config(args)
    spec = build_objective(cfg)
    block = dict(cfg.get("smooth", {}))
    if args.delta is not None:
        block["delta"] = args.delta
    if args.dist:
        block["dist"] = args.dist
    if args.samples is not None:
        block["samples"] = args.samples
    if args.points_file:
        import json
        block["points"] = json.loads(Path(args.points_file).read_text())
    block.setdefault("delta", 0.1)
    block.setdefault("dist", "unit-sphere-uniform")
    block.setdefault("samples", 100_000)
    if "points" not in block:
        block["points"] = [[float(v) for v in spec.default_start()]]
    seed = resolve_seed(cfg)
    resolved = _resolved(cfg, seed, smooth=block)

    lipschitz = block.get("lipschitz")
    if lipschitz is None and "box_radius" in block:
        lipschitz = spec.lipschitz_on_box(block["box_radius"])
    if lipschitz is None:
        lipschitz = spec.constants().lipschitz
    if lipschitz is None:
        raise ConfigError(
            "objective has no known Lipschitz constant; set smooth.lipschitz "
            "or smooth.box_radius", "$.smooth.lipschitz")

    report = smoothing.smoothing_gap_check(
        spec, block["points"], block["delta"], lipschitz=lipschitz,
        samples=block["samples"], dist=block["dist"], rng=RngStream(seed),
    )
    out = _out_dir(args, cfg)
    payload = {
        "delta": report.delta,
        "lipschitz": report.lipschitz,
        "dist": block["dist"],
        "samples": block["samples"],
        "points": [p.as_dict() for p in report.points],
        "all_pass": report.all_passed,
        "config": resolved,
    }
    path = dump_json(payload, out / "smooth.json")
    print(f"wrote {path} ({len(report.points)} points, all_pass={report.all_passed})")
    return 0


def cmd_sharpness(args) -> int:
    cfg = _require_config(args)
    spec = build_objective(cfg)
    block = dict(cfg.get("sharpness", {}))
    if args.rho is not None:
        block["rho"] = args.rho
    if args.p:
        block["p"] = 2 if args.p == "2" else "inf"
    if args.iters is not None:
        block["iters"] = args.iters
    if args.method:
        block["method"] = args.method
    block.setdefault("rho", 0.5)
    block.setdefault("p", "inf")
    block.setdefault("iters", 50)
    block.setdefault("method", "sign-ascent")
    seed = resolve_seed(cfg)
    resolved = _resolved(cfg, seed, sharpness=block)

    point = block.get("point", [float(v) for v in spec.default_start()])
    try:
        spec_sharp = smoothing.SharpnessSpec(
            rho=block["rho"], c=block.get("c"), p=block["p"],
            method=block["method"], iters=block["iters"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "$.sharpness") from exc
    value = smoothing.adaptive_sharpness(spec, np.asarray(point, dtype=float),
                                         spec_sharp, rng=RngStream(seed))
    out = _out_dir(args, cfg)
    payload = {
        "value": value,
        "rho": block["rho"],
        "p": block["p"],
        "iters": block["iters"],
        "method": block["method"],
        "point": [float(v) for v in point],
        "config": resolved,
    }
    path = dump_json(payload, out / "sharpness.json")
    print(f"wrote {path} (sharpness = {value:.6g})")
    return 0


def cmd_verify(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    block = dict(cfg.get("verify", {}))
    if "master_seed" in cfg or os.environ.get(SEED_ENV_VAR):
        seed = resolve_seed(cfg)
    else:
        seed = analysis.VerifySettings().master_seed
    settings = analysis.VerifySettings(master_seed=seed, jobs=args.jobs, **block)
    results = analysis.run_verify_suite(settings)
    all_asserted = all(r.holds for r in results if r.asserted)
    for r in results:
        status = "pass" if r.holds else ("FAIL" if r.asserted else "reported-false")
        kind = "asserted" if r.asserted else "diagnostic"
        print(f"  [{status}] {r.check} ({kind}): lhs={r.lhs:.6g} rhs={r.rhs:.6g}")
    resolved = _resolved(cfg, settings.master_seed, verify=block)
    payload = {
        "checks": [r.as_dict() for r in results],
        "all_asserted_hold": all_asserted,
        "config": resolved,
    }
    out = _out_dir(args, cfg)
    path = dump_json(payload, out / "verify.json")
    print(f"wrote {path} ({len(results)} checks, all asserted hold: {all_asserted})")
    return 0 if all_asserted else 1


def cmd_table1(args) -> int:
    text = fixture_table_text()
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "table1.txt"
        path.write_text(text, encoding="utf-8")
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noise-lab",
        description="Measure stochastic-gradient noise, sweep batch sizes, "
                    "and audit the analytic bounds on synthetic objectives.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", help="output directory (default: config output_dir or .)")

    p = sub.add_parser("run", help="run one optimizer trace, export JSONL")
    common(p)
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("sweep", help="batch-size sweep with critical-batch report")
    common(p)
    p.add_argument("--batch-grid", help="comma separated batch sizes")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seeds", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("noise", help="per-step noise norms and summary")
    common(p)
    p.set_defaults(handler=cmd_noise)

    p = sub.add_parser("smooth", help="smoothed-value gap check")
    common(p)
    p.add_argument("--delta", type=float)
    p.add_argument("--dist", choices=list(smoothing.DISTRIBUTIONS))
    p.add_argument("--samples", type=int)
    p.add_argument("--points-file", help="JSON array of points")
    p.set_defaults(handler=cmd_smooth)

    p = sub.add_parser("sharpness", help="worst-case adaptive sharpness lower bound")
    common(p)
    p.add_argument("--rho", type=float)
    p.add_argument("--p", choices=["2", "inf"])
    p.add_argument("--iters", type=int)
    p.add_argument("--method", choices=list(smoothing.SHARPNESS_METHODS))
    p.set_defaults(handler=cmd_sharpness)

    p = sub.add_parser("verify", help="run the identity/bound suite")
    common(p)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("table1", help="print the built-in variance back-estimation fixture")
    p.add_argument("--out", help="also write table1.txt here")
    p.set_defaults(handler=cmd_table1)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
