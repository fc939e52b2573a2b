"""Command-line experiment runner: check / solve / simulate / gradient / sweep / optimize.

Every subcommand writes flat CSV artifacts into the output directory and a
human-readable summary to stdout.  Given the same config and seed, artifacts
are byte-identical across reruns and worker counts.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import dp
from .config import (
    ConfigError,
    ExperimentConfig,
    build_model,
    load_config,
    parse_method,
    to_ini,
    validate_config,
)
from .estimators import GradEstimate, fd_estimate, ipa_estimate, spa_estimate
from .model import StoppingModel, check_assumptions
from .sim import ReplicationStreams, sample_paths

__all__ = ["main", "optimize_theta", "run_sweep"]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3
EXIT_PARTIAL = 4

# Optimizer iterations draw from their own stream domains so successive steps
# never reuse replication randomness.
_OPTIMIZER_DOMAIN_BASE = 1


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _resolve_theta(cfg: ExperimentConfig, model: StoppingModel, override: float | None) -> float:
    if override is not None:
        return float(override)
    if cfg.policy.theta == "solve":
        V = dp.value_iterate(model)
        res = dp.extract_control_limit(model, V)
        print(f"policy.theta = solve -> using control limit {res.theta:.6g} from value iteration")
        return res.theta
    return float(cfg.policy.theta)


def _gradient_once(
    model: StoppingModel,
    method: str,
    theta: float,
    h0: float,
    horizon: int,
    reps: int,
    delta: float | None,
    crn: bool,
    aux_reps: int,
    streams: ReplicationStreams,
    workers: int,
) -> GradEstimate:
    if method == "spa":
        return spa_estimate(model, theta, h0, horizon, reps, aux_reps, streams, workers)
    if method == "fd":
        return fd_estimate(model, theta, h0, horizon, reps, delta, crn, streams, workers)
    if method == "ipa":
        return ipa_estimate(model, theta, h0, horizon, reps, streams, workers)
    raise ConfigError([f"unknown method {method!r}"])


def run_check(cfg: ExperimentConfig, model: StoppingModel, out: Path, grid_points: int) -> int:
    grid = np.linspace(0.0, model.H_D, grid_points + 1)[:-1]
    report = check_assumptions(model, grid)
    rows = [
        (r.name, r.passed, r.vacuous, r.worst, "" if r.witness is None else " ".join(_fmt(w) for w in r.witness), r.note)
        for r in report
    ]
    _write_csv(out / "check.csv", ["assumption", "passed", "vacuous", "worst", "witness", "note"], rows)
    for r in report:
        status = "pass" if r.passed else "FAIL"
        extra = " (vacuous)" if r.vacuous else ""
        note = f" - {r.note}" if r.note else ""
        print(f"{r.name}: {status}{extra}{note}")
    print(f"wrote {out / 'check.csv'}")
    return EXIT_OK


def run_solve(cfg: ExperimentConfig, model: StoppingModel, out: Path, nodes: int, tol: float, max_iter: int) -> int:
    V = dp.value_iterate(model, tol=tol, max_iter=max_iter, num_nodes=nodes)
    _write_csv(out / "value_function.csv", ["h", "value"], zip(V.nodes, V.values))
    limit = dp.extract_control_limit(model, V)
    print(f"value iteration: {V.iterations} iterations, residual {V.residual:.3e}, converged={V.converged}")
    print(f"control limit theta* = {limit.theta:.8g}")
    if not limit.structure_ok:
        print(f"warning: transplant-optimal set is not an up-set; violations near {limit.violations}")
    print(f"wrote {out / 'value_function.csv'}")
    return EXIT_OK if V.converged else EXIT_NONCONVERGENCE


def run_simulate(cfg: ExperimentConfig, model: StoppingModel, out: Path, streams: ReplicationStreams,
                 theta: float, reps: int, horizon: int, workers: int) -> int:
    batch = sample_paths(model, theta, cfg.run.h0, horizon, reps, streams, workers)
    rows = (
        (i, batch.value[i], "" if batch.stop_index[i] < 0 else int(batch.stop_index[i]), bool(batch.died[i]))
        for i in range(reps)
    )
    _write_csv(out / "simulate.csv", ["rep", "v_n", "stop_index", "died"], rows)
    mean = float(batch.value.mean())
    se = float(batch.value.std(ddof=1) / np.sqrt(reps))
    stopped = float((batch.stop_index >= 0).mean())
    died = float(batch.died.mean())
    print("theta,h0,horizon,N,mean,se")
    print(f"{theta:.6g},{cfg.run.h0:.6g},{horizon},{reps},{mean:.8g},{se:.4g}")
    print(f"  stopped {100*stopped:.2f}%  died {100*died:.2f}%  "
          f"horizon truncation bound {model.truncation_bound(horizon):.3g}")
    print(f"wrote {out / 'simulate.csv'}")
    return EXIT_OK


def run_gradient(cfg: ExperimentConfig, model: StoppingModel, out: Path, streams: ReplicationStreams,
                 method: str, theta: float, reps: int, horizon: int, delta: float, crn: bool,
                 aux_reps: int, workers: int) -> int:
    est = _gradient_once(model, method, theta, cfg.run.h0, horizon, reps, delta, crn, aux_reps, streams, workers)
    _write_csv(out / "gradient.csv", ["rep", "estimate"], enumerate(est.values))
    print(f"method,theta,N,mean,se")
    print(f"{est.method},{est.theta:.6g},{est.reps},{est.mean:.8g},{est.se:.4g}")
    if method == "ipa":
        print("note: the pathwise estimator is identically zero for this stopping problem;")
        print("      a threshold perturbation almost surely changes no stage reward, so the")
        print("      estimator misses the discrete transplant-decision change entirely.")
    print(f"wrote {out / 'gradient.csv'}")
    return EXIT_OK


def run_sweep(cfg: ExperimentConfig, model: StoppingModel, streams: ReplicationStreams, workers: int):
    """Cross product of sweep thetas x reps x methods; returns (rows, failures)."""
    sw, est = cfg.sweep, cfg.estimator
    if not sw.thetas or not sw.reps or not sw.methods:
        raise ConfigError(["sweep requires non-empty thetas, reps, and methods lists"])
    methods = [parse_method(s, est.delta) for s in sw.methods]
    rows = []
    failures = []
    for n in sw.reps:
        for theta in sw.thetas:
            for name, delta in methods:
                t0 = time.perf_counter()
                try:
                    g = _gradient_once(model, name, theta, cfg.run.h0, cfg.run.horizon, n,
                                       delta, est.crn, est.aux_reps, streams, workers)
                    rows.append((name, theta, n, delta, g.mean, g.se))
                    status = f"mean {g.mean:+.6f} se {g.se:.6f}"
                except Exception as exc:  # keep sweeping; cell marked failed
                    rows.append((name, theta, n, delta, None, None))
                    failures.append((name, theta, n, str(exc)))
                    status = f"FAILED: {exc}"
                dt = time.perf_counter() - t0
                label = name if delta is None else f"{name}(delta={delta:g})"
                print(f"sweep cell N={n} theta={theta:g} {label}: {status}  [{dt:.2f}s]")
    return rows, failures


def run_optimize(cfg: ExperimentConfig, model: StoppingModel, out: Path, streams: ReplicationStreams, workers: int) -> int:
    trace = optimize_theta(cfg, model, streams, workers)
    _write_csv(out / "optimize_trace.csv", ["iteration", "theta", "estimate", "se"], trace)
    final_theta = trace[-1][1]
    print(f"optimize: {cfg.optimize.iterations} iterations, final theta = {final_theta:.6g}")
    print(f"wrote {out / 'optimize_trace.csv'}")
    return EXIT_OK


def optimize_theta(cfg: ExperimentConfig, model: StoppingModel, streams: ReplicationStreams, workers: int = 1):
    """Stochastic gradient ascent on the threshold with step sizes a/(k+1).

    Returns trace rows (k, theta_k, estimate_k, se_k) for each iteration plus a
    final row holding the terminal theta.  The iterate is clipped into
    [clip_margin, H - clip_margin] after every step.
    """
    opt, run = cfg.optimize, cfg.run
    lo, hi = opt.clip_margin, model.H - opt.clip_margin
    theta = min(max(opt.theta0, lo), hi)
    rows = []
    for k in range(opt.iterations):
        est = spa_estimate(model, theta, run.h0, run.horizon, opt.reps_per_step,
                           cfg.estimator.aux_reps, streams.child(_OPTIMIZER_DOMAIN_BASE + k), workers)
        rows.append((k, theta, est.mean, est.se))
        step = opt.step_size / (k + 1.0)
        theta = min(max(theta + step * est.mean, lo), hi)
    rows.append((opt.iterations, theta, None, None))
    return rows


def _build_parser() -> argparse.ArgumentParser:
    # Global flags are accepted both before and after the subcommand; SUPPRESS
    # defaults keep the subparser from clobbering values parsed up front.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="path to an INI config, or a built-in scenario name (default: wsc-example)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override run.seed")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="directory for CSV artifacts (default: current directory)")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS,
                        help="parallel workers (default: config run.workers; 0 = all cores)")

    p = argparse.ArgumentParser(prog="stopgrad", parents=[common],
                                description="Simulate a transplant-timing stopping problem under "
                                            "threshold policies and estimate threshold derivatives.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", parents=[common], help="audit the structural assumptions numerically")
    c.add_argument("--grid-points", type=int, default=101)

    s = sub.add_parser("solve", parents=[common], help="value iteration, control limit, value-function CSV")
    s.add_argument("--nodes", type=int, default=dp.DEFAULT_NODES)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iter", type=int, default=100000)

    si = sub.add_parser("simulate", parents=[common], help="Monte Carlo paths under the configured policy")
    si.add_argument("--theta", type=float, default=None)
    si.add_argument("--reps", type=int, default=None)
    si.add_argument("--horizon", type=int, default=None)

    g = sub.add_parser("gradient", parents=[common], help="estimate dV/dtheta by spa, fd, or ipa")
    g.add_argument("--method", choices=["spa", "fd", "ipa"], default=None)
    g.add_argument("--theta", type=float, default=None)
    g.add_argument("--reps", type=int, default=None)
    g.add_argument("--delta", type=float, default=None)
    g.add_argument("--crn", dest="crn", action="store_true", default=None)
    g.add_argument("--no-crn", dest="crn", action="store_false")
    g.add_argument("--aux-reps", type=int, default=None)
    g.add_argument("--horizon", type=int, default=None)

    sub.add_parser("sweep", parents=[common],
                   help="cross product of thetas x reps x methods, one CSV row per cell")
    sub.add_parser("optimize", parents=[common], help="stochastic gradient ascent over the threshold")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(getattr(args, "config", "wsc-example"))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    if getattr(args, "seed", None) is not None:
        cfg.run.seed = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.run.workers = args.workers
    if getattr(args, "reps", None) is not None:
        cfg.run.reps = args.reps
    if getattr(args, "horizon", None) is not None:
        cfg.run.horizon = args.horizon
    if getattr(args, "method", None) is not None:
        cfg.estimator.method = args.method
    if getattr(args, "delta", None) is not None:
        cfg.estimator.delta = args.delta
    if getattr(args, "crn", None) is not None:
        cfg.estimator.crn = args.crn
    if getattr(args, "aux_reps", None) is not None:
        cfg.estimator.aux_reps = args.aux_reps

    errors = validate_config(cfg)
    if errors:
        for msg in errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_VALIDATION

    model = build_model(cfg)
    workers = cfg.run.workers if cfg.run.workers > 0 else (os.cpu_count() or 1)
    streams = ReplicationStreams(cfg.run.seed)
    out = Path(getattr(args, "out", "."))
    out.mkdir(parents=True, exist_ok=True)

    try:
        if args.command == "check":
            return run_check(cfg, model, out, args.grid_points)
        if args.command == "solve":
            return run_solve(cfg, model, out, args.nodes, args.tol, args.max_iter)
        if args.command == "simulate":
            theta = _resolve_theta(cfg, model, args.theta)
            return run_simulate(cfg, model, out, streams, theta, cfg.run.reps, cfg.run.horizon, workers)
        if args.command == "gradient":
            theta = _resolve_theta(cfg, model, args.theta)
            return run_gradient(cfg, model, out, streams, cfg.estimator.method, theta,
                                cfg.run.reps, cfg.run.horizon, cfg.estimator.delta,
                                cfg.estimator.crn, cfg.estimator.aux_reps, workers)
        if args.command == "sweep":
            rows, failures = run_sweep(cfg, model, streams, workers)
            _write_csv(out / "sweep.csv", ["method", "theta", "N", "delta", "mean", "se"], rows)
            print(f"wrote {out / 'sweep.csv'} ({len(rows)} cells, {len(failures)} failed)")
            return EXIT_PARTIAL if failures else EXIT_OK
        if args.command == "optimize":
            return run_optimize(cfg, model, out, streams, workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except dp.ConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
