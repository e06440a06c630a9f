"""Command line entry point: ``mfldp <experiment> --config <file> [--out DIR] [--workers K] [--checked]``.

Exit codes: 0 success, 2 invalid configuration, 3 mean-field solver did not
converge, 4 rate optimizer infeasible, 5 an invariant check failed, 6 growth
bound violated. Failures also print one JSON line to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checks, io
from .config import EXPERIMENTS, ConfigError, RunConfig, parse_config
from .ldp import decay_curve, estimate_I, estimate_J, importance_sample, lln_experiment, naive_mc
from .meanfield import MeanFieldError, picard_solve
from .sgd import growth_bound_report, simulate_theta_n
from .tilt import TiltedKernel, discretize_kernel

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3
EXIT_INFEASIBLE = 4
EXIT_CHECK = 5
EXIT_GROWTH = 6

log = logging.getLogger("mfldp")


class RunFailure(RuntimeError):
    def __init__(self, code: int, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}")
        self.code, self.reason, self.detail = code, reason, detail


def _rate_rows(est):
    return [{
        "value": est.value, "entropy_cost": est.entropy_cost, "init_cost": est.init_cost,
        "constraint_gap": est.constraint_gap, "achieved": est.achieved, "status": est.status,
        "upper_bound": est.upper_bound,
    }]


RATE_HEADER = ["value", "entropy_cost", "init_cost", "constraint_gap", "achieved", "status", "upper_bound"]


def _write_rate(out: Path, name: str, est) -> list[Path]:
    files = [io.write_csv(out / f"{name}.csv", RATE_HEADER, _rate_rows(est))]
    trace = [{"iteration": i, "objective": o, "gap": g, "accepted": a}
             for i, (o, g, a) in enumerate(est.optimizer_trace)]
    files.append(io.write_csv(out / f"{name}_trace.csv", ["iteration", "objective", "gap", "accepted"], trace))
    tilt = est.tilt
    header = ["block", "t_start", "t_end"] + [f"p_{j + 1}" for j in range(tilt.probs.shape[1])]
    rows = [[b, tilt.block_edges[b], tilt.block_edges[b + 1]] + list(tilt.probs[b]) for b in range(tilt.blocks)]
    files.append(io.write_csv(out / f"{name}_tilt.csv", header, rows))
    files.append(io.write_csv(out / f"{name}_nu0.csv", ["atom", "prob"], list(enumerate(est.nu0.probs))))
    return files


def _rates(cfg: RunConfig, joint: bool):
    est_i = estimate_I(cfg.event, cfg.nu, cfg.pi, cfg.optimizer, cfg.act)
    if not joint:
        return est_i, None
    return est_i, estimate_J(cfg.event, cfg.nu, cfg.pi, cfg.optimizer, cfg.act, base=est_i)


def run(cfg: RunConfig, out_dir=None, workers: int = 1, checked: bool = False) -> int:
    """Dispatch one experiment, write its files and manifest, return the exit status."""
    if checked:
        workers = 1
    out = Path(out_dir or os.environ.get("MFLDP_OUT") or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    statuses: dict = {}
    extra: dict = {}
    code, failure = EXIT_OK, None
    try:
        code = _dispatch(cfg, out, workers, files, statuses, extra)
    except RunFailure as exc:
        code, failure = exc.code, exc
        statuses["failure"] = {"reason": exc.reason, "detail": exc.detail}
    statuses["exit_code"] = code
    io.write_manifest(out, cfg, statuses, files, workers, checked, extra)
    if failure is not None:
        print(json.dumps({"status": "failed", "reason": failure.reason, "detail": failure.detail,
                          "exit_code": code}), file=sys.stderr)
    return code


def _dispatch(cfg: RunConfig, out: Path, workers: int, files: list, statuses: dict, extra: dict) -> int:
    exp = cfg.experiment
    pi, nu, act, sim = cfg.pi, cfg.nu, cfg.act, cfg.sim

    if exp == "simulate":
        traj = simulate_theta_n(sim, pi, nu, act)
        rep = growth_bound_report(traj, traj.stream, sim, act, check=False)
        files.append(io.write_trajectories(out / "trajectory.csv", traj.paths, traj.steps, traj.grid))
        extra["growth_bound"] = rep.to_dict()
        statuses["simulate"] = "ok"
        statuses["growth_bound"] = "ok" if rep.ok else "violated"
        if not rep.ok:
            raise RunFailure(EXIT_GROWTH, "growth_bound_violation", f"{rep.observed_sup} > {rep.bound}")
        return EXIT_OK

    if exp == "meanfield":
        mf = cfg.meanfield
        rho = TiltedKernel.constant(pi.probs, sim.T)
        sol, rep = picard_solve(rho, pi, nu, mf.dt, mf.tol, mf.max_iter, act, mf.damping)
        steps = np.arange(len(sol.times))
        files.append(io.write_trajectories(out / "trajectory.csv", sol.paths, steps, sol.times))
        ratios = [float("nan")] + list(rep.contraction_ratios)
        files.append(io.write_csv(out / "picard.csv", ["iteration", "gap", "ratio"],
                                  [[i + 1, g, r] for i, (g, r) in enumerate(zip(rep.gaps, ratios))]))
        extra["picard"] = rep.to_dict()
        statuses["meanfield"] = rep.status
        if not rep.converged:
            raise RunFailure(EXIT_NONCONVERGED, "nonconverged", f"last gap {rep.gaps[-1]:.3e}")
        return EXIT_OK

    if exp == "lln":
        try:
            res = lln_experiment(cfg.lln.functional, cfg.lln.n_list, cfg.lln.replicas, nu, pi, act,
                                 cfg.meanfield.dt, cfg.seed, sim.T, workers=workers)
        except MeanFieldError as exc:
            raise RunFailure(EXIT_NONCONVERGED, "nonconverged", str(exc)) from None
        files.append(io.write_csv(out / "lln.csv", ["n", "median_abs_error", "iqr"], res.rows))
        if cfg.plots:
            files.append(io.line_plot(out / "lln.svg", [r["n"] for r in res.rows],
                                      {"median |error|": [r["median_abs_error"] for r in res.rows]},
                                      "n", "median |theta^n(f) - theta*(f)|", logx=True, logy=True))
        extra["theta_star"] = res.theta_star
        statuses["lln"] = "ok"
        statuses["growth_violations"] = res.growth_violations
        if res.growth_violations:
            raise RunFailure(EXIT_GROWTH, "growth_bound_violation", f"{res.growth_violations} runs")
        return EXIT_OK

    if exp in ("rate_I", "rate_J"):
        est_i, est_j = _rates(cfg, joint=exp == "rate_J")
        est = est_i if exp == "rate_I" else est_j
        files.extend(_write_rate(out, exp, est))
        statuses[exp] = est.status
        if est.status != "feasible":
            raise RunFailure(EXIT_INFEASIBLE, "infeasible", f"best constraint gap {est.constraint_gap:.3e}")
        return EXIT_OK

    if exp == "importance":
        _, est = _rates(cfg, joint=True)
        files.extend(_write_rate(out, "rate_J", est))
        statuses["rate_J"] = est.status
        if est.status != "feasible":
            raise RunFailure(EXIT_INFEASIBLE, "infeasible", f"best constraint gap {est.constraint_gap:.3e}")
        R = cfg.mc.replicas
        naive = naive_mc(cfg.event, sim, nu, pi, R, cfg.seed, act, workers)
        tilted = importance_sample(cfg.event, discretize_kernel(est.tilt, sim.n), sim, nu, pi, R, cfg.seed, act,
                                   est.nu0.probs, workers)
        header = ["method", "p_hat", "ci_halfwidth", "std", "ess", "hits", "replicas", "status"]
        rows = [dict(method=m, **r._asdict()) for m, r in (("naive", naive), ("tilted", tilted))]
        files.append(io.write_csv(out / "importance.csv", header, rows))
        statuses["importance"] = {"naive": naive.status, "tilted": tilted.status}
        return EXIT_OK

    if exp == "decay":
        est = None
        if cfg.mc.method == "tilted":
            _, est = _rates(cfg, joint=True)
            files.extend(_write_rate(out, "rate_J", est))
            statuses["rate_J"] = est.status
            if est.status != "feasible":
                raise RunFailure(EXIT_INFEASIBLE, "infeasible", f"best constraint gap {est.constraint_gap:.3e}")
        rows = decay_curve(cfg.event, cfg.mc.n_list, cfg.mc.method, cfg.mc.replicas, cfg.seed, pi, nu, act,
                           sim.T, est, workers)
        header = ["n", "n_prime", "p_hat", "ci_halfwidth", "ess", "minus_log_p_over_nprime", "rate_lo", "rate_hi",
                  "flagged"]
        files.append(io.write_csv(out / "decay.csv", header, rows))
        if cfg.plots:
            series = {"-(1/n') log p_hat": [r["minus_log_p_over_nprime"] for r in rows]}
            if est is not None:
                series["J upper bound"] = [est.value] * len(rows)
            files.append(io.line_plot(out / "decay.svg", [r["n"] for r in rows], series, "n", "rate"))
        statuses["decay"] = {"flagged_rows": sum(r["flagged"] for r in rows)}
        return EXIT_OK

    if exp == "check":
        results = checks.run_all(pi, nu, act, cfg.seed)
        files.append(io.write_csv(out / "check.csv", ["check", "value", "threshold", "passed", "detail"],
                                  [r.row() for r in results]))
        print(checks.format_table(results))
        statuses["check"] = {r.name: r.passed for r in results}
        failed = [r.name for r in results if not r.passed]
        if failed:
            raise RunFailure(EXIT_CHECK, "check_failed", ",".join(failed))
        return EXIT_OK

    raise RunFailure(EXIT_CONFIG, "unknown_experiment", exp)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfldp", description="Mean-field SGD and large-deviation experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", default=None, help="output directory (overrides config and MFLDP_OUT)")
    p.add_argument("--workers", type=int, default=1, help="worker threads for replica chunks")
    p.add_argument("--checked", action="store_true", help="single worker, sequential reductions")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="warning: %(message)s", stream=sys.stderr)
    try:
        text = Path(args.config).read_text()
        cfg = parse_config(text, args.experiment)
    except (OSError, ConfigError) as exc:
        path = getattr(exc, "path", args.config)
        print(json.dumps({"status": "failed", "reason": "config_error", "path": path, "detail": str(exc),
                          "exit_code": EXIT_CONFIG}), file=sys.stderr)
        return EXIT_CONFIG
    if args.workers < 1:
        print(json.dumps({"status": "failed", "reason": "config_error", "path": "--workers",
                          "detail": "workers must be >= 1", "exit_code": EXIT_CONFIG}), file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, args.out, args.workers, args.checked)


if __name__ == "__main__":
    sys.exit(main())
