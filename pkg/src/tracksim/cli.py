"""Command-line entry points.

Exit codes: 0 success, 2 configuration/validation error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .guidance import plan_trajectory, build_restricted_qp
from .harness import emit_rmse, emit_summary, emit_trial, run_monte_carlo, \
    run_trial, _fmt
from .prediction import GaussianBelief
from .qp import dump_problem
from .scenario import ScenarioConfig, ScenarioParseError, load_scenario
from .world import ValidationError

log = logging.getLogger(__name__)


def _apply_overrides(config: ScenarioConfig, args) -> ScenarioConfig:
    if getattr(args, "clutter_rate", None) is not None:
        config = dataclasses.replace(
            config, sensor=dataclasses.replace(
                config.sensor, clutter_rate=args.clutter_rate))
    if getattr(args, "particles", None) is not None:
        config = dataclasses.replace(
            config, filter=dataclasses.replace(
                config.filter, n_particles=args.particles))
    if getattr(args, "horizon", None) is not None:
        config = dataclasses.replace(
            config, planner=dataclasses.replace(
                config.planner, horizon=args.horizon))
    return config


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_validate(args) -> int:
    load_scenario(args.scenario)
    print(f"{args.scenario}: OK")
    return 0


def cmd_plan(args) -> int:
    config = _apply_overrides(load_scenario(args.scenario), args)
    out = _outdir(args)
    for j, target in enumerate(config.targets):
        belief = GaussianBelief(mean=target.mu0, cov=target.sigma0)
        if args.dump_qp:
            qp = build_restricted_qp(config.dynamics, config.planner, belief,
                                     list(config.obstacles), target.goal, {})
            dump_problem(qp, out / f"qp_target{j}.txt")
        plan = plan_trajectory(config.dynamics, config.planner, belief,
                               list(config.obstacles), target.goal)
        path = out / f"plan_target{j}.csv"
        with open(path, "w") as f:
            f.write("tau,mean_x,mean_y,mean_z,vx,vy,vz,cov_trace,u_x,u_y,faces\n")
            for tau in range(plan.controls.shape[0]):
                faces = "|".join(f"{n}:{i}" for (tt, n), i
                                 in sorted(plan.faces.items()) if tt == tau)
                f.write(",".join(
                    [str(tau)]
                    + [_fmt(v) for v in plan.means[tau]]
                    + [_fmt(np.trace(plan.covs[tau])),
                       _fmt(plan.controls[tau, 0]),
                       _fmt(plan.controls[tau, 1]), faces]) + "\n")
        print(f"target {j}: feasible={plan.feasible} "
              f"objective={plan.objective:.6g} -> {path}")
    return 0


def cmd_simulate(args) -> int:
    config = _apply_overrides(load_scenario(args.scenario), args)
    log_ = run_trial(config, args.seed, policy=args.policy)
    out = _outdir(args)
    emit_trial(log_, out, prefix=f"trial_{args.seed}")
    emit_summary(config, [args.seed], out,
                 extra={"policy": args.policy, "duration_s": log_.duration})
    print(f"simulated {log_.steps} steps in {log_.duration:.2f}s -> {out}")
    return 0


def cmd_montecarlo(args) -> int:
    config = _apply_overrides(load_scenario(args.scenario), args)
    series, logs = run_monte_carlo(config, args.trials, args.base_seed,
                                   workers=args.workers)
    out = _outdir(args)
    if args.format in ("csv", "both"):
        emit_rmse(series, out / "rmse.csv")
    emit_summary(config, [args.base_seed], out,
                 extra={"trials": args.trials,
                        "mean_rmse": float(series.averaged.mean())})
    print(f"{args.trials} trials; mean RMSE {series.averaged.mean():.3f} m "
          f"-> {out}")
    return 0


def cmd_baseline(args) -> int:
    config = _apply_overrides(load_scenario(args.scenario), args)
    series, logs = run_monte_carlo(config, args.trials, args.base_seed,
                                   workers=args.workers, policy="baseline",
                                   random_agent_init=False)
    out = _outdir(args)
    if args.format in ("csv", "both"):
        emit_rmse(series, out / "rmse_baseline.csv")
    emit_summary(config, [args.base_seed], out,
                 extra={"trials": args.trials, "policy": "baseline",
                        "mean_rmse": float(series.averaged.mean())})
    print(f"baseline: {args.trials} trials; mean RMSE "
          f"{series.averaged.mean():.3f} m -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tracksim",
        description="Bearings-only multi-target monitoring simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seeds=False, mc=False):
        p.add_argument("scenario", help="scenario YAML file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--lambda", dest="clutter_rate", type=float,
                       default=None, help="override clutter rate")
        p.add_argument("--particles", type=int, default=None)
        p.add_argument("--horizon", type=int, default=None)
        if seeds:
            p.add_argument("--seed", type=int, default=0)
        if mc:
            p.add_argument("--trials", type=int, required=True)
            p.add_argument("--base-seed", type=int, default=0)
            p.add_argument("--workers", type=int, default=1)
            p.add_argument("--format", choices=["csv", "summary", "both"],
                           default="both")

    p = sub.add_parser("validate", help="schema-check a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plan", help="guidance only: plan from initial beliefs")
    common(p)
    p.add_argument("--dump-qp", action="store_true",
                   help="dump the unrestricted QP matrices for cross-checking")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="one full trial with logs")
    common(p, seeds=True)
    p.add_argument("--policy", choices=["adaptive", "stationary"],
                   default="adaptive")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("montecarlo", help="seeded Monte-Carlo RMSE study")
    common(p, mc=True)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("baseline", help="3-fixed-sensor comparison study")
    common(p, mc=True)
    p.set_defaults(func=cmd_baseline)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioParseError, ValidationError, FileNotFoundError,
            ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # pragma: no cover - defensive
        print(f"runtime error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
