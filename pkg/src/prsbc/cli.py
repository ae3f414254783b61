"""Command-line front end.

Subcommands:
  run        execute one scenario, writing trajectory.csv and metrics.json
  trials     run a seed batch of one scenario, writing aggregate metrics.json
  selfcheck  run the independent oracle suites

Exit codes: 0 ok, 1 oracle failure, 2 invalid input, 3 safety violation.
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import selfcheck, sim
from .dynamics import ObstacleSpec, RobotSpec
from .sim import Scenario, ScenarioError

EXIT_OK = 0
EXIT_ORACLE_FAILURE = 1
EXIT_INVALID_INPUT = 2
EXIT_SAFETY_VIOLATION = 3

_CONTROLLER_FLAGS = {
    "prsbc": "prsbc_centralized",
    "prsbc-dec": "prsbc_decentralized",
    "sbc": "sbc",
    "none": "none",
}
_CONVENTION_FLAGS = {"paper": "paper_d_factor", "sbc-compat": "sbc_compat"}

_SCENARIO_KEYS = {
    "name", "sigma", "sigma_o", "gamma", "dt", "max_steps", "seed",
    "controller", "convention", "gain", "goal_tolerance", "responsibility",
    "neighbor_radius", "safety_samples", "safety_stride", "safety_metric",
    "qp_tol", "qp_max_iter", "robots", "obstacles",
}
_ROBOT_KEYS = {"id", "radius", "ctrl_limit", "meas_noise", "proc_noise",
               "start", "goal", "model", "heading", "lookahead"}
_OBSTACLE_KEYS = {"id", "radius", "start", "velocity", "meas_noise",
                  "vel_noise"}


def _reject_unknown(mapping: dict, allowed: set, where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ScenarioError(f"unknown key(s) in {where}: {sorted(unknown)}")


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file; unknown keys are hard errors."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path} does not contain a key-value document")
    _reject_unknown(doc, _SCENARIO_KEYS, str(path))
    if "robots" not in doc or not doc["robots"]:
        raise ScenarioError("scenario must define at least one robot")

    robots = []
    for idx, entry in enumerate(doc["robots"]):
        _reject_unknown(entry, _ROBOT_KEYS, f"robots[{idx}]")
        try:
            robots.append(RobotSpec(
                id=int(entry.get("id", idx)),
                radius=float(entry["radius"]),
                ctrl_limit=float(entry["ctrl_limit"]),
                meas_noise=entry["meas_noise"],
                proc_noise=entry["proc_noise"],
                start=entry["start"],
                goal=entry["goal"],
                model_kind=entry.get("model", "single_integrator"),
                heading=float(entry.get("heading", 0.0)),
                lookahead=float(entry.get("lookahead", 0.1)),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"robots[{idx}]: {exc}") from exc

    obstacles = []
    for idx, entry in enumerate(doc.get("obstacles") or []):
        _reject_unknown(entry, _OBSTACLE_KEYS, f"obstacles[{idx}]")
        try:
            obstacles.append(ObstacleSpec(
                id=int(entry.get("id", idx)),
                radius=float(entry["radius"]),
                start=entry["start"],
                reported_velocity=entry["velocity"],
                meas_noise=entry["meas_noise"],
                vel_noise=entry["vel_noise"],
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"obstacles[{idx}]: {exc}") from exc

    sigma = float(doc.get("sigma", 0.9))
    kwargs = dict(
        robots=tuple(robots),
        obstacles=tuple(obstacles),
        sigma=sigma,
        sigma_o=float(doc.get("sigma_o", sigma)),
        gamma=float(doc.get("gamma", 100.0)),
        dt=float(doc.get("dt", 0.02)),
        max_steps=int(doc.get("max_steps", 2000)),
        seed=int(doc.get("seed", 0)),
        controller=str(doc.get("controller", "prsbc_centralized")),
        convention=str(doc.get("convention", "paper_d_factor")),
        gain=float(doc.get("gain", 1.0)),
        goal_tolerance=float(doc.get("goal_tolerance", 0.05)),
        safety_samples=int(doc.get("safety_samples", 10_000)),
        safety_stride=int(doc.get("safety_stride", 10)),
        safety_metric=str(doc.get("safety_metric", "monte_carlo")),
        name=str(doc.get("name", path.stem)),
    )
    if doc.get("responsibility") is not None:
        resp = doc["responsibility"]
        kwargs["responsibility"] = (np.asarray(resp, dtype=float)
                                    if isinstance(resp, list) else float(resp))
    if doc.get("neighbor_radius") is not None:
        kwargs["neighbor_radius"] = float(doc["neighbor_radius"])
    if doc.get("qp_tol") is not None:
        kwargs["qp_tol"] = float(doc["qp_tol"])
    if doc.get("qp_max_iter") is not None:
        kwargs["qp_max_iter"] = int(doc["qp_max_iter"])
    try:
        scenario = Scenario(**kwargs)
        sim.validate_scenario(scenario)
    except (ScenarioError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc
    return scenario


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_trajectory_csv(path, log: sim.TrajectoryLog) -> None:
    """One row per (step, robot); numbers carry 9 significant digits."""
    steps, n, d = log.true_pos.shape
    m = log.nominal.shape[2]
    header = (["step", "time_s", "robot_id"]
              + [f"true_{a}" for a in range(d)]
              + [f"meas_{a}" for a in range(d)]
              + [f"nom_{a}" for a in range(m)]
              + [f"safe_{a}" for a in range(m)]
              + ["solver_status"])
    lines = [",".join(header)]
    for s in range(steps):
        for i in range(n):
            cells = [str(s), _fmt(log.times[s]), str(i)]
            cells += [_fmt(v) for v in log.true_pos[s, i]]
            cells += [_fmt(v) for v in log.meas_pos[s, i]]
            cells += [_fmt(v) for v in log.nominal[s, i]]
            cells += [_fmt(v) for v in log.safe[s, i]]
            cells.append(sim.STATUS_NAMES[log.status[s, i]])
            lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def _metrics_dict(metrics: sim.Metrics, config: dict) -> dict:
    return {
        "config": config,
        "min_true_pair_distance_m": metrics.min_true_pair_distance,
        "min_empirical_pair_safety": metrics.min_empirical_pair_safety,
        "collision_step_count": metrics.collision_step_count,
        "fallback_count": metrics.fallback_count,
        "goal_reach_times_s": list(metrics.goal_reach_times),
        "mean_solve_time_per_robot_s": metrics.mean_solve_time_per_robot,
    }


def _echo_config(args, scenario: Scenario | None) -> dict:
    cfg = {
        "scenario": str(args.scenario) if args.scenario else None,
        "out": str(args.out) if getattr(args, "out", None) else None,
        "seed": args.seed,
        "controller": args.controller,
        "trials": getattr(args, "trials", None),
        "mc_samples": args.mc_samples,
        "convention": args.convention,
    }
    if scenario is not None:
        cfg["resolved"] = {
            "name": scenario.name,
            "controller": scenario.controller,
            "convention": scenario.convention,
            "sigma": scenario.sigma,
            "sigma_o": scenario.sigma_o,
            "gamma": scenario.gamma,
            "dt": scenario.dt,
            "max_steps": scenario.max_steps,
            "seed": scenario.seed,
            "n_robots": len(scenario.robots),
            "n_obstacles": len(scenario.obstacles),
        }
    return cfg


def _apply_overrides(scenario: Scenario, args) -> Scenario:
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.controller is not None:
        updates["controller"] = _CONTROLLER_FLAGS[args.controller]
    if args.convention is not None:
        updates["convention"] = _CONVENTION_FLAGS[args.convention]
    if args.mc_samples is not None:
        updates["safety_samples"] = args.mc_samples
    return replace(scenario, **updates) if updates else scenario


def cmd_run(args) -> int:
    try:
        scenario = _apply_overrides(load_scenario(args.scenario), args)
        sim.validate_scenario(scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log, metrics = sim.run(scenario)
    write_trajectory_csv(out / "trajectory.csv", log)
    payload = _metrics_dict(metrics, _echo_config(args, scenario))
    (out / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(f"{scenario.name}: {log.steps} steps, "
          f"min pair distance {metrics.min_true_pair_distance:.4f} m, "
          f"collisions {metrics.collision_step_count}, "
          f"fallbacks {metrics.fallback_count}")
    if metrics.collision_step_count > 0:
        return EXIT_SAFETY_VIOLATION
    return EXIT_OK


def cmd_trials(args) -> int:
    try:
        scenario = _apply_overrides(load_scenario(args.scenario), args)
        sim.validate_scenario(scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = sim.monte_carlo_trials(scenario, args.trials,
                                    base_seed=scenario.seed)
    agg = result.aggregate()
    payload = {
        "config": _echo_config(args, scenario),
        "n_trials": args.trials,
        "seeds": list(result.seeds),
        **agg,
        "per_trial": [_metrics_dict(mt, {"seed": sd})
                      for mt, sd in zip(result.per_trial, result.seeds)],
    }
    (out / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n")
    collisions = sum(mt.collision_step_count for mt in result.per_trial)
    print(f"{scenario.name}: {args.trials} trials, "
          f"min pair distance {agg['min_true_pair_distance']['min']:.4f} m, "
          f"min safety {agg['min_empirical_pair_safety']['min']:.4f}, "
          f"collision steps {collisions}")
    if collisions > 0:
        return EXIT_SAFETY_VIOLATION
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    results = selfcheck.run_all(seed=args.seed if args.seed is not None else 0,
                                mc_samples=args.mc_samples)
    for res in results:
        print(res.summary())
    if all(r.passed for r in results):
        return EXIT_OK
    return EXIT_ORACLE_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prsbc",
        description="probabilistic safety filter experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_scenario):
        p.add_argument("--scenario", type=Path, required=needs_scenario,
                       help="scenario file (YAML)")
        p.add_argument("--out", type=Path, default=Path("out"),
                       help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--controller", choices=sorted(_CONTROLLER_FLAGS),
                       default=None, help="controller override")
        p.add_argument("--convention", choices=sorted(_CONVENTION_FLAGS),
                       default=None, help="radius-term convention override")
        p.add_argument("--mc-samples", dest="mc_samples", type=int, default=None,
                       help="Monte Carlo samples per estimate")

    p_run = sub.add_parser("run", help="run one scenario")
    common(p_run, True)
    p_run.set_defaults(func=cmd_run)

    p_trials = sub.add_parser("trials", help="run a seed batch")
    common(p_trials, True)
    p_trials.add_argument("--trials", type=int, default=50,
                          help="number of seeds")
    p_trials.set_defaults(func=cmd_trials)

    p_check = sub.add_parser("selfcheck", help="run the oracle suites")
    common(p_check, False)
    p_check.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
