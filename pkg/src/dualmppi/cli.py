"""Command-line entry point: single trials, Monte Carlo runs, log files.

Configuration is a nested YAML file whose defaults reproduce the
benchmark setup; any key can be overridden from the file or with
repeatable ``--set section.key=value`` flags.  ``run`` executes one
trial and writes trajectory/belief CSV logs plus a JSON summary;
``montecarlo`` executes the paired-seed comparison and writes a JSON
report plus a human-readable table.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .belief import DisturbanceModel
from .controllers import PlannerConfig, PlannerKind
from .costs import CostConfig, RoadGeometry
from .harness import (MonteCarloReport, ScenarioConfig, TrialConfig,
                      belief_columns, default_prior, make_scenario, monte_carlo,
                      run_trial, trajectory_columns)
from .mppi import MppiConfig
from .seeding import STREAM_SCENARIO, stream_rng
from .traffic import KinematicLimits

OUT_DIR_ENV = "DUALMPPI_OUT"

DEFAULTS: dict = {
    "planner": "dmppi",
    "seed": 0,
    "mppi": {
        "lambda": 1.0e4,
        "sigma_u": [10.0, 1.5],
        "n_control_samples": 3000,
        "horizon": 50,
    },
    "belief": {
        "n_filter_particles": 10_000,
        "n_control_particles": 20,
        "n_disturbance_samples": 5,
        "vel_noise_std": 0.05,
        "pos_noise_std": 0.01,
    },
    "cost": {
        "v_goal": 10.0,
        "q_vs": 10.0,
        "q_vd": 0.1,
        "q_s": 0.0,
        "q_d": 10.0,
        "q_d_f": 1.0e4,
        "q_penalty": 1.0e6,
        "ramp_end": 300.0,
    },
    "limits": {
        "lon_min": -4.0,
        "lon_max": 3.0,
        "lat_min": -2.0,
        "lat_max": 2.0,
        "b_emergency": 6.0,
        "dt": 0.1,
    },
    "scenario": {
        "n_vehicles": 5,
        "traffic_speed": 10.0,
        "spacing": 8.0,
        "ego_speed": 10.0,
        "ego_d": -3.5,
        "n_friendly": 1,
        "prior_friendly_weight": 0.8,
        "time_budget": 20.0,
        "dwell_time": 1.0,
        "env_noise_scale": 1.0,
    },
    "run": {
        "trials": 100,
        "workers": 1,
        "out_dir": ".",
    },
}


class ConfigError(Exception):
    pass


def _merge(base: dict, override: dict, path: str = "") -> None:
    for key, value in override.items():
        here = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise ConfigError(f"unknown configuration key: {here}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here} must be a mapping")
            _merge(base[key], value, here)
        else:
            base[key] = value


def load_config(path: str | None, sets: list[str]) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(cfg, loaded)
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got: {item}")
        dotted, raw = item.split("=", 1)
        node = cfg
        parts = dotted.strip().split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown configuration key: {dotted}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown configuration key: {dotted}")
        node[parts[-1]] = yaml.safe_load(raw)
    return cfg


def build_planner_config(cfg: dict) -> PlannerConfig:
    try:
        mppi = MppiConfig(
            lambda_=float(cfg["mppi"]["lambda"]),
            sigma_u=np.diag(np.asarray(cfg["mppi"]["sigma_u"], dtype=np.float64)),
            n_control_samples=int(cfg["mppi"]["n_control_samples"]),
            horizon=int(cfg["mppi"]["horizon"]),
            seed=int(cfg["seed"]),
        )
        cost = CostConfig(
            v_goal=float(cfg["cost"]["v_goal"]),
            q_vs=float(cfg["cost"]["q_vs"]),
            q_vd=float(cfg["cost"]["q_vd"]),
            q_s=float(cfg["cost"]["q_s"]),
            q_d=float(cfg["cost"]["q_d"]),
            q_d_f=float(cfg["cost"]["q_d_f"]),
            q_penalty=float(cfg["cost"]["q_penalty"]),
            geometry=RoadGeometry(ramp_end=float(cfg["cost"]["ramp_end"])),
        )
        limits = KinematicLimits(
            lon_min=float(cfg["limits"]["lon_min"]),
            lon_max=float(cfg["limits"]["lon_max"]),
            lat_min=float(cfg["limits"]["lat_min"]),
            lat_max=float(cfg["limits"]["lat_max"]),
            b_emergency=float(cfg["limits"]["b_emergency"]),
            dt=float(cfg["limits"]["dt"]),
        )
        n_v = int(cfg["scenario"]["n_vehicles"])
        sw = np.tile([cfg["belief"]["vel_noise_std"] ** 2,
                      cfg["belief"]["vel_noise_std"] ** 2,
                      cfg["belief"]["pos_noise_std"] ** 2,
                      cfg["belief"]["pos_noise_std"] ** 2], n_v + 1).astype(np.float64)
        for v in range(1, n_v + 1):
            sw[4 * v + 1] = 0.0
            sw[4 * v + 3] = 0.0
        dist = DisturbanceModel(sigma_w=sw,
                                n_disturbance_samples=int(cfg["belief"]["n_disturbance_samples"]))
        return PlannerConfig(
            mppi=mppi, cost=cost, disturbance=dist, limits=limits,
            n_control_particles=int(cfg["belief"]["n_control_particles"]),
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def build_scenario_config(cfg: dict) -> ScenarioConfig:
    s = cfg["scenario"]
    try:
        return ScenarioConfig(
            n_vehicles=int(s["n_vehicles"]),
            traffic_speed=float(s["traffic_speed"]),
            spacing=float(s["spacing"]),
            ego_speed=float(s["ego_speed"]),
            ego_d=float(s["ego_d"]),
            n_friendly=int(s["n_friendly"]),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid scenario configuration: {exc}") from exc


def build_trial_config(cfg: dict) -> TrialConfig:
    s = cfg["scenario"]
    try:
        return TrialConfig(
            planner=build_planner_config(cfg),
            prior=default_prior(int(s["n_vehicles"]), float(s["prior_friendly_weight"])),
            n_filter_particles=int(cfg["belief"]["n_filter_particles"]),
            time_budget=float(s["time_budget"]),
            dwell_time=float(s["dwell_time"]),
            env_noise_scale=float(s["env_noise_scale"]),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid trial configuration: {exc}") from exc


def parse_kind(name: str) -> PlannerKind:
    try:
        return PlannerKind(name.strip().lower())
    except ValueError as exc:
        valid = ", ".join(k.value for k in PlannerKind)
        raise ConfigError(f"unknown planner '{name}' (choose from: {valid})") from exc


def _write_csv(path: Path, columns: list[str], rows: np.ndarray) -> None:
    with path.open("w") as fh:
        fh.write(",".join(columns) + "\n")
        np.savetxt(fh, np.atleast_2d(rows), delimiter=",", fmt="%.10g")


def _out_dir(cfg: dict, flag: str | None) -> Path:
    out = flag or os.environ.get(OUT_DIR_ENV) or cfg["run"]["out_dir"]
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set or [])
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.planner is not None:
        cfg["planner"] = args.planner
    kind = parse_kind(cfg["planner"])
    trial_cfg = build_trial_config(cfg)
    scen_cfg = build_scenario_config(cfg)
    out = _out_dir(cfg, args.out)

    seed = int(cfg["seed"])
    scenario = make_scenario(scen_cfg, stream_rng(seed, STREAM_SCENARIO))
    result = run_trial(scenario, kind, trial_cfg, seed)

    n_v = scen_cfg.n_vehicles
    _write_csv(out / "trajectory.csv", trajectory_columns(n_v), result.trajectory)
    _write_csv(out / "belief.csv", belief_columns(n_v), result.belief_log)
    summary = {
        "planner": kind.value,
        "planner_kind": kind.name,
        "seed": seed,
        "outcome": result.outcome.value,
        "success": result.success,
        "steps": result.steps,
        "merge_time": None if np.isnan(result.merge_time) else round(result.merge_time, 3),
        "min_long_gap": None if not np.isfinite(result.min_long_gap) else round(result.min_long_gap, 4),
        "min_lat_gap": None if not np.isfinite(result.min_lat_gap) else round(result.min_lat_gap, 4),
        "max_accel": round(result.max_accel, 4),
        "degraded_steps": result.degraded_steps,
        "friendly": list(scenario.friendly),
        "config": cfg,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"outcome: {result.outcome.value} (logs in {out})")
    return 0


METRIC_ROWS = [
    ("Success Rate", "success_rate", "{:.2f}"),
    ("Collision Rate", "collision_rate", "{:.2f}"),
    ("Avg. Min Long. Gap (m)", "avg_min_long_gap", "{:.2f}"),
    ("Avg. Min Lat. Gap (m)", "avg_min_lat_gap", "{:.2f}"),
    ("Avg. Max Accel (m/s^2)", "avg_max_accel", "{:.2f}"),
]


def format_report(report: MonteCarloReport) -> str:
    labels = {"cemppi": "CE-MPPI", "emppi": "EMPPI", "dmppi": "DMPPI"}
    cols = [labels.get(k, k) for k in report.kinds]
    width = 26
    lines = [f"{'Metric':<{width}}" + "".join(f"{c:>12}" for c in cols)]
    for label, key, fmt in METRIC_ROWS:
        cells = []
        for k in report.kinds:
            value = report.metrics[k][key]
            cells.append("n/a" if value is None or not np.isfinite(value) else fmt.format(value))
        lines.append(f"{label:<{width}}" + "".join(f"{c:>12}" for c in cells))
    lines.append(f"({report.n_trials} paired trials per planner)")
    return "\n".join(lines) + "\n"


def cmd_montecarlo(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set or [])
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.trials is not None:
        cfg["run"]["trials"] = args.trials
    if args.workers is not None:
        cfg["run"]["workers"] = args.workers
    kinds = ([parse_kind(k) for k in args.planner.split(",")]
             if args.planner else [PlannerKind.CE_MPPI, PlannerKind.EMPPI, PlannerKind.DMPPI])
    trial_cfg = build_trial_config(cfg)
    scen_cfg = build_scenario_config(cfg)
    out = _out_dir(cfg, args.out)

    n_trials = int(cfg["run"]["trials"])
    if n_trials < 1:
        raise ConfigError("run.trials must be at least 1")
    report = monte_carlo(scen_cfg, trial_cfg, kinds, n_trials,
                         master_seed=int(cfg["seed"]),
                         n_workers=int(cfg["run"]["workers"]))
    payload = report.to_dict()
    payload["config"] = cfg
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    table = format_report(report)
    (out / "report.txt").write_text(table)
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualmppi",
        description="Sampling-based dual MPC merge benchmark (single trials and Monte Carlo runs)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help=f"output directory (default: ${OUT_DIR_ENV} or cwd)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-path config override, e.g. mppi.horizon=40")

    run_p = sub.add_parser("run", help="execute a single trial and write its logs")
    common(run_p)
    run_p.add_argument("--planner", help="dmppi | emppi | cemppi")
    run_p.set_defaults(func=cmd_run)

    mc_p = sub.add_parser("montecarlo", help="paired-seed Monte Carlo comparison")
    common(mc_p)
    mc_p.add_argument("--planner", help="comma-separated planner list (default: all three)")
    mc_p.add_argument("--trials", type=int, help="number of paired trials")
    mc_p.add_argument("--workers", type=int, help="parallel worker count")
    mc_p.set_defaults(func=cmd_montecarlo)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
