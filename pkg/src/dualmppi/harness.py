"""Scenario generation, closed-loop trials and the Monte Carlo comparison.

A trial runs the full loop at 10 Hz: downsample the filter belief, plan,
apply the first control, step the true dynamics (hidden parameters plus
environment noise), update the filter.  Termination is merge success
(a full dwell interval spent laterally in lane and strictly inside the
platoon), collision, reaching the ramp end while still on the ramp,
merging outside the platoon, or the time budget.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .belief import (BeliefParticles, ParamBox, PriorSpec, downsample, entropy,
                     filter_update, init_particles)
from .controllers import PlannerConfig, PlannerKind, plan
from .costs import indicator_flags
from .mppi import shift_plan, zero_plan
from .seeding import (STREAM_CONTROL, STREAM_DISTURBANCE, STREAM_DOWNSAMPLE,
                      STREAM_ENV, STREAM_PARTICLES, STREAM_SCENARIO, stream_rng)
from .traffic import (PARAM_FIELDS, StackedState, VEHICLE_LENGTH, VEHICLE_WIDTH,
                      VehicleState, clamp_ego, step)

logger = logging.getLogger(__name__)

# Driver populations for the merge experiment.  Calibration constants:
# the friendly box describes drivers that open a gap for a merging car,
# the aggressive box drivers that hold their slot and ignore it.  Both
# populations share the car-following fields, chosen so an undisturbed
# 8 m platoon at 10 m/s is near equilibrium (no slot opens or collapses
# on its own within a trial); only the yield factor separates them, so
# the populations are indistinguishable until the ego engages.
FRIENDLY_BOX = ParamBox(
    desired_speed=(10.25, 10.4),
    time_headway=(0.06, 0.09),
    max_accel=(1.0, 1.5),
    comfort_decel=(1.5, 2.5),
    min_gap=(0.4, 0.5),
    yield_factor=(0.85, 1.0),
)
AGGRESSIVE_BOX = ParamBox(
    desired_speed=(10.25, 10.4),
    time_headway=(0.06, 0.09),
    max_accel=(1.0, 1.5),
    comfort_decel=(1.5, 2.5),
    min_gap=(0.4, 0.5),
    yield_factor=(0.0, 0.15),
)


def default_prior(n_vehicles: int, friendly_weight: float = 0.8,
                  friendly_box: ParamBox = FRIENDLY_BOX,
                  aggressive_box: ParamBox = AGGRESSIVE_BOX) -> PriorSpec:
    return PriorSpec(
        components=((friendly_weight, friendly_box), (1.0 - friendly_weight, aggressive_box)),
        n_vehicles=n_vehicles,
    )


class Outcome(Enum):
    MERGED = "merged"
    RAMP_END_FAILURE = "ramp_end_failure"
    INVALID_MERGE_FAILURE = "invalid_merge_failure"
    COLLISION = "collision"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class ScenarioConfig:
    n_vehicles: int = 5
    traffic_speed: float = 10.0
    spacing: float = 8.0
    ego_speed: float = 10.0
    ego_d: float = -3.5
    n_friendly: int = 1
    friendly_box: ParamBox = FRIENDLY_BOX
    aggressive_box: ParamBox = AGGRESSIVE_BOX

    def __post_init__(self) -> None:
        if self.n_vehicles < 2:
            raise ValueError("need at least two traffic vehicles to merge between")
        if not 0 <= self.n_friendly <= self.n_vehicles:
            raise ValueError("friendly count must lie in [0, n_vehicles]")


@dataclass(frozen=True)
class Scenario:
    initial: StackedState
    true_params: NDArray[np.float64]
    friendly: tuple[int, ...]

    def fingerprint(self) -> bytes:
        return self.initial.to_array().tobytes() + self.true_params.tobytes()


def make_scenario(cfg: ScenarioConfig, rng: np.random.Generator) -> Scenario:
    """Platoon at uniform speed and spacing; ego on the ramp alongside it.

    The ego starting station is uniform over the platoon span, and the
    configured number of friendly drivers is assigned to uniformly chosen
    vehicles; everyone else draws from the aggressive box.
    """
    span = cfg.spacing * (cfg.n_vehicles - 1)
    ego_s = float(rng.uniform(0.0, span))
    friendly = np.sort(rng.choice(cfg.n_vehicles, size=cfg.n_friendly, replace=False))
    u = rng.uniform(size=(cfg.n_vehicles, len(PARAM_FIELDS)))
    lo_f, hi_f = cfg.friendly_box.bounds()
    lo_a, hi_a = cfg.aggressive_box.bounds()
    is_friendly = np.zeros(cfg.n_vehicles, dtype=bool)
    is_friendly[friendly] = True
    lo = np.where(is_friendly[:, None], lo_f, lo_a)
    hi = np.where(is_friendly[:, None], hi_f, hi_a)
    params = lo + u * (hi - lo)

    traffic = tuple(
        VehicleState(v_s=cfg.traffic_speed, v_d=0.0, s=cfg.spacing * m, d=0.0)
        for m in range(cfg.n_vehicles)
    )
    ego = VehicleState(v_s=cfg.ego_speed, v_d=0.0, s=ego_s, d=cfg.ego_d)
    return Scenario(initial=StackedState(ego=ego, traffic=traffic),
                    true_params=params, friendly=tuple(int(i) for i in friendly))


@dataclass(frozen=True)
class TrialConfig:
    planner: PlannerConfig
    prior: PriorSpec
    n_filter_particles: int = 10_000
    time_budget: float = 20.0
    dwell_time: float = 1.0
    env_noise_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.n_filter_particles < self.planner.n_control_particles:
            raise ValueError("filter particle count must cover the control particle count")
        if self.time_budget <= 0.0 or self.dwell_time <= 0.0:
            raise ValueError("time budget and dwell time must be positive")


@dataclass(frozen=True)
class TrialResult:
    outcome: Outcome
    steps: int
    merge_time: float
    min_long_gap: float
    min_lat_gap: float
    max_accel: float
    degraded_steps: int
    trajectory: NDArray[np.float64] | None
    belief_log: NDArray[np.float64] | None

    @property
    def success(self) -> bool:
        return self.outcome is Outcome.MERGED


def trajectory_columns(n_vehicles: int) -> list[str]:
    cols = ["t"]
    for v in range(n_vehicles + 1):
        tag = "ego" if v == 0 else f"veh{v}"
        cols += [f"{tag}_v_s", f"{tag}_v_d", f"{tag}_s", f"{tag}_d"]
    cols += ["u_s", "u_d", "collision", "off_road", "invalid_merge"]
    return cols


def belief_columns(n_vehicles: int) -> list[str]:
    cols = ["t"]
    for v in range(1, n_vehicles + 1):
        cols += [f"veh{v}_{f}" for f in PARAM_FIELDS]
    cols.append("entropy")
    return cols


def _gap_update(x: NDArray[np.float64], gaps: NDArray[np.float64]) -> None:
    """Track conditional footprint-edge gaps in place: gaps = [long, lat]."""
    ds = np.abs(x[2] - x[6::4]) - VEHICLE_LENGTH
    dd = np.abs(x[3] - x[7::4]) - VEHICLE_WIDTH
    lat_overlap = dd < 0.0
    lon_overlap = ds < 0.0
    if lat_overlap.any():
        gaps[0] = min(gaps[0], ds[lat_overlap].min())
    if lon_overlap.any():
        gaps[1] = min(gaps[1], dd[lon_overlap].min())


def run_trial(
    scenario: Scenario,
    kind: PlannerKind,
    cfg: TrialConfig,
    entropy_key: int | tuple[int, ...],
    env_noise_fn: Callable[[int], NDArray[np.float64]] | None = None,
    control_override: Callable[[int, NDArray[np.float64]], NDArray[np.float64]] | None = None,
    keep_logs: bool = True,
) -> TrialResult:
    """Run one closed-loop episode and classify the outcome.

    ``entropy_key`` seeds every RNG stream, so (scenario, kind, key)
    fully determine the result.  ``env_noise_fn`` overrides the
    per-step environment noise draw (step index -> disturbance vector);
    ``control_override`` replaces the planner entirely (step, state ->
    control), leaving the belief machinery running.
    """
    pcfg = cfg.planner
    lim = pcfg.limits
    dt = lim.dt
    geo = pcfg.cost.geometry
    n_steps = int(round(cfg.time_budget / dt))
    dwell_steps = int(round(cfg.dwell_time / dt))

    b = init_particles(cfg.prior, cfg.n_filter_particles,
                       stream_rng(entropy_key, STREAM_PARTICLES))
    warm = zero_plan(pcfg.mppi.horizon)
    x = scenario.initial.to_array()
    theta_true = scenario.true_params

    traj_rows: list[np.ndarray] = []
    belief_rows: list[np.ndarray] = []

    def log_state(t_now: float, u_applied: NDArray[np.float64], flags: NDArray[np.bool_]) -> None:
        if keep_logs:
            traj_rows.append(np.concatenate([[t_now], x, u_applied, flags.astype(np.float64)]))

    def log_belief(t_now: float) -> None:
        if keep_logs:
            belief_rows.append(np.concatenate(
                [[t_now], b.param_mean().ravel(), [entropy(b.weights)]]))

    gaps = np.array([np.inf, np.inf])
    max_accel = 0.0
    degraded_steps = 0
    violated = False
    dwell = 0
    outcome: Outcome | None = None
    merge_time = np.nan
    steps_done = 0

    flags = indicator_flags(x, pcfg.cost)
    _gap_update(x, gaps)
    log_belief(0.0)
    if flags[0]:
        outcome = Outcome.COLLISION
        log_state(0.0, np.zeros(2), flags)
    violated = violated or flags.any()

    for t in range(n_steps):
        if outcome is not None:
            break
        if control_override is not None:
            u_cmd = np.asarray(control_override(t, x), dtype=np.float64)
        else:
            b_ctrl = downsample(b, pcfg.n_control_particles,
                                stream_rng(entropy_key, STREAM_DOWNSAMPLE, t))
            res = plan(kind, x, b_ctrl, warm, pcfg,
                       rng_control=stream_rng(entropy_key, STREAM_CONTROL, t),
                       rng_dist=stream_rng(entropy_key, STREAM_DISTURBANCE, t))
            u_cmd = res.control
            warm = shift_plan(res.plan)
            degraded_steps += int(res.degraded)

        u_applied = clamp_ego(x[0], u_cmd, lim)
        max_accel = max(max_accel, float(np.abs(u_applied).max()))
        log_state(t * dt, u_applied, flags)

        if env_noise_fn is not None:
            w_env = np.asarray(env_noise_fn(t), dtype=np.float64)
        else:
            w_env = cfg.env_noise_scale * cfg.planner.disturbance.sample(
                (), stream_rng(entropy_key, STREAM_ENV, t))
        x_next = step(x, u_applied, theta_true, w_env, lim)
        b = filter_update(b, StackedState.from_array(x),
                          u_applied, StackedState.from_array(x_next),
                          pcfg.disturbance, lim)
        x = x_next
        steps_done = t + 1
        t_now = steps_done * dt

        flags = indicator_flags(x, pcfg.cost)
        violated = violated or flags.any()
        _gap_update(x, gaps)
        log_belief(t_now)

        if flags[0]:
            outcome = Outcome.COLLISION
        elif x[2] >= geo.ramp_end and x[3] < geo.lane_boundary:
            outcome = Outcome.RAMP_END_FAILURE
        elif flags[2]:
            outcome = Outcome.INVALID_MERGE_FAILURE
        else:
            in_slot = (abs(x[3] - geo.main_center) < 0.5 * geo.lane_width
                       and x[6] < x[2] < x[6 + 4 * (len(scenario.initial.traffic) - 1)])
            dwell = dwell + 1 if in_slot else 0
            if dwell >= dwell_steps:
                if violated:
                    outcome = Outcome.INVALID_MERGE_FAILURE
                else:
                    outcome = Outcome.MERGED
                    merge_time = t_now

    if outcome is None:
        outcome = Outcome.TIMEOUT
    if keep_logs and len(traj_rows) == steps_done:
        # Final visited state row; no further control is applied.
        traj_rows.append(np.concatenate([[steps_done * dt], x, np.zeros(2),
                                         flags.astype(np.float64)]))
    if control_override is None and degraded_steps == steps_done and steps_done > 0:
        logger.warning("planner ran degraded on every step of the trial")

    return TrialResult(
        outcome=outcome,
        steps=steps_done,
        merge_time=merge_time,
        min_long_gap=float(gaps[0]),
        min_lat_gap=float(gaps[1]),
        max_accel=max_accel,
        degraded_steps=degraded_steps,
        trajectory=np.vstack(traj_rows) if keep_logs else None,
        belief_log=np.vstack(belief_rows) if keep_logs else None,
    )


def _json_safe(obj):
    """Replace non-finite floats with None so the dict round-trips as JSON."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


@dataclass(frozen=True)
class MonteCarloReport:
    n_trials: int
    kinds: tuple[str, ...]
    metrics: dict
    trials: list

    def to_dict(self) -> dict:
        return _json_safe({"n_trials": self.n_trials, "kinds": list(self.kinds),
                           "metrics": self.metrics, "trials": self.trials})


def _finite_mean(values: Sequence[float]) -> float:
    arr = np.asarray(values, dtype=np.float64)
    arr = arr[np.isfinite(arr)]
    return float(arr.mean()) if arr.size else float("nan")


def summarize(kind: str, results: Sequence[TrialResult]) -> dict:
    return {
        "planner": kind,
        "success_rate": float(np.mean([r.success for r in results])),
        "collision_rate": float(np.mean([r.outcome is Outcome.COLLISION for r in results])),
        "avg_min_long_gap": _finite_mean([r.min_long_gap for r in results]),
        "avg_min_lat_gap": _finite_mean([r.min_lat_gap for r in results]),
        "avg_max_accel": _finite_mean([r.max_accel for r in results]),
    }


def monte_carlo(
    scenario_cfg: ScenarioConfig,
    cfg: TrialConfig,
    kinds: Sequence[PlannerKind],
    n_trials: int,
    master_seed: int,
    n_workers: int = 1,
) -> MonteCarloReport:
    """Paired-seed comparison: every planner sees the identical scenarios."""
    if n_trials < 1:
        raise ValueError("need at least one trial")
    scenarios = [
        make_scenario(scenario_cfg, stream_rng((master_seed, j), STREAM_SCENARIO))
        for j in range(n_trials)
    ]

    def one(j: int, kind: PlannerKind) -> TrialResult:
        return run_trial(scenarios[j], kind, cfg, (master_seed, j), keep_logs=False)

    jobs = [(j, kind) for kind in kinds for j in range(n_trials)]
    if n_workers > 1:
        from joblib import Parallel, delayed
        flat = Parallel(n_jobs=n_workers)(delayed(one)(j, kind) for j, kind in jobs)
    else:
        flat = [one(j, kind) for j, kind in jobs]

    by_kind: dict[str, list[TrialResult]] = {k.value: [] for k in kinds}
    for (j, kind), res in zip(jobs, flat):
        by_kind[kind.value].append(res)

    trials = []
    for j in range(n_trials):
        row: dict = {"trial": j, "seed": [master_seed, j],
                     "friendly": list(scenarios[j].friendly)}
        for kind in kinds:
            r = by_kind[kind.value][j]
            row[kind.value] = {
                "outcome": r.outcome.value,
                "merge_time": None if np.isnan(r.merge_time) else round(r.merge_time, 3),
                "min_long_gap": None if not np.isfinite(r.min_long_gap) else round(r.min_long_gap, 4),
                "min_lat_gap": None if not np.isfinite(r.min_lat_gap) else round(r.min_lat_gap, 4),
                "max_accel": round(r.max_accel, 4),
            }
        trials.append(row)

    metrics = {k.value: summarize(k.value, by_kind[k.value]) for k in kinds}
    return MonteCarloReport(n_trials=n_trials, kinds=tuple(k.value for k in kinds),
                            metrics=metrics, trials=trials)
