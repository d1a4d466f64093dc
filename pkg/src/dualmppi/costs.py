"""Merge-task costs: quadratic ego tracking plus indicator penalties.

The stage cost is a diagonal quadratic on the ego channels only (traffic
states enter solely through the indicator geometry), the terminal cost
pulls the lateral offset to the main-lane center, and every active
indicator adds one violation penalty.  Indicators cover footprint
collision, leaving the drivable region, and merging outside the platoon.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .traffic import StackedState, VEHICLE_LENGTH, VEHICLE_WIDTH


@dataclass(frozen=True)
class RoadGeometry:
    """Straight two-lane Frenet geometry: main lane at d=0, ramp alongside."""

    main_center: float = 0.0
    ramp_center: float = -3.5
    lane_width: float = 3.5
    soft_nose: float = 0.0
    ramp_end: float = 300.0

    def __post_init__(self) -> None:
        if self.ramp_end <= self.soft_nose:
            raise ValueError("ramp_end must lie beyond the soft nose")
        if self.lane_width <= 0.0:
            raise ValueError("lane_width must be positive")

    @property
    def left_edge(self) -> float:
        return self.main_center + 0.5 * self.lane_width

    @property
    def lane_boundary(self) -> float:
        """Shared edge between ramp and main lane."""
        return self.main_center - 0.5 * self.lane_width

    @property
    def ramp_edge(self) -> float:
        return self.ramp_center - 0.5 * self.lane_width


@dataclass(frozen=True)
class CostConfig:
    v_goal: float = 10.0
    q_vs: float = 10.0
    q_vd: float = 0.1
    q_s: float = 0.0
    s_goal: float = 0.0
    q_d: float = 10.0
    q_d_f: float = 1.0e4
    q_penalty: float = 1.0e6
    geometry: RoadGeometry = field(default_factory=RoadGeometry)
    footprint_length: float = VEHICLE_LENGTH
    footprint_width: float = VEHICLE_WIDTH
    collision_margin: float = 0.2

    def __post_init__(self) -> None:
        for name in ("q_vs", "q_vd", "q_s", "q_d", "q_d_f"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"CostConfig.{name} must be nonnegative")
        if self.q_penalty <= 0.0:
            raise ValueError("CostConfig.q_penalty must be positive")


def indicator_flags(x: NDArray[np.floating], cfg: CostConfig) -> NDArray[np.bool_]:
    """Collision / off-road / invalid-merge flags, batched.

    ``x`` is ``(..., 4*(n_v+1))``; returns ``(..., 3)`` booleans in that
    order.  Collision inflates both footprints by the safety margin on
    every side; off-road checks the uninflated ego footprint against the
    drivable band (ramp plus main lane before the ramp end, main lane
    only after); invalid-merge fires when the ego center is laterally in
    the main lane but not strictly between the trailing and leading
    traffic centers.
    """
    x = np.asarray(x, dtype=np.float64)
    geo = cfg.geometry
    ego_s = x[..., 2]
    ego_d = x[..., 3]
    traffic_s = x[..., 6::4]
    traffic_d = x[..., 7::4]

    ds_lim = cfg.footprint_length + 2.0 * cfg.collision_margin
    dd_lim = cfg.footprint_width + 2.0 * cfg.collision_margin
    hit = (np.abs(ego_s[..., None] - traffic_s) < ds_lim) & (
        np.abs(ego_d[..., None] - traffic_d) < dd_lim
    )
    collision = hit.any(axis=-1)

    half_w = 0.5 * cfg.footprint_width
    lower = np.where(ego_s <= geo.ramp_end, geo.ramp_edge, geo.lane_boundary)
    off_road = (ego_d - half_w < lower) | (ego_d + half_w > geo.left_edge)

    in_lane = np.abs(ego_d - geo.main_center) < 0.5 * geo.lane_width
    between = (ego_s > traffic_s[..., 0]) & (ego_s < traffic_s[..., -1])
    invalid_merge = in_lane & ~between

    return np.stack([collision, off_road, invalid_merge], axis=-1)


def indicators(x: StackedState, cfg: CostConfig) -> tuple[bool, bool, bool]:
    flags = indicator_flags(x.to_array(), cfg)
    return bool(flags[0]), bool(flags[1]), bool(flags[2])


def stage_cost_batch(x: NDArray[np.floating], cfg: CostConfig) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=np.float64)
    quad = (
        cfg.q_vs * np.square(x[..., 0] - cfg.v_goal)
        + cfg.q_vd * np.square(x[..., 1])
        + cfg.q_s * np.square(x[..., 2] - cfg.s_goal)
        + cfg.q_d * np.square(x[..., 3])
    )
    return quad + cfg.q_penalty * indicator_flags(x, cfg).sum(axis=-1)


def terminal_cost_batch(x: NDArray[np.floating], cfg: CostConfig) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=np.float64)
    quad = cfg.q_d_f * np.square(x[..., 3])
    return quad + cfg.q_penalty * indicator_flags(x, cfg).sum(axis=-1)


def stage_cost(x: StackedState, cfg: CostConfig) -> float:
    return float(stage_cost_batch(x.to_array(), cfg))


def terminal_cost(x: StackedState, cfg: CostConfig) -> float:
    return float(terminal_cost_batch(x.to_array(), cfg))


def trajectory_cost_batch(traj: NDArray[np.floating], cfg: CostConfig) -> NDArray[np.float64]:
    """Terminal cost of the last state plus stage costs of all earlier ones.

    ``traj`` is ``(N, ..., D)`` holding the N states visited after the
    current one; a length-1 trajectory is charged the terminal cost only.
    """
    traj = np.asarray(traj, dtype=np.float64)
    total = terminal_cost_batch(traj[-1], cfg)
    if traj.shape[0] > 1:
        total = total + stage_cost_batch(traj[:-1], cfg).sum(axis=0)
    return total


def trajectory_cost(traj: NDArray[np.floating] | list[StackedState], cfg: CostConfig) -> float:
    if len(traj) and isinstance(traj[0], StackedState):
        traj = np.stack([s.to_array() for s in traj], axis=0)
    return float(trajectory_cost_batch(np.asarray(traj), cfg))
