"""Frenet-frame dynamics for a merging ego vehicle and reactive main-lane traffic.

The ego is a double integrator driven by clamped longitudinal/lateral
acceleration commands.  Traffic vehicles follow an IDM-style longitudinal
law extended with a merge reaction: a laterally engaged ego acts as a
second virtual lead whose influence is scaled by a per-driver yield
factor.  Traffic vehicles never move laterally.

State layout (per vehicle, ego first): ``[v_s, v_d, s, d]`` with
longitudinal speed/position ``v_s``/``s`` and lateral speed/offset
``v_d``/``d``.  A stacked state is the concatenation of all vehicles,
so its length is ``4 * (n_v + 1)``.

All array operations broadcast over leading batch dimensions, so the
same code path serves single-state stepping, particle-filter prediction
and the planner's Monte Carlo rollouts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

# Single-vehicle footprint, shared with the cost module's collision geometry.
VEHICLE_LENGTH = 4.5
VEHICLE_WIDTH = 1.8

# Lateral band (relative to the main-lane center) in which an ego that is
# longitudinally ahead is treated as a virtual lead by a traffic driver.
ENGAGE_LATERAL_GAP = 2.0
# An ego still on the ramp engages once it has crept closer than this offset.
ENGAGE_RAMP_MIN_D = -2.5
# Left edge of the main lane; below this the ego counts as "on the ramp".
MAIN_LANE_EDGE_D = -1.75

IDM_DELTA = 4.0

PARAM_FIELDS = (
    "desired_speed",
    "time_headway",
    "max_accel",
    "comfort_decel",
    "min_gap",
    "yield_factor",
)


@dataclass(frozen=True)
class DriverParams:
    """Hidden behavior parameters of one traffic driver.

    ``yield_factor`` scales the driver's reaction to a merging ego:
    1 yields like to a real lead vehicle, 0 ignores the ego entirely.
    """

    desired_speed: float
    time_headway: float
    max_accel: float
    comfort_decel: float
    min_gap: float
    yield_factor: float

    def __post_init__(self) -> None:
        for name in PARAM_FIELDS[:-1]:
            if getattr(self, name) <= 0.0:
                raise ValueError(f"DriverParams.{name} must be strictly positive")
        if not 0.0 <= self.yield_factor <= 1.0:
            raise ValueError("DriverParams.yield_factor must lie in [0, 1]")

    def to_array(self) -> NDArray[np.float64]:
        return np.array([getattr(self, f) for f in PARAM_FIELDS], dtype=np.float64)

    @classmethod
    def from_array(cls, arr: NDArray[np.floating]) -> "DriverParams":
        return cls(*(float(v) for v in np.asarray(arr, dtype=np.float64)))


def stack_params(params: Sequence[DriverParams]) -> NDArray[np.float64]:
    """Stack per-vehicle parameters into a ``(n_v, 6)`` array."""
    return np.stack([p.to_array() for p in params], axis=0)


@dataclass(frozen=True)
class VehicleState:
    v_s: float
    v_d: float
    s: float
    d: float

    def to_array(self) -> NDArray[np.float64]:
        return np.array([self.v_s, self.v_d, self.s, self.d], dtype=np.float64)

    @classmethod
    def from_array(cls, arr: NDArray[np.floating]) -> "VehicleState":
        return cls(*(float(v) for v in np.asarray(arr, dtype=np.float64)))


@dataclass(frozen=True)
class StackedState:
    """Ego state plus the ordered main-lane traffic (index 1 is rear-most)."""

    ego: VehicleState
    traffic: tuple[VehicleState, ...]

    def __post_init__(self) -> None:
        for tv in self.traffic:
            if tv.v_d != 0.0:
                raise ValueError("traffic vehicles have no lateral motion (v_d must be 0)")

    @property
    def n_vehicles(self) -> int:
        return len(self.traffic)

    def to_array(self) -> NDArray[np.float64]:
        return np.concatenate([self.ego.to_array()] + [tv.to_array() for tv in self.traffic])

    @classmethod
    def from_array(cls, arr: NDArray[np.floating]) -> "StackedState":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 1 or arr.size % 4 != 0 or arr.size < 8:
            raise ValueError("stacked state must be a flat vector of 4*(n_v+1) entries")
        vehicles = [VehicleState.from_array(arr[4 * i : 4 * i + 4]) for i in range(arr.size // 4)]
        return cls(ego=vehicles[0], traffic=tuple(vehicles[1:]))


@dataclass(frozen=True)
class KinematicLimits:
    """Ego acceleration bounds, traffic emergency deceleration and the step size."""

    lon_min: float = -4.0
    lon_max: float = 3.0
    lat_min: float = -2.0
    lat_max: float = 2.0
    b_emergency: float = 6.0
    dt: float = 0.1

    def __post_init__(self) -> None:
        if self.lon_min >= self.lon_max or self.lat_min >= self.lat_max:
            raise ValueError("acceleration bounds must satisfy min < max per axis")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.b_emergency <= 0.0:
            raise ValueError("b_emergency must be positive")


def n_vehicles_of(x: NDArray[np.floating]) -> int:
    return x.shape[-1] // 4 - 1


def clamp_ego(v_s: NDArray[np.floating] | float, u: NDArray[np.floating], lim: KinematicLimits) -> NDArray[np.float64]:
    """Clip an ego acceleration command to the kinematic constraint set.

    Each axis is clipped to its bounds, then the longitudinal command is
    raised so the speed cannot go negative over one step.  Broadcasts over
    leading dimensions of ``u``; ``v_s`` is the current ego speed.
    """
    u = np.asarray(u, dtype=np.float64)
    lon = np.clip(u[..., 0], lim.lon_min, lim.lon_max)
    lon = np.maximum(lon, -np.asarray(v_s, dtype=np.float64) / lim.dt)
    lat = np.clip(u[..., 1], lim.lat_min, lim.lat_max)
    # The speed floor can widen lon beyond u's shape; bring lat along.
    lon, lat = np.broadcast_arrays(lon, lat)
    return np.stack([lon, lat], axis=-1)


def _idm_interaction(v, gap, dv, t_headway, a_max, b_comf, s_min):
    """Squared demanded-over-actual gap ratio; inf where the gap is non-positive."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        s_star = s_min + v * t_headway + v * dv / (2.0 * np.sqrt(a_max * b_comf))
        s_star = np.maximum(s_star, 0.0)
        deficit = np.square(s_star / gap)
    return np.where(gap > 0.0, deficit, np.inf)


def traffic_accels(
    traffic_v: NDArray[np.floating],
    traffic_s: NDArray[np.floating],
    traffic_d: NDArray[np.floating],
    ego_vs: NDArray[np.floating],
    ego_s: NDArray[np.floating],
    ego_d: NDArray[np.floating],
    theta: NDArray[np.floating],
    lim: KinematicLimits,
) -> NDArray[np.float64]:
    """Longitudinal accelerations for all traffic vehicles at once.

    ``traffic_v``/``traffic_s``/``traffic_d`` have shape ``(..., n_v)``;
    ego channels broadcast against them with a trailing unit axis.
    ``theta`` is ``(..., n_v, 6)`` in ``PARAM_FIELDS`` order.  Vehicle
    ``n_v - 1`` (the lead-most) reacts only to an engaged ego.
    """
    v0 = theta[..., 0]
    t_headway = theta[..., 1]
    a_max = theta[..., 2]
    b_comf = theta[..., 3]
    s_min = theta[..., 4]
    kappa = theta[..., 5]

    free = 1.0 - np.power(traffic_v / v0, IDM_DELTA)

    # Reaction to the main-lane lead (vehicles 0..n_v-2 in traffic indexing).
    lead_gap = traffic_s[..., 1:] - traffic_s[..., :-1] - VEHICLE_LENGTH
    lead_dv = traffic_v[..., :-1] - traffic_v[..., 1:]
    lead_deficit = _idm_interaction(
        traffic_v[..., :-1], lead_gap, lead_dv,
        t_headway[..., :-1], a_max[..., :-1], b_comf[..., :-1], s_min[..., :-1],
    )
    deficit = np.zeros(np.broadcast_shapes(traffic_v.shape, t_headway.shape))
    deficit[..., :-1] = lead_deficit

    # Reaction to the ego as a virtual lead, scaled by the yield factor.
    ego_vs_b = ego_vs[..., None]
    ego_s_b = ego_s[..., None]
    ego_d_b = ego_d[..., None]
    engaged = (
        (np.abs(ego_d_b - traffic_d) < ENGAGE_LATERAL_GAP)
        | ((ego_d_b < MAIN_LANE_EDGE_D) & (ego_d_b > ENGAGE_RAMP_MIN_D))
    ) & (ego_s_b > traffic_s)
    ego_gap = ego_s_b - traffic_s - VEHICLE_LENGTH
    ego_dv = traffic_v - ego_vs_b
    interaction = _idm_interaction(
        traffic_v, ego_gap, ego_dv, t_headway, a_max, b_comf, s_min
    )
    # kappa = 0 means no ego reaction at all, even at non-positive gap
    # where the interaction saturates to inf.
    with np.errstate(invalid="ignore"):
        ego_deficit = np.where(kappa > 0.0, kappa * interaction, 0.0)
    deficit = np.maximum(deficit, np.where(engaged, ego_deficit, 0.0))

    accel = a_max * (free - deficit)
    accel = np.where(np.isfinite(accel), accel, -lim.b_emergency)
    return np.clip(accel, -lim.b_emergency, a_max)


def driver_accel(
    me: VehicleState,
    ego: VehicleState,
    lead: VehicleState | None,
    params: DriverParams,
    lim: KinematicLimits | None = None,
) -> float:
    """Longitudinal acceleration of one traffic driver.

    IDM free-road term minus the most restrictive of the main-lane-lead
    reaction and the yield-scaled reaction to an engaged ego.  A
    non-positive gap to an engaged lead commands emergency braking rather
    than raising.  Output is clipped to ``[-b_emergency, max_accel]``.
    """
    lim = lim or KinematicLimits()
    p = params
    free = 1.0 - (me.v_s / p.desired_speed) ** IDM_DELTA

    deficit = 0.0
    if lead is not None:
        gap = lead.s - me.s - VEHICLE_LENGTH
        deficit = float(
            _idm_interaction(me.v_s, gap, me.v_s - lead.v_s,
                             p.time_headway, p.max_accel, p.comfort_decel, p.min_gap)
        )
    engaged = (
        abs(ego.d - me.d) < ENGAGE_LATERAL_GAP
        or (ego.d < MAIN_LANE_EDGE_D and ego.d > ENGAGE_RAMP_MIN_D)
    ) and ego.s > me.s
    if engaged and p.yield_factor > 0.0:
        gap = ego.s - me.s - VEHICLE_LENGTH
        ego_deficit = p.yield_factor * float(
            _idm_interaction(me.v_s, gap, me.v_s - ego.v_s,
                             p.time_headway, p.max_accel, p.comfort_decel, p.min_gap)
        )
        deficit = max(deficit, ego_deficit)

    accel = p.max_accel * (free - deficit)
    if not np.isfinite(accel):
        return -lim.b_emergency
    return float(np.clip(accel, -lim.b_emergency, p.max_accel))


def step(
    x: NDArray[np.floating],
    u: NDArray[np.floating],
    theta: NDArray[np.floating],
    w: NDArray[np.floating] | None,
    lim: KinematicLimits,
) -> NDArray[np.float64]:
    """One discrete-time step of the combined ego-traffic dynamics.

    Positions integrate the current velocities, velocities then integrate
    the accelerations (clamped ego command, driver model for traffic), and
    the disturbance ``w`` is added verbatim.  Traffic accelerations are
    floored at ``-v/dt`` so the deterministic part cannot drive a traffic
    vehicle backwards; traffic lateral channels never change.

    ``x`` is ``(..., 4*(n_v+1))``, ``u`` is ``(..., 2)``, ``theta`` is
    ``(..., n_v, 6)``; all leading dimensions broadcast.
    """
    x = np.asarray(x, dtype=np.float64)
    dt = lim.dt

    ego_vs = x[..., 0]
    ego_vd = x[..., 1]
    traffic_v = x[..., 4::4]
    traffic_s = x[..., 6::4]

    u_eff = clamp_ego(ego_vs, u, lim)
    acc = traffic_accels(traffic_v, traffic_s, x[..., 7::4], ego_vs, x[..., 2], x[..., 3], theta, lim)
    acc = np.maximum(acc, -traffic_v / dt)

    shape = np.broadcast_shapes(x.shape[:-1], u_eff.shape[:-1], acc.shape[:-1])
    out = np.empty(shape + x.shape[-1:], dtype=np.float64)
    out[...] = x
    out[..., 2] += dt * ego_vs
    out[..., 3] += dt * ego_vd
    # Floor at zero: the -v/dt accel floor guarantees nonnegativity only up
    # to rounding, so snap the residual ulp.
    out[..., 0] = np.maximum(out[..., 0] + dt * u_eff[..., 0], 0.0)
    out[..., 1] += dt * u_eff[..., 1]
    out[..., 6::4] += dt * traffic_v
    out[..., 4::4] = np.maximum(out[..., 4::4] + dt * acc, 0.0)
    if w is not None:
        out += w
    return out


def rollout(
    x0: NDArray[np.floating],
    controls: NDArray[np.floating],
    theta: NDArray[np.floating],
    w_seq: NDArray[np.floating] | None,
    lim: KinematicLimits,
) -> NDArray[np.float64]:
    """Iterate ``step`` over a control sequence; returns the N visited states.

    ``controls`` is ``(N, ..., 2)`` and ``w_seq`` ``(N, ..., D)`` or None;
    output is ``(N, ..., D)`` with entry ``k`` the state after ``k+1`` steps.
    """
    n = controls.shape[0]
    if w_seq is not None and w_seq.shape[0] != n:
        raise ValueError("disturbance sequence length must match the control sequence")
    x = np.asarray(x0, dtype=np.float64)
    out = []
    for k in range(n):
        x = step(x, controls[k], theta, None if w_seq is None else w_seq[k], lim)
        out.append(x)
    return np.stack(out, axis=0)
