"""Per-vehicle longitudinal and lateral planning.

Desired acceleration toward a target speed, cubic lateral curves for lane
changes, fixed-step trajectory rollouts, a proportional car-following law
for the platoon leader, and the Intelligent Driver Model for background
human-driven vehicles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigurationError, InvalidStateError
from .world import KinematicState

#: Comfort bounds shared by the benchmark CAVs (m/s^2).
DEFAULT_COMFORT_ACCEL = 2.0
DEFAULT_COMFORT_DECEL = -3.0


@dataclass(frozen=True)
class BehaviorParams:
    target_speed: float                           # m/s
    comfort_accel: float = DEFAULT_COMFORT_ACCEL  # m/s^2, > 0
    comfort_decel: float = DEFAULT_COMFORT_DECEL  # m/s^2, < 0

    def __post_init__(self):
        if not self.comfort_accel > 0:
            raise ConfigurationError("comfort_accel must be positive")
        if not self.comfort_decel < 0:
            raise ConfigurationError("comfort_decel must be negative")
        if self.target_speed < 0:
            raise ConfigurationError("target_speed must be non-negative")


def desired_accel(params: BehaviorParams, current_speed: float, dt: float) -> float:
    """Acceleration that closes the speed error in one step, comfort-bounded.

    a = min((v_target - v)/dt, a_plus) when speeding up, symmetric with the
    deceleration bound when slowing down.
    """
    if not dt > 0:
        raise InvalidStateError(f"dt must be positive, got {dt}")
    rate = (params.target_speed - current_speed) / dt
    if params.target_speed >= current_speed:
        return min(rate, params.comfort_accel)
    return max(rate, params.comfort_decel)


@dataclass(frozen=True)
class CubicCurve:
    """y(x) = a0 + a1*u + a2*u^2 + a3*u^3 with u = x - x_start.

    Coefficients are expressed in the domain-shifted basis so fitting stays
    well conditioned at large stations.
    """

    a0: float
    a1: float
    a2: float
    a3: float
    x_start: float
    x_end: float

    def __post_init__(self):
        if not self.x_end > self.x_start:
            raise ConfigurationError("curve domain must satisfy x_end > x_start")

    def evaluate(self, x: float) -> float:
        u = x - self.x_start
        return self.a0 + u * (self.a1 + u * (self.a2 + u * self.a3))

    def slope(self, x: float) -> float:
        u = x - self.x_start
        return self.a1 + u * (2.0 * self.a2 + u * 3.0 * self.a3)


def fit_cubic(y_start: float, slope_start: float, y_end: float, slope_end: float,
              x_start: float, x_end: float) -> CubicCurve:
    """Cubic through four boundary conditions: value and slope at both ends."""
    if not x_end > x_start:
        raise ConfigurationError(
            f"degenerate cubic domain [{x_start}, {x_end}]")
    w = x_end - x_start
    system = np.array([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [1.0, w, w * w, w * w * w],
        [0.0, 1.0, 2.0 * w, 3.0 * w * w],
    ])
    rhs = np.array([y_start, slope_start, y_end, slope_end])
    a0, a1, a2, a3 = np.linalg.solve(system, rhs)
    return CubicCurve(float(a0), float(a1), float(a2), float(a3), x_start, x_end)


class TrajectoryPoint(NamedTuple):
    time: float            # s
    station: float         # m
    lateral_offset: float  # m
    speed: float           # m/s
    accel: float           # m/s^2 commanded over the step starting here


@dataclass(frozen=True)
class Trajectory:
    points: tuple[TrajectoryPoint, ...]

    def station_at_index(self, i: int) -> float:
        return self.points[i].station

    def __len__(self) -> int:
        return len(self.points)


def plan_trajectory(state: KinematicState, params: BehaviorParams,
                    horizon_steps: int, dt: float,
                    lateral: Optional[CubicCurve] = None) -> Trajectory:
    """Roll the desired-acceleration law forward ``horizon_steps`` steps.

    Point i carries the acceleration applied over [t_i, t_{i+1}); lateral
    offsets are sampled from the cubic when one is given, else held constant.
    """
    if horizon_steps < 1:
        raise ConfigurationError("horizon_steps must be >= 1")

    def offset_at(x: float) -> float:
        if lateral is None:
            return state.lateral_offset
        if x >= lateral.x_end:
            return lateral.evaluate(lateral.x_end)
        if x <= lateral.x_start:
            return lateral.evaluate(lateral.x_start)
        return lateral.evaluate(x)

    points = []
    x, v, t = state.station, state.speed, 0.0
    for _ in range(horizon_steps):
        a = desired_accel(params, v, dt)
        points.append(TrajectoryPoint(t, x, offset_at(x), v, a))
        x = x + v * dt + 0.5 * a * dt * dt
        v = max(0.0, v + a * dt)
        t += dt
    points.append(TrajectoryPoint(t, x, offset_at(x), v, desired_accel(params, v, dt)))
    return Trajectory(tuple(points))


def leader_following_speed(gap: float, leader_speed: float, own_speed: float,
                           desired_headway: float = 1.5, gain: float = 0.5,
                           max_speed: Optional[float] = None) -> float:
    """Target-speed override regulating toward gap = headway * own speed.

    Proportional law: target = v_lead + gain * (gap - headway * v_own),
    clamped to [0, max_speed].  Fixed point sits at gap == headway * v when
    both vehicles run at v.
    """
    if not math.isfinite(gap):
        raise InvalidStateError(f"gap must be finite, got {gap}")
    target = leader_speed + gain * (gap - desired_headway * own_speed)
    target = max(0.0, target)
    if max_speed is not None:
        target = min(target, max_speed)
    return target


@dataclass(frozen=True)
class IdmParams:
    desired_speed: float        # v0, m/s
    min_gap: float = 2.0        # s0, m
    desired_headway: float = 1.5  # T, s
    max_accel: float = 1.5      # m/s^2
    comfort_brake: float = 2.0  # b, m/s^2, positive

    def __post_init__(self):
        for name in ("desired_speed", "min_gap", "desired_headway",
                     "max_accel", "comfort_brake"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"IDM parameter {name} must be positive")


def idm_accel(gap: float, speed: float, closing_speed: float, p: IdmParams) -> float:
    """Standard IDM acceleration, clamped below at -2b.

    a = a_max * [1 - (v/v0)^4 - (s*/s)^2],
    s* = s0 + v*T + v*dv / (2*sqrt(a_max*b)), dv = v_self - v_lead.
    A non-positive gap returns the emergency value -2b.
    """
    if gap <= 0:
        return -2.0 * p.comfort_brake
    s_star = (p.min_gap + speed * p.desired_headway
              + speed * closing_speed / (2.0 * math.sqrt(p.max_accel * p.comfort_brake)))
    a = p.max_accel * (1.0 - (speed / p.desired_speed) ** 4 - (s_star / gap) ** 2)
    return max(a, -2.0 * p.comfort_brake)
