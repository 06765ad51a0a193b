"""Benchmark map, vehicle bodies, kinematic state, and the fixed-step world core.

Stations are longitudinal positions (meters) of a vehicle's FRONT bumper
along its lane centerline.  One station frame is shared by all lanes,
including the on-ramp, so a merging vehicle keeps its station through a
lane change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Optional

from .errors import ConfigurationError, InvalidStateError, InvariantViolation

#: Lane index used for the single-lane on-ramp.  Mainline lanes are 0..n-1
#: counted from the rightmost lane; the ramp sits to the right of lane 0.
RAMP_LANE = -1


class VehicleKind(Enum):
    CAV = "CAV"
    HUMAN_DRIVEN = "HumanDriven"


@dataclass(frozen=True)
class MapSpec:
    """Freeway segment with an on-ramp merge zone.

    The merge zone is the station interval [ramp_merge_start, accel_lane_end]
    within which a ramp vehicle may change into the rightmost mainline lane.
    """

    mainline_length: float = 2800.0   # m
    mainline_lanes: int = 2
    ramp_merge_start: float = 2000.0  # m
    accel_lane_end: float = 2300.0    # m
    lane_width: float = 3.5           # m

    def __post_init__(self):
        if not self.mainline_length > 0:
            raise ConfigurationError("mainline_length must be positive", "map.mainline_length")
        if self.mainline_lanes < 1:
            raise ConfigurationError("at least one mainline lane required", "map.mainline_lanes")
        if not (0 < self.ramp_merge_start < self.accel_lane_end <= self.mainline_length):
            raise ConfigurationError(
                "require 0 < ramp_merge_start < accel_lane_end <= mainline_length",
                "map.ramp_merge_start",
            )
        if not self.lane_width > 0:
            raise ConfigurationError("lane_width must be positive", "map.lane_width")

    def lane_center_y(self, lane: int) -> float:
        """Lateral coordinate of a lane centerline (ramp at negative y)."""
        return lane * self.lane_width

    def in_merge_zone(self, station: float) -> bool:
        return self.ramp_merge_start <= station <= self.accel_lane_end


@dataclass(frozen=True)
class VehicleBody:
    id: str
    length: float = 5.0  # m, bumper to bumper
    kind: VehicleKind = VehicleKind.CAV

    def __post_init__(self):
        if not self.length > 0:
            raise ConfigurationError("vehicle length must be positive", f"vehicle.{self.id}.length")


@dataclass(frozen=True, slots=True)
class KinematicState:
    """Longitudinal/lateral state of one vehicle at one step."""

    station: float              # m, front bumper along lane centerline
    lane: int = 0
    lateral_offset: float = 0.0  # m from current lane center
    speed: float = 0.0           # m/s, never negative
    acceleration: float = 0.0    # m/s^2 applied over the step that produced this state

    def position_xy(self, map_spec: MapSpec) -> tuple[float, float]:
        return self.station, map_spec.lane_center_y(self.lane) + self.lateral_offset


@dataclass(frozen=True)
class SimClock:
    step_index: int = 0
    dt: float = 0.05  # s

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive", "sim.dt")

    @property
    def time(self) -> float:
        # Always step_index * dt; never an accumulated sum, so no drift.
        return self.step_index * self.dt

    def tick(self) -> "SimClock":
        return SimClock(self.step_index + 1, self.dt)


@dataclass(frozen=True)
class LaneChangeDirective:
    """Start a lane change: the lane index flips immediately and the lateral
    offset follows ``curve`` (a station-domain cubic from longitudinal) until
    its domain ends."""

    target_lane: int
    curve: object  # CubicCurve; duck-typed to avoid a circular import


def advance(state: KinematicState, accel_command: float, dt: float) -> KinematicState:
    """One kinematic step at constant commanded acceleration.

    station' = station + v*dt + a*dt^2/2 and v' = v + a*dt, with the speed
    floored at zero (no reversing on a freeway).
    """
    if not dt > 0:
        raise InvalidStateError(f"dt must be positive, got {dt}")
    if not (math.isfinite(accel_command) and math.isfinite(state.station)
            and math.isfinite(state.speed)):
        raise InvalidStateError(
            f"non-finite kinematic input: station={state.station} "
            f"speed={state.speed} accel={accel_command}")
    station = state.station + state.speed * dt + 0.5 * accel_command * dt * dt
    speed = max(0.0, state.speed + accel_command * dt)
    return replace(state, station=station, speed=speed, acceleration=accel_command)


def bumper_gap(follower: tuple[VehicleBody, KinematicState],
               leader: tuple[VehicleBody, KinematicState]) -> float:
    """Bumper-to-bumper gap: leader rear bumper minus follower front bumper.

    Negative values signal overlap; the caller decides whether that is fatal.
    """
    leader_body, leader_state = leader
    _, follower_state = follower
    return leader_state.station - follower_state.station - leader_body.length


def gap_between(leader_station: float, leader_length: float, follower_station: float) -> float:
    """Float-level bumper gap used in controller hot paths."""
    return leader_station - follower_station - leader_length


@dataclass
class WorldState:
    clock: SimClock
    map: MapSpec
    vehicles: list[tuple[VehicleBody, KinematicState]]
    # vehicle id -> active lane-change curve; removed once the station passes
    # the curve domain end.
    active_lane_changes: dict[str, LaneChangeDirective] = field(default_factory=dict)

    def state_of(self, vehicle_id: str) -> KinematicState:
        for body, state in self.vehicles:
            if body.id == vehicle_id:
                return state
        raise KeyError(vehicle_id)

    def body_of(self, vehicle_id: str) -> VehicleBody:
        for body, _ in self.vehicles:
            if body.id == vehicle_id:
                return body
        raise KeyError(vehicle_id)

    def ids(self) -> list[str]:
        return [body.id for body, _ in self.vehicles]


def _lateral_after_advance(directive: LaneChangeDirective, station: float,
                           state: KinematicState) -> tuple[float, bool]:
    """Sample the lane-change cubic at the new station.

    Returns (lateral_offset, done).  Past the curve domain the vehicle is
    exactly on the target lane center.
    """
    curve = directive.curve
    if station >= curve.x_end:
        return 0.0, True
    if station <= curve.x_start:
        return curve.evaluate(curve.x_start), False
    return curve.evaluate(station), False


def step_world(world: WorldState,
               accel_commands: Mapping[str, float],
               lane_commands: Optional[Mapping[str, LaneChangeDirective]] = None) -> WorldState:
    """Advance every vehicle one step and tick the clock.

    Pure function: the input world is not mutated.  Every vehicle must have
    an acceleration command; lane commands are optional per vehicle.
    """
    lane_commands = lane_commands or {}
    active = dict(world.active_lane_changes)
    new_vehicles: list[tuple[VehicleBody, KinematicState]] = []
    for body, state in world.vehicles:
        if body.id not in accel_commands:
            raise ConfigurationError(f"no acceleration command for vehicle '{body.id}'")
        directive = lane_commands.get(body.id)
        if directive is not None:
            # Lane index commits at maneuver start; the offset is re-measured
            # from the new lane center and decays along the cubic.
            start_offset = (world.map.lane_center_y(state.lane) + state.lateral_offset
                            - world.map.lane_center_y(directive.target_lane))
            state = replace(state, lane=directive.target_lane, lateral_offset=start_offset)
            active[body.id] = directive
        new_state = advance(state, accel_commands[body.id], world.clock.dt)
        if body.id in active:
            offset, done = _lateral_after_advance(active[body.id], new_state.station, new_state)
            new_state = replace(new_state, lateral_offset=offset)
            if done:
                del active[body.id]
        new_vehicles.append((body, new_state))
    return WorldState(clock=world.clock.tick(), map=world.map,
                      vehicles=new_vehicles, active_lane_changes=active)


def check_no_overlap(world: WorldState) -> None:
    """Raise InvariantViolation if two in-lane vehicles overlap.

    Vehicles straddling a lane boundary (|lateral offset| > half lane width,
    e.g. mid lane-change) are not counted against either lane.
    """
    half = world.map.lane_width / 2.0
    by_lane: dict[int, list[tuple[VehicleBody, KinematicState]]] = {}
    for body, state in world.vehicles:
        if abs(state.lateral_offset) <= half:
            by_lane.setdefault(state.lane, []).append((body, state))
    for lane, members in by_lane.items():
        members.sort(key=lambda pair: pair[1].station)
        for (fb, fs), (lb, ls) in zip(members, members[1:]):
            if ls.station - fs.station - lb.length < 0:
                raise InvariantViolation(
                    f"step {world.clock.step_index}: '{fb.id}' overlaps '{lb.id}' "
                    f"in lane {lane} (stations {fs.station:.2f}/{ls.station:.2f})")
