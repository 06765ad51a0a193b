"""Scenario configuration, benchmark scenario builders, and the run loop.

A scenario is a YAML document describing the map, the platoon, optional
single CAVs and a profile-driven lead vehicle, background traffic, special
event triggers, and the V2X channel.  ``run`` steps the world at a fixed
20 Hz resolution through a sense -> share -> plan -> control -> advance loop
and returns complete per-vehicle traces plus an event log.
"""

from __future__ import annotations

import csv
import importlib.resources
import io
import math
import random
import time as _time
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
import yaml

from . import longitudinal, platooning
from .errors import ConfigurationError, InvariantViolation, StaleDataError
from .evaluation import TraceRecord, VehicleTrace
from .longitudinal import BehaviorParams, IdmParams, Trajectory, fit_cubic, plan_trajectory
from .platooning import (JoinPlan, JoinRequest, MemberMode, PlatoonRoster,
                         PredecessorView, clear_join, handle_join_request,
                         revert_gap, step_follower, update_join_fsm)
from .v2x import (ChannelModel, GapOpenPayload, JoinRequestPayload,
                  JoinResponsePayload, MessageBus, MessageKind, StatusPayload,
                  TrajectoryPayload, V2XMessage)
from .world import (RAMP_LANE, KinematicState, LaneChangeDirective, MapSpec,
                    SimClock, VehicleBody, VehicleKind, WorldState,
                    check_no_overlap, step_world)

#: How far a CAV senses the vehicle ahead in its own lane (m).
SENSE_RANGE = 150.0

#: Steps of planned trajectory shared on the bus each step.  The gap
#: regulator consumes at most four points (one-step-ahead target plus the
#: two-step staleness allowance), so a short shared horizon keeps the loop
#: fast; `plan_trajectory` still defaults to a 3 s horizon for API users.
SHARE_HORIZON_STEPS = 8

#: Proportional gain for a joiner tracking its meeting slot (1/s).
SLOT_TRACK_GAIN = 0.5

#: Seconds a gap opener takes to ramp from the platoon gap to the opened gap.
GAP_OPEN_RAMP_S = 25.0

#: Extra leader speed while a joiner aims at the head slot (m/s).  Joining at
#: the head is cheap because the leader has free road and can make space by
#: advancing while the member behind holds cruise speed; mid-platoon slots can
#: only open by a member braking gently against the string.
HEAD_ASSIST_SPEEDUP = 3.0

#: Clearance the joiner keeps to the slot-rear member while merging (m).
RIDE_MARGIN = 3.0

#: Hard bumper margin the joiner never violates toward its front vehicle (m).
FRONT_HARD_MARGIN = 1.0

#: The joiner brakes more gently than members while physically merging.
JOINER_MERGE_DECEL = -2.0

_BUILTIN_SCENARIOS = ("cycle1", "cycle2", "merge_join")


# ---------------------------------------------------------------------------
# Speed profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpeedProfile:
    """Piecewise-linear speed schedule; queries past the end hold the last value."""

    times: tuple[float, ...]   # s, strictly increasing
    speeds: tuple[float, ...]  # m/s, >= 0

    def __post_init__(self):
        if len(self.times) < 2:
            raise ConfigurationError("a speed profile needs at least two samples")
        for a, b in zip(self.times, self.times[1:]):
            if not b > a:
                raise ConfigurationError(f"profile times must strictly increase "
                                         f"({a} -> {b})")
        for v in self.speeds:
            if v < 0:
                raise ConfigurationError(f"profile speeds must be non-negative, got {v}")

    @property
    def duration(self) -> float:
        return self.times[-1]

    def speed_at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.speeds))


def load_speed_profile(path_or_text: str, *, is_text: bool = False) -> SpeedProfile:
    """Load a two-column CSV (time_s, speed_mps); header row required."""
    if is_text:
        text = path_or_text
    else:
        with open(path_or_text, "r", encoding="utf-8") as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:2]] != ["time_s", "speed_mps"]:
        raise ConfigurationError("speed profile CSV must start with header "
                                 "'time_s,speed_mps'")
    times, speeds = [], []
    for row in reader:
        if not row:
            continue
        times.append(float(row[0]))
        speeds.append(float(row[1]))
    return SpeedProfile(tuple(times), tuple(speeds))


def builtin_profile(name: str) -> SpeedProfile:
    text = (importlib.resources.files("platoonsim") / "data" / "profiles"
            / f"{name}.csv").read_text(encoding="utf-8")
    return load_speed_profile(text, is_text=True)


# ---------------------------------------------------------------------------
# Configuration dataclasses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimParams:
    dt: float = 0.05
    total_steps: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive", "sim.dt")
        if self.total_steps < 0:
            raise ConfigurationError("total_steps must be >= 0", "sim.total_steps")


@dataclass(frozen=True)
class PlatoonSpec:
    members: int = 5
    lane: int = 0
    desired_time_gap: float = 0.6   # s
    head_station: float = 200.0     # m, leader front bumper at t=0
    initial_speed: float = 25.0     # m/s
    leader_target_speed: float = 25.0  # commanded cruise at t=0
    max_speed: float = 30.0         # leader speed cap
    vehicle_length: float = 5.0
    comfort_accel: float = 2.0
    comfort_decel: float = -3.0
    leader_headway: float = 1.5     # s, car-following headway of the leader
    leader_gain: float = 0.5        # 1/s

    def __post_init__(self):
        if self.members < 1:
            raise ConfigurationError("platoon needs >= 1 member", "platoon.members")
        if not self.desired_time_gap > 0:
            raise ConfigurationError("desired_time_gap must be positive",
                                     "platoon.desired_time_gap")

    def member_id(self, index: int) -> str:
        return f"p{index}"

    def initial_station(self, index: int) -> float:
        spacing = self.vehicle_length + self.initial_speed * self.desired_time_gap
        return self.head_station - index * spacing


@dataclass(frozen=True)
class SingleCavSpec:
    id: str
    station: float
    speed: float
    lane: int = RAMP_LANE
    target_speed: float = 30.0
    destination: float = 2800.0
    merge_algorithm: str = "heuristic"  # or "fuzzy"
    length: float = 5.0

    def __post_init__(self):
        if self.merge_algorithm not in ("heuristic", "fuzzy"):
            raise ConfigurationError(
                f"unknown merge algorithm '{self.merge_algorithm}'",
                f"singles.{self.id}.merge_algorithm")
        if not self.destination > self.station:
            raise ConfigurationError("destination must lie ahead of the origin",
                                     f"singles.{self.id}.destination")


@dataclass(frozen=True)
class DrivingTask:
    vehicle_id: str
    origin_station: float
    origin_lane: int
    destination: float
    waypoints: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.destination > self.origin_station:
            raise ConfigurationError("destination must lie ahead of the origin",
                                     f"task.{self.vehicle_id}")


@dataclass(frozen=True)
class HvLeadSpec:
    """Profile-driven human vehicle placed ahead of the platoon."""

    id: str = "hv"
    profile: str = "builtin:hv_oscillating"
    initial_headway: float = 1.5  # s ahead of the platoon leader
    length: float = 5.0


@dataclass(frozen=True)
class BackgroundLaneSpec:
    lane: int
    flow: float                 # veh/h
    entry_station: float = 0.0
    entry_speed: Optional[float] = None
    spawn_window: float = math.inf  # s; spawning stops after this time

    def __post_init__(self):
        if self.flow < 0:
            raise ConfigurationError("flow must be >= 0", f"background.lanes[{self.lane}].flow")


@dataclass(frozen=True)
class BackgroundVehicleSpec:
    lane: int
    station: float
    speed: float


@dataclass(frozen=True)
class BackgroundSpec:
    desired_speed: float = 25.0
    length: float = 5.0
    idm: IdmParams = field(default_factory=lambda: IdmParams(desired_speed=25.0))
    lanes: tuple[BackgroundLaneSpec, ...] = ()
    initial: tuple[BackgroundVehicleSpec, ...] = ()


@dataclass(frozen=True)
class EventTrigger:
    """One-shot trigger: a time or station condition firing a single action."""

    action: str                 # set_target_speed | set_speed_profile | emit_join_request
    args: Mapping[str, object]
    at_time: Optional[float] = None
    vehicle_at_station: Optional[tuple[str, float]] = None

    def __post_init__(self):
        if (self.at_time is None) == (self.vehicle_at_station is None):
            raise ConfigurationError("exactly one trigger condition required", "events")
        if self.action not in ("set_target_speed", "set_speed_profile",
                               "emit_join_request"):
            raise ConfigurationError(f"unknown event action '{self.action}'", "events")


@dataclass
class ScenarioConfig:
    name: str
    sim: SimParams
    map: MapSpec
    platoon: Optional[PlatoonSpec]
    channel: ChannelModel
    hv_lead: Optional[HvLeadSpec] = None
    singles: tuple[SingleCavSpec, ...] = ()
    background: Optional[BackgroundSpec] = None
    events: tuple[EventTrigger, ...] = ()
    profiles: dict[str, SpeedProfile] = field(default_factory=dict)

    def tasks(self) -> list[DrivingTask]:
        return [DrivingTask(s.id, s.station, s.lane, s.destination)
                for s in self.singles]


# ---------------------------------------------------------------------------
# YAML loading and validation
# ---------------------------------------------------------------------------

def _expect_map(node, path: str) -> dict:
    if not isinstance(node, dict):
        raise ConfigurationError(f"expected a mapping, got {type(node).__name__}", path)
    return node

def _check_keys(node: dict, allowed: Sequence[str], path: str) -> None:
    for key in node:
        if key not in allowed:
            raise ConfigurationError(f"unknown key '{key}'", path)

def _num(node: dict, key: str, path: str, default=None):
    if key not in node:
        if default is None:
            raise ConfigurationError("missing required key", f"{path}.{key}")
        return default
    value = node[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"expected a number, got {value!r}", f"{path}.{key}")
    return value

def _lane(value, path: str) -> int:
    if value == "ramp":
        return RAMP_LANE
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError(f"lane must be an integer or 'ramp', got {value!r}", path)
    return value


def _resolve_profile(ref: str, named: dict[str, SpeedProfile], path: str) -> SpeedProfile:
    if ref in named:
        return named[ref]
    if ref.startswith("builtin:"):
        try:
            return builtin_profile(ref.split(":", 1)[1])
        except FileNotFoundError:
            raise ConfigurationError(f"no builtin profile '{ref}'", path) from None
    try:
        return load_speed_profile(ref)
    except OSError:
        raise ConfigurationError(f"referenced profile '{ref}' does not exist", path) from None


def load_config(document: str) -> ScenarioConfig:
    """Parse and validate a scenario document; defaults are filled in."""
    try:
        root = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"scenario document does not parse: {exc}") from exc
    root = _expect_map(root if root is not None else {}, "<root>")
    _check_keys(root, ["name", "sim", "map", "platoon", "hv_lead", "singles",
                       "background", "events", "channel", "profiles"], "<root>")

    name = root.get("name", "scenario")

    sim_node = _expect_map(root.get("sim", {}), "sim")
    _check_keys(sim_node, ["dt", "total_steps", "seed"], "sim")
    sim = SimParams(dt=_num(sim_node, "dt", "sim", 0.05),
                    total_steps=int(_num(sim_node, "total_steps", "sim", 2000)),
                    seed=int(_num(sim_node, "seed", "sim", 0)))

    map_node = _expect_map(root.get("map", {}), "map")
    _check_keys(map_node, ["mainline_length", "mainline_lanes", "ramp_merge_start",
                           "accel_lane_end", "lane_width"], "map")
    map_spec = MapSpec(
        mainline_length=_num(map_node, "mainline_length", "map", 2800.0),
        mainline_lanes=int(_num(map_node, "mainline_lanes", "map", 2)),
        ramp_merge_start=_num(map_node, "ramp_merge_start", "map", 2000.0),
        accel_lane_end=_num(map_node, "accel_lane_end", "map", 2300.0),
        lane_width=_num(map_node, "lane_width", "map", 3.5))

    profiles: dict[str, SpeedProfile] = {}
    for pname, ref in _expect_map(root.get("profiles", {}) or {}, "profiles").items():
        profiles[pname] = _resolve_profile(str(ref), {}, f"profiles.{pname}")

    platoon = None
    if "platoon" in root and root["platoon"] is not None:
        node = _expect_map(root["platoon"], "platoon")
        allowed = ["members", "lane", "desired_time_gap", "head_station",
                   "initial_speed", "leader_target_speed", "max_speed",
                   "vehicle_length", "comfort_accel", "comfort_decel",
                   "leader_headway", "leader_gain"]
        _check_keys(node, allowed, "platoon")
        platoon = PlatoonSpec(
            members=int(_num(node, "members", "platoon", 5)),
            lane=_lane(node.get("lane", 0), "platoon.lane"),
            desired_time_gap=_num(node, "desired_time_gap", "platoon", 0.6),
            head_station=_num(node, "head_station", "platoon", 200.0),
            initial_speed=_num(node, "initial_speed", "platoon", 25.0),
            leader_target_speed=_num(node, "leader_target_speed", "platoon", 25.0),
            max_speed=_num(node, "max_speed", "platoon", 30.0),
            vehicle_length=_num(node, "vehicle_length", "platoon", 5.0),
            comfort_accel=_num(node, "comfort_accel", "platoon", 2.0),
            comfort_decel=_num(node, "comfort_decel", "platoon", -3.0),
            leader_headway=_num(node, "leader_headway", "platoon", 1.5),
            leader_gain=_num(node, "leader_gain", "platoon", 0.5))

    hv_lead = None
    if "hv_lead" in root and root["hv_lead"] is not None:
        node = _expect_map(root["hv_lead"], "hv_lead")
        _check_keys(node, ["id", "profile", "initial_headway", "length"], "hv_lead")
        hv_lead = HvLeadSpec(id=str(node.get("id", "hv")),
                             profile=str(node.get("profile", "builtin:hv_oscillating")),
                             initial_headway=_num(node, "initial_headway", "hv_lead", 1.5),
                             length=_num(node, "length", "hv_lead", 5.0))
        if hv_lead.profile not in profiles:
            profiles[hv_lead.profile] = _resolve_profile(hv_lead.profile, profiles,
                                                         "hv_lead.profile")

    singles = []
    for i, item in enumerate(root.get("singles", []) or []):
        node = _expect_map(item, f"singles[{i}]")
        _check_keys(node, ["id", "lane", "station", "speed", "target_speed",
                           "destination", "merge_algorithm", "length"], f"singles[{i}]")
        singles.append(SingleCavSpec(
            id=str(node.get("id", f"cav{i}")),
            lane=_lane(node.get("lane", "ramp"), f"singles[{i}].lane"),
            station=_num(node, "station", f"singles[{i}]"),
            speed=_num(node, "speed", f"singles[{i}]"),
            target_speed=_num(node, "target_speed", f"singles[{i}]", 30.0),
            destination=_num(node, "destination", f"singles[{i}]", map_spec.mainline_length),
            merge_algorithm=str(node.get("merge_algorithm", "heuristic")),
            length=_num(node, "length", f"singles[{i}]", 5.0)))

    background = None
    if "background" in root and root["background"] is not None:
        node = _expect_map(root["background"], "background")
        _check_keys(node, ["desired_speed", "length", "idm", "lanes", "initial"],
                    "background")
        idm_node = _expect_map(node.get("idm", {}), "background.idm")
        _check_keys(idm_node, ["min_gap", "desired_headway", "max_accel",
                               "comfort_brake"], "background.idm")
        desired = _num(node, "desired_speed", "background", 25.0)
        idm = IdmParams(desired_speed=desired,
                        min_gap=_num(idm_node, "min_gap", "background.idm", 2.0),
                        desired_headway=_num(idm_node, "desired_headway",
                                             "background.idm", 1.5),
                        max_accel=_num(idm_node, "max_accel", "background.idm", 1.5),
                        comfort_brake=_num(idm_node, "comfort_brake",
                                           "background.idm", 2.0))
        lanes = []
        for i, lane_item in enumerate(node.get("lanes", []) or []):
            lnode = _expect_map(lane_item, f"background.lanes[{i}]")
            _check_keys(lnode, ["lane", "flow", "entry_station", "entry_speed",
                                "spawn_window"], f"background.lanes[{i}]")
            lanes.append(BackgroundLaneSpec(
                lane=_lane(lnode.get("lane", 0), f"background.lanes[{i}].lane"),
                flow=_num(lnode, "flow", f"background.lanes[{i}]", 0.0),
                entry_station=_num(lnode, "entry_station", f"background.lanes[{i}]", 0.0),
                entry_speed=(None if "entry_speed" not in lnode
                             else _num(lnode, "entry_speed", f"background.lanes[{i}]")),
                spawn_window=_num(lnode, "spawn_window", f"background.lanes[{i}]",
                                  math.inf)))
        initial = []
        for i, veh in enumerate(node.get("initial", []) or []):
            vnode = _expect_map(veh, f"background.initial[{i}]")
            _check_keys(vnode, ["lane", "station", "speed"], f"background.initial[{i}]")
            initial.append(BackgroundVehicleSpec(
                lane=_lane(vnode.get("lane", 0), f"background.initial[{i}].lane"),
                station=_num(vnode, "station", f"background.initial[{i}]"),
                speed=_num(vnode, "speed", f"background.initial[{i}]")))
        background = BackgroundSpec(desired_speed=desired,
                                    length=_num(node, "length", "background", 5.0),
                                    idm=idm, lanes=tuple(lanes), initial=tuple(initial))

    events = []
    for i, item in enumerate(root.get("events", []) or []):
        node = _expect_map(item, f"events[{i}]")
        _check_keys(node, ["when", "do"], f"events[{i}]")
        when = _expect_map(node.get("when", {}), f"events[{i}].when")
        _check_keys(when, ["at_time", "vehicle_at_station"], f"events[{i}].when")
        at_time = None
        at_station = None
        if "at_time" in when:
            at_time = _num(when, "at_time", f"events[{i}].when")
        if "vehicle_at_station" in when:
            wnode = _expect_map(when["vehicle_at_station"],
                                f"events[{i}].when.vehicle_at_station")
            _check_keys(wnode, ["vehicle", "station"],
                        f"events[{i}].when.vehicle_at_station")
            at_station = (str(wnode["vehicle"]),
                          _num(wnode, "station", f"events[{i}].when.vehicle_at_station"))
        do = _expect_map(node.get("do", {}), f"events[{i}].do")
        if len(do) != 1:
            raise ConfigurationError("exactly one action required", f"events[{i}].do")
        action, args_node = next(iter(do.items()))
        args = _expect_map(args_node, f"events[{i}].do.{action}")
        if action == "set_target_speed":
            _check_keys(args, ["vehicle", "speed"], f"events[{i}].do.{action}")
            args = {"vehicle": str(args["vehicle"]),
                    "speed": _num(args, "speed", f"events[{i}].do.{action}")}
        elif action == "set_speed_profile":
            _check_keys(args, ["vehicle", "profile"], f"events[{i}].do.{action}")
            pref = str(args["profile"])
            if pref not in profiles:
                profiles[pref] = _resolve_profile(pref, profiles,
                                                  f"events[{i}].do.{action}.profile")
            args = {"vehicle": str(args["vehicle"]), "profile": pref}
        elif action == "emit_join_request":
            _check_keys(args, ["vehicle"], f"events[{i}].do.{action}")
            args = {"vehicle": str(args["vehicle"])}
        events.append(EventTrigger(action=action, args=args, at_time=at_time,
                                   vehicle_at_station=at_station))

    channel_node = _expect_map(root.get("channel", {}) or {}, "channel")
    _check_keys(channel_node, ["drop_probability", "latency_steps", "seed"], "channel")
    channel = ChannelModel(
        drop_probability=_num(channel_node, "drop_probability", "channel", 0.0),
        latency_steps=int(_num(channel_node, "latency_steps", "channel", 0)),
        seed=int(_num(channel_node, "seed", "channel", 0)))

    config = ScenarioConfig(name=str(name), sim=sim, map=map_spec, platoon=platoon,
                            channel=channel, hv_lead=hv_lead, singles=tuple(singles),
                            background=background, events=tuple(events),
                            profiles=profiles)
    _validate_config(config)
    return config


def _validate_config(config: ScenarioConfig) -> None:
    ids = set()
    spawns: list[tuple[str, int, float, float]] = []  # id, lane, station, length

    def add(vid: str, lane: int, station: float, length: float, path: str):
        if vid in ids:
            raise ConfigurationError(f"duplicate vehicle id '{vid}'", path)
        ids.add(vid)
        spawns.append((vid, lane, station, length))

    if config.platoon is not None:
        p = config.platoon
        for i in range(p.members):
            add(p.member_id(i), p.lane, p.initial_station(i), p.vehicle_length,
                "platoon")
    if config.hv_lead is not None:
        if config.platoon is None:
            raise ConfigurationError("hv_lead requires a platoon to lead", "hv_lead")
        p = config.platoon
        station = (p.head_station + config.hv_lead.length
                   + config.hv_lead.initial_headway * p.initial_speed)
        add(config.hv_lead.id, p.lane, station, config.hv_lead.length, "hv_lead")
    for s in config.singles:
        add(s.id, s.lane, s.station, s.length, f"singles.{s.id}")
    if config.background is not None:
        for i, veh in enumerate(config.background.initial):
            add(f"bg{i}", veh.lane, veh.station, config.background.length,
                f"background.initial[{i}]")

    by_lane: dict[int, list[tuple[str, float, float]]] = {}
    for vid, lane, station, length in spawns:
        by_lane.setdefault(lane, []).append((vid, station, length))
    for lane, members in by_lane.items():
        members.sort(key=lambda m: m[1])
        for (rid, rs, rl), (fid, fs, fl) in zip(members, members[1:]):
            if fs - rs - fl < 0:
                raise ConfigurationError(
                    f"overlapping spawns in lane {lane}: '{rid}' at {rs} m and "
                    f"'{fid}' at {fs} m", "spawns")

    for i, ev in enumerate(config.events):
        ref = None
        if ev.vehicle_at_station is not None:
            ref = ev.vehicle_at_station[0]
        for key in ("vehicle",):
            if key in ev.args:
                ref = ref or str(ev.args[key])
                if str(ev.args[key]) not in ids:
                    raise ConfigurationError(
                        f"event references unknown vehicle '{ev.args[key]}'",
                        f"events[{i}]")
        if ref is not None and ref not in ids:
            raise ConfigurationError(f"event references unknown vehicle '{ref}'",
                                     f"events[{i}]")
        if ev.action == "emit_join_request":
            if config.platoon is None:
                raise ConfigurationError("emit_join_request requires a platoon",
                                         f"events[{i}]")
            if not any(s.id == ev.args["vehicle"] for s in config.singles):
                raise ConfigurationError(
                    f"join requester '{ev.args['vehicle']}' is not a single CAV",
                    f"events[{i}]")


def _packaged_scenario_text(name: str) -> str:
    return (importlib.resources.files("platoonsim") / "data" / "scenarios"
            / f"{name}.yaml").read_text(encoding="utf-8")


def builtin_cycle1() -> ScenarioConfig:
    """Five-vehicle platoon; the leader runs a synthetic hold/ramp speed cycle."""
    return load_config(_packaged_scenario_text("cycle1"))


def builtin_cycle2(profile: Optional[SpeedProfile] = None) -> ScenarioConfig:
    """Platoon behind a profile-driven human vehicle (stop-and-go replay)."""
    config = load_config(_packaged_scenario_text("cycle2"))
    if profile is not None:
        config.profiles[config.hv_lead.profile] = profile
    return config


def builtin_merge_join(algorithm: str = "heuristic") -> ScenarioConfig:
    """Mainline platoon in traffic; one ramp CAV merges and joins."""
    config = load_config(_packaged_scenario_text("merge_join"))
    singles = tuple(replace(s, merge_algorithm=algorithm) for s in config.singles)
    config.singles = singles
    return config


def builtin_scenarios() -> dict[str, str]:
    """Name -> one-line description of the shipped scenario database."""
    return {
        "cycle1": "single-lane platooning, synthetic leader speed cycle, no traffic",
        "cycle2": "platoon follows a stop-and-go human-driven vehicle (profile replay)",
        "merge_join": "ramp CAV merges into a mainline platoon among background traffic",
    }


# ---------------------------------------------------------------------------
# Run loop
# ---------------------------------------------------------------------------

@dataclass
class Event:
    step: int
    kind: str
    data: dict


@dataclass
class SimulationResult:
    config: ScenarioConfig
    traces: dict[str, VehicleTrace]
    event_log: list[Event]
    roster: Optional[PlatoonRoster]
    bus: MessageBus
    wall_time_s: float

    def join_window(self, joiner_id: Optional[str] = None) -> Optional[tuple[int, int]]:
        approved = completed = None
        for ev in self.event_log:
            if joiner_id is not None and ev.data.get("vehicle") != joiner_id:
                continue
            if ev.kind == "join_approved" and approved is None:
                approved = ev.step
            if ev.kind == "join_completed" and completed is None:
                completed = ev.step
        if approved is None or completed is None:
            return None
        return approved, completed


class _CavAgent:
    """Mutable controller state for one connected automated vehicle."""

    __slots__ = ("vid", "length", "comfort_accel", "comfort_decel", "max_speed",
                 "target", "last_target", "last_plan", "plan_step", "plans_from",
                 "status_from", "degraded", "mode", "join_plan", "request_pending",
                 "merge_started_step", "profile")

    def __init__(self, vid: str, length: float, comfort_accel: float,
                 comfort_decel: float, max_speed: float, target: float,
                 mode: MemberMode):
        self.vid = vid
        self.length = length
        self.comfort_accel = comfort_accel
        self.comfort_decel = comfort_decel
        self.max_speed = max_speed
        self.target = target
        self.last_target = target
        self.last_plan: Optional[Trajectory] = None
        self.plan_step = -1
        self.plans_from: dict[str, tuple[Trajectory, int]] = {}
        self.status_from: dict[str, tuple[KinematicState, float, int]] = {}
        self.degraded = False
        self.mode = mode
        self.join_plan: Optional[JoinPlan] = None
        self.request_pending = False
        self.merge_started_step: Optional[int] = None
        self.profile: Optional[SpeedProfile] = None

    def behavior(self, target: Optional[float] = None) -> BehaviorParams:
        return BehaviorParams(target_speed=self.target if target is None else target,
                              comfort_accel=self.comfort_accel,
                              comfort_decel=self.comfort_decel)


class _Engine:
    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.dt = config.sim.dt
        self.events_fired = [False] * len(config.events)
        self.event_log: list[Event] = []
        self.records: dict[str, list[TraceRecord]] = {}
        self.lengths: dict[str, float] = {}
        self.rng = random.Random(config.sim.seed)
        self.roster: Optional[PlatoonRoster] = None
        self.agents: dict[str, _CavAgent] = {}
        self.hv_profiles: dict[str, SpeedProfile] = {}
        self.outbox: list[V2XMessage] = []
        self.gap_open_started: dict[str, int] = {}   # opener id -> step
        self.assist_active = False
        self.leader_base_target: Optional[float] = None
        self.bg_counter = 0
        self.destinations: dict[str, float] = {}
        self.reached: set[str] = set()

        vehicles: list[tuple[VehicleBody, KinematicState]] = []
        p = config.platoon
        if p is not None:
            member_ids = [p.member_id(i) for i in range(p.members)]
            self.roster = PlatoonRoster(member_ids=member_ids,
                                        desired_time_gap=p.desired_time_gap)
            for i, vid in enumerate(member_ids):
                body = VehicleBody(vid, p.vehicle_length, VehicleKind.CAV)
                state = KinematicState(station=p.initial_station(i), lane=p.lane,
                                       speed=p.initial_speed)
                vehicles.append((body, state))
                mode = MemberMode.LEADER_DRIVE if i == 0 else MemberMode.MAINTAINING
                self.agents[vid] = _CavAgent(vid, p.vehicle_length, p.comfort_accel,
                                             p.comfort_decel, p.max_speed,
                                             p.leader_target_speed if i == 0
                                             else p.initial_speed, mode)
            self.leader_base_target = p.leader_target_speed

        if config.hv_lead is not None:
            hv = config.hv_lead
            profile = config.profiles[hv.profile]
            station = (p.head_station + hv.length + hv.initial_headway * p.initial_speed)
            body = VehicleBody(hv.id, hv.length, VehicleKind.HUMAN_DRIVEN)
            state = KinematicState(station=station, lane=p.lane,
                                   speed=profile.speed_at(0.0))
            vehicles.append((body, state))
            self.hv_profiles[hv.id] = profile

        for s in config.singles:
            body = VehicleBody(s.id, s.length, VehicleKind.CAV)
            state = KinematicState(station=s.station, lane=s.lane, speed=s.speed)
            vehicles.append((body, state))
            agent = _CavAgent(s.id, s.length, 2.0, -3.0, s.target_speed,
                              s.target_speed, MemberMode.SINGLE_SEARCHING)
            self.agents[s.id] = agent
            self.destinations[s.id] = s.destination

        self.bg_spec = config.background
        self.bg_schedule: list[tuple[float, BackgroundLaneSpec]] = []
        if self.bg_spec is not None:
            for i, veh in enumerate(self.bg_spec.initial):
                body = VehicleBody(f"bg{i}", self.bg_spec.length,
                                   VehicleKind.HUMAN_DRIVEN)
                vehicles.append((body, KinematicState(station=veh.station,
                                                      lane=veh.lane, speed=veh.speed)))
                self.bg_counter = i + 1
            # Spawn times are scheduled up front: i*H plus independent, seeded,
            # non-accumulating +/-20% jitter, so the mean headway stays at
            # 3600/flow regardless of how many spawns the window admits.
            for lane_spec in self.bg_spec.lanes:
                if lane_spec.flow <= 0:
                    continue
                headway = 3600.0 / lane_spec.flow
                horizon = min(lane_spec.spawn_window,
                              config.sim.total_steps * self.dt)
                i = 0
                while True:
                    t = i * headway + self.rng.uniform(-0.2 * headway, 0.2 * headway)
                    if i * headway > horizon:
                        break
                    self.bg_schedule.append((max(0.0, t), lane_spec))
                    i += 1
            self.bg_schedule.sort(key=lambda item: item[0])

        self.world = WorldState(clock=SimClock(0, self.dt), map=config.map,
                                vehicles=vehicles)
        for body, _ in vehicles:
            self.lengths[body.id] = body.length
        self.bus = MessageBus(config.channel, list(self.agents.keys()))
        self.merge_algorithm = (config.singles[0].merge_algorithm
                                if config.singles else "heuristic")

    # -- helpers ----------------------------------------------------------

    def log(self, kind: str, **data) -> None:
        self.event_log.append(Event(self.world.clock.step_index, kind, data))

    def _record_all(self) -> None:
        step = self.world.clock.step_index
        for body, state in self.world.vehicles:
            mode = self._mode_string(body.id)
            self.records.setdefault(body.id, []).append(TraceRecord(
                step=step, station=state.station, lane=state.lane,
                lateral_offset=state.lateral_offset, speed=state.speed,
                accel=state.acceleration, mode=mode))

    def _mode_string(self, vid: str) -> str:
        if vid in self.agents:
            agent = self.agents[vid]
            if self.roster is not None and vid in self.roster.member_ids:
                return self.roster.modes[vid].value
            return agent.mode.value
        if vid in self.hv_profiles:
            return "HV"
        return "Background"

    def _lane_order(self) -> dict[int, list[tuple[float, str, float]]]:
        """lane -> ascending (station, id, length) of physically in-lane vehicles."""
        half = self.config.map.lane_width / 2.0
        out: dict[int, list[tuple[float, str, float]]] = {}
        for body, state in self.world.vehicles:
            if abs(state.lateral_offset) <= half:
                out.setdefault(state.lane, []).append(
                    (state.station, body.id, body.length))
        for rows in out.values():
            rows.sort()
        return out

    def _ahead_in_lane(self, vid: str, lane_order) -> Optional[tuple[float, str, float]]:
        state = self.world.state_of(vid)
        rows = lane_order.get(state.lane, [])
        for station, other, length in rows:
            if station > state.station and other != vid:
                return station, other, length
        return None

    # -- phases ------------------------------------------------------------

    def _spawn_background(self) -> None:
        if not self.bg_schedule:
            return
        now = self.world.clock.time
        spawned = []
        for t, lane_spec in self.bg_schedule:
            if t > now:
                break
            entry = lane_spec.entry_station
            speed = (lane_spec.entry_speed if lane_spec.entry_speed is not None
                     else self.bg_spec.desired_speed)
            clear = True
            for body, state in self.world.vehicles:
                if state.lane == lane_spec.lane and abs(state.station - entry) < \
                        self.bg_spec.length + speed * self.bg_spec.idm.desired_headway:
                    clear = False
                    break
            if not clear:
                continue  # retry next step; schedule entry stays pending
            vid = f"bg{self.bg_counter}"
            self.bg_counter += 1
            body = VehicleBody(vid, self.bg_spec.length, VehicleKind.HUMAN_DRIVEN)
            self.world.vehicles.append(
                (body, KinematicState(station=entry, lane=lane_spec.lane, speed=speed)))
            self.lengths[vid] = self.bg_spec.length
            self.log("vehicle_entered", vehicle=vid, lane=lane_spec.lane, station=entry)
            spawned.append((t, lane_spec))
        for item in spawned:
            self.bg_schedule.remove(item)

    def _despawn_background(self) -> None:
        limit = self.config.map.mainline_length + 50.0
        keep = []
        for body, state in self.world.vehicles:
            if body.kind is VehicleKind.HUMAN_DRIVEN and body.id not in self.hv_profiles \
                    and state.station > limit:
                self.log("vehicle_left", vehicle=body.id)
            else:
                keep.append((body, state))
        self.world.vehicles = keep

    def _fire_events(self) -> None:
        now = self.world.clock.time
        for i, trigger in enumerate(self.config.events):
            if self.events_fired[i]:
                continue
            fire = False
            if trigger.at_time is not None and now >= trigger.at_time:
                fire = True
            elif trigger.vehicle_at_station is not None:
                vid, station = trigger.vehicle_at_station
                try:
                    fire = self.world.state_of(vid).station >= station
                except KeyError:
                    fire = False
            if not fire:
                continue
            self.events_fired[i] = True
            self.log("trigger_fired", index=i, action=trigger.action,
                     **dict(trigger.args))
            vid = str(trigger.args["vehicle"])
            if trigger.action == "set_target_speed":
                speed = float(trigger.args["speed"])
                if vid in self.agents:
                    self.agents[vid].target = speed
                    if self.roster is not None and vid == self.roster.leader_id:
                        self.leader_base_target = speed
                else:
                    raise ConfigurationError(
                        f"set_target_speed targets non-CAV '{vid}'")
            elif trigger.action == "set_speed_profile":
                profile = self.config.profiles[str(trigger.args["profile"])]
                if vid in self.agents:
                    agent = self.agents[vid]
                    agent.profile = profile
                else:
                    self.hv_profiles[vid] = profile
            elif trigger.action == "emit_join_request":
                self.agents[vid].request_pending = True

    def _share(self) -> None:
        step = self.world.clock.step_index
        for vid, agent in self.agents.items():
            try:
                state = self.world.state_of(vid)
            except KeyError:
                continue
            self.bus.send(V2XMessage(vid, None, MessageKind.STATUS,
                                     StatusPayload(state, agent.length), step))
            if agent.last_plan is not None:
                self.bus.send(V2XMessage(vid, None, MessageKind.PLANNED_TRAJECTORY,
                                         TrajectoryPayload(agent.last_plan,
                                                           agent.plan_step), step))
            if agent.request_pending:
                agent.request_pending = False
                leader = self.roster.leader_id
                request = JoinRequest(requester_id=vid, state=state,
                                      length=agent.length,
                                      destination=self.destinations.get(
                                          vid, self.config.map.mainline_length),
                                      route_summary="ramp -> mainline")
                self.bus.send(V2XMessage(vid, (leader,), MessageKind.JOIN_REQUEST,
                                         JoinRequestPayload(request), step))
                self.log("join_requested", vehicle=vid)
        for msg in self.outbox:
            self.bus.send(msg)
        self.outbox.clear()

    def _trailing_time_gap(self, lane_order) -> float:
        """Time gap between the platoon tail and the nearest trailer behind it."""
        tail = self.roster.member_ids[-1]
        tail_state = self.world.state_of(tail)
        rows = lane_order.get(tail_state.lane, [])
        best = None
        for station, vid, _ in rows:
            if station < tail_state.station and vid != tail:
                if best is None or station > best[0]:
                    best = (station, vid)
        if best is None:
            return 3.0
        gap = tail_state.station - self.lengths[tail] - best[0]
        speed = self.world.state_of(best[1]).speed
        return min(3.0, gap / speed) if speed > 0 else 3.0

    def _process_mailboxes(self, mailboxes: dict[str, list[V2XMessage]],
                           lane_order) -> None:
        step = self.world.clock.step_index
        for vid, messages in mailboxes.items():
            agent = self.agents.get(vid)
            if agent is None:
                continue
            for msg in messages:
                if msg.kind is MessageKind.STATUS:
                    agent.status_from[msg.sender] = (msg.payload.state,
                                                     msg.payload.length, msg.tx_step)
                elif msg.kind is MessageKind.PLANNED_TRAJECTORY:
                    agent.plans_from[msg.sender] = (msg.payload.plan,
                                                    msg.payload.planned_at_step)
                elif msg.kind is MessageKind.JOIN_REQUEST:
                    self._handle_join_request(msg.payload.request, lane_order)
                elif msg.kind is MessageKind.JOIN_RESPONSE:
                    self._handle_join_response(vid, msg.payload)
                elif msg.kind is MessageKind.GAP_OPEN_COMMAND:
                    pass  # roster already reflects the command; message is informational

    def _handle_join_request(self, request: JoinRequest, lane_order) -> None:
        step = self.world.clock.step_index
        decision = handle_join_request(self.roster, request, self.world,
                                       self.merge_algorithm,
                                       trailing_time_gap=self._trailing_time_gap(lane_order))
        leader = self.roster.leader_id
        if decision.accepted:
            plan = decision.plan
            self.log("join_approved", vehicle=request.requester_id,
                     front_index=plan.front_vehicle_index,
                     meeting_station=plan.meeting_station,
                     opener_index=plan.gap_opener_index)
            if plan.gap_opener_index is not None:
                opener = self.roster.member_ids[plan.gap_opener_index]
                self.gap_open_started[opener] = step
                self.log("gap_opening", vehicle=opener,
                         target_gap=self.roster.gap_overrides[opener])
                self.outbox.append(V2XMessage(
                    leader, (opener,), MessageKind.GAP_OPEN_COMMAND,
                    GapOpenPayload(opener, self.roster.gap_overrides[opener]), step))
            if plan.front_vehicle_index == 0 and not self.assist_active:
                # Head join: the leader advances to help the slot open.
                self.assist_active = True
                leader_agent = self.agents[leader]
                leader_agent.target = min(leader_agent.max_speed,
                                          self.leader_base_target + HEAD_ASSIST_SPEEDUP)
        else:
            self.log("join_rejected", vehicle=request.requester_id,
                     reason=decision.reason)
        self.outbox.append(V2XMessage(
            leader, (request.requester_id,), MessageKind.JOIN_RESPONSE,
            JoinResponsePayload(decision.accepted, decision.plan, decision.reason),
            step))

    def _handle_join_response(self, vid: str, payload: JoinResponsePayload) -> None:
        agent = self.agents[vid]
        if payload.accepted and agent.mode is MemberMode.SINGLE_SEARCHING:
            agent.mode = MemberMode.MOVE_TO_MEETING_POINT
            agent.join_plan = payload.plan
            self.log("move_to_meeting_point", vehicle=vid,
                     meeting_station=payload.plan.meeting_station)

    def _end_join(self, vid: str, completed: bool) -> None:
        agent = self.agents[vid]
        plan = agent.join_plan
        if plan is not None:
            revert_gap(self.roster, plan.gap_opener_index)
            if plan.gap_opener_index is not None:
                self.gap_open_started.pop(
                    self.roster.member_ids[plan.gap_opener_index], None)
        if self.assist_active:
            self.assist_active = False
            leader_agent = self.agents[self.roster.leader_id]
            leader_agent.target = self.leader_base_target
        if completed:
            self.roster.insert_member(plan.front_vehicle_index, vid)
            agent.mode = MemberMode.MAINTAINING
            self.log("join_completed", vehicle=vid,
                     roster_index=self.roster.index_of(vid))
        else:
            agent.mode = MemberMode.SINGLE_SEARCHING
            agent.join_plan = None
            self.log("join_aborted", vehicle=vid)
        clear_join(self.roster)

    def _update_join_fsms(self) -> None:
        for vid, agent in self.agents.items():
            if agent.mode not in (MemberMode.MOVE_TO_MEETING_POINT,
                                  MemberMode.JOINING_MERGE):
                continue
            state = self.world.state_of(vid)
            nxt = update_join_fsm(agent.mode, state, agent.length, agent.join_plan,
                                  self.roster, self.world)
            if nxt is agent.mode:
                continue
            if nxt is MemberMode.JOINING_MERGE:
                agent.mode = nxt
                agent.merge_started_step = self.world.clock.step_index
                self.log("merge_started", vehicle=vid, station=state.station)
            elif nxt is MemberMode.MAINTAINING:
                self._end_join(vid, completed=True)
            elif nxt is MemberMode.SINGLE_SEARCHING:
                self._end_join(vid, completed=False)

    def _opener_ramp(self) -> None:
        """Walk each opener's effective gap linearly toward its opened target."""
        if self.roster is None:
            return
        base = self.roster.desired_time_gap
        final = 2.0 * base + platooning.GAP_OPEN_ALLOWANCE
        step = self.world.clock.step_index
        for opener, start in self.gap_open_started.items():
            frac = min(1.0, (step - start) * self.dt / GAP_OPEN_RAMP_S)
            self.roster.gap_overrides[opener] = base + (final - base) * frac

    def _predecessor_view(self, agent: _CavAgent, pred_id: str,
                          step: int) -> Optional[PredecessorView]:
        entry = agent.plans_from.get(pred_id)
        if entry is None:
            return None
        plan, planned_at = entry
        idx = (step + 1) - planned_at
        if idx < 0 or idx >= len(plan.points):
            return None
        return PredecessorView(position_next=plan.points[idx].station,
                               length=self.lengths[pred_id],
                               age_steps=step - planned_at)

    def _follower_accel(self, vid: str, agent: _CavAgent, state: KinematicState,
                        step: int) -> float:
        if self.assist_active and self.roster.active_plan is not None:
            opener_idx = self.roster.active_plan.gap_opener_index
            if opener_idx is not None and self.roster.member_ids[opener_idx] == vid:
                # Head join: the opener holds cruise speed while the leader
                # advances, so the head slot opens at the assist rate.
                target = self.leader_base_target
                agent.last_target = target
                agent.target = target
                return longitudinal.desired_accel(agent.behavior(target),
                                                  state.speed, self.dt)
        pred_id = self.roster.predecessor_of(vid)
        index = self.roster.index_of(vid)
        view = self._predecessor_view(agent, pred_id, step)
        try:
            target = step_follower(self.roster, index, view, state, self.dt)
            agent.degraded = False
        except StaleDataError:
            target = agent.last_target
            if not agent.degraded and step > 0:
                agent.degraded = True
                self.log("degraded_mode", vehicle=vid)
        agent.last_target = target
        agent.target = target
        return longitudinal.desired_accel(agent.behavior(target), state.speed, self.dt)

    def _leader_accel(self, vid: str, agent: _CavAgent, state: KinematicState,
                      lane_order) -> float:
        target = agent.target
        if agent.profile is not None:
            target = agent.profile.speed_at(self.world.clock.time + self.dt)
        ahead = self._ahead_in_lane(vid, lane_order)
        if ahead is not None:
            station, other, length = ahead
            gap = station - length - state.station
            if gap <= SENSE_RANGE:
                p = self.config.platoon
                follow = longitudinal.leader_following_speed(
                    gap, self.world.state_of(other).speed, state.speed,
                    desired_headway=p.leader_headway, gain=p.leader_gain,
                    max_speed=agent.max_speed)
                target = min(target, follow)
        agent.last_target = target
        return longitudinal.desired_accel(agent.behavior(target), state.speed, self.dt)

    def _slot_geometry(self, plan: JoinPlan, step: int):
        """Current and one-step-ahead stations of the slot boundaries."""
        front_id = self.roster.member_ids[plan.front_vehicle_index]
        front_state = self.world.state_of(front_id)
        front_rear = front_state.station - self.lengths[front_id]
        rear_idx = plan.front_vehicle_index + 1
        if rear_idx < len(self.roster.member_ids):
            rear_id = self.roster.member_ids[rear_idx]
            rear_state = self.world.state_of(rear_id)
        else:
            rear_id, rear_state = None, None
        return front_id, front_state, front_rear, rear_id, rear_state

    def _joiner_accel(self, vid: str, agent: _CavAgent, state: KinematicState,
                      step: int) -> tuple[float, Optional[LaneChangeDirective]]:
        plan = agent.join_plan
        directive = None
        if agent.mode is MemberMode.SINGLE_SEARCHING or plan is None:
            target = (agent.profile.speed_at(self.world.clock.time + self.dt)
                      if agent.profile is not None else agent.target)
            agent.last_target = target
            return longitudinal.desired_accel(agent.behavior(target), state.speed,
                                              self.dt), None

        front_id, front_state, front_rear, rear_id, rear_state = \
            self._slot_geometry(plan, step)

        if agent.mode is MemberMode.MOVE_TO_MEETING_POINT:
            rear_front = rear_state.station if rear_state is not None else None
            center = platooning.slot_center(front_state.station,
                                            self.lengths[front_id], rear_front)
            center_next = center + front_state.speed * self.dt
            target = front_state.speed + SLOT_TRACK_GAIN * (center_next - state.station
                                                            - state.speed * self.dt)
            target = max(0.0, min(target, agent.max_speed))
            agent.last_target = target
            return longitudinal.desired_accel(agent.behavior(target), state.speed,
                                              self.dt), None

        # JOINING_MERGE: follow the front member via the gap law, bounded by a
        # hard front margin and a ride margin over the still-opening rear.
        view = self._predecessor_view(agent, front_id, step)
        if view is not None:
            target_pos = platooning.follower_target_position(
                view.position_next, view.length, state.station,
                self.roster.desired_time_gap, self.dt)
            target = platooning.follower_desired_speed(target_pos, state.station,
                                                       self.dt)
        else:
            target = agent.last_target
        if rear_state is not None:
            floor_pos = (rear_state.station + rear_state.speed * self.dt
                         + RIDE_MARGIN + agent.length)
            v_floor = (floor_pos - state.station) / self.dt
            target = max(target, v_floor)
        cap_pos = (front_rear + front_state.speed * self.dt - FRONT_HARD_MARGIN)
        v_cap = max(0.0, (cap_pos - state.station) / self.dt)
        target = max(0.0, min(target, v_cap, agent.max_speed))
        agent.last_target = target
        behavior = BehaviorParams(target_speed=target,
                                  comfort_accel=agent.comfort_accel,
                                  comfort_decel=JOINER_MERGE_DECEL)
        return longitudinal.desired_accel(behavior, state.speed, self.dt), None

    def _start_merge_directive(self, vid: str, agent: _CavAgent,
                               state: KinematicState) -> LaneChangeDirective:
        p = self.config.platoon
        target_lane = p.lane
        y_now = (self.config.map.lane_center_y(state.lane) + state.lateral_offset)
        start_offset = y_now - self.config.map.lane_center_y(target_lane)
        span = max(state.speed, 1.0) * 3.0  # nominal 3 s lane change
        curve = fit_cubic(start_offset, 0.0, 0.0, 0.0,
                          state.station, state.station + span)
        return LaneChangeDirective(target_lane=target_lane, curve=curve)

    def _control(self, lane_order) -> tuple[dict[str, float],
                                            dict[str, LaneChangeDirective]]:
        step = self.world.clock.step_index
        accels: dict[str, float] = {}
        lanes: dict[str, LaneChangeDirective] = {}
        for body, state in self.world.vehicles:
            vid = body.id
            agent = self.agents.get(vid)
            if agent is not None:
                if self.roster is not None and vid in self.roster.member_ids:
                    if vid == self.roster.leader_id:
                        accels[vid] = self._leader_accel(vid, agent, state, lane_order)
                    else:
                        accels[vid] = self._follower_accel(vid, agent, state, step)
                else:
                    accels[vid], _ = self._joiner_accel(vid, agent, state, step)
                    if agent.merge_started_step == step:
                        lanes[vid] = self._start_merge_directive(vid, agent, state)
                # Roll and stash the plan shared on the next step.
                agent.last_plan = plan_trajectory(state, agent.behavior(agent.last_target),
                                                  SHARE_HORIZON_STEPS, self.dt)
                agent.plan_step = step
            elif vid in self.hv_profiles:
                profile = self.hv_profiles[vid]
                target = profile.speed_at(self.world.clock.time + self.dt)
                behavior = BehaviorParams(target_speed=target)
                accels[vid] = longitudinal.desired_accel(behavior, state.speed, self.dt)
            else:
                accels[vid] = self._background_accel(vid, state, lane_order)
        return accels, lanes

    def _background_accel(self, vid: str, state: KinematicState, lane_order) -> float:
        ahead = self._ahead_in_lane(vid, lane_order)
        idm = self.bg_spec.idm if self.bg_spec is not None else IdmParams(25.0)
        if ahead is None:
            return longitudinal.idm_accel(1e9, state.speed, 0.0, idm)
        station, other, length = ahead
        gap = station - length - state.station
        closing = state.speed - self.world.state_of(other).speed
        return longitudinal.idm_accel(gap, state.speed, closing, idm)

    def _check_destinations(self) -> None:
        for vid, dest in self.destinations.items():
            if vid in self.reached:
                continue
            try:
                state = self.world.state_of(vid)
            except KeyError:
                continue
            if state.station >= dest:
                self.reached.add(vid)
                self.log("destination_reached", vehicle=vid)

    def _diagnostic_dump(self, steps: int = 50) -> str:
        """Last ``steps`` recorded steps of every vehicle, for failure triage."""
        lines = ["step time_s id station_m lane lat_m speed_mps accel mode"]
        last = self.world.clock.step_index
        for vid, rows in self.records.items():
            for r in rows[-steps:]:
                lines.append(f"{r.step} {r.step * self.dt:.2f} {vid} "
                             f"{r.station:.3f} {r.lane} {r.lateral_offset:.3f} "
                             f"{r.speed:.3f} {r.accel:.3f} {r.mode}")
        lines.append(f"(dump covers up to step {last})")
        return "\n".join(lines)

    def run(self) -> SimulationResult:
        t0 = _time.perf_counter()
        self._record_all()
        try:
            for _ in range(self.config.sim.total_steps):
                step = self.world.clock.step_index
                self._spawn_background()
                self._fire_events()
                self._share()
                mailboxes = self.bus.deliver(step)
                lane_order = self._lane_order()
                self._process_mailboxes(mailboxes, lane_order)
                self._update_join_fsms()
                self._opener_ramp()
                accels, lanes = self._control(lane_order)
                self.world = step_world(self.world, accels, lanes)
                check_no_overlap(self.world)
                if self.roster is not None:
                    self.roster.check_station_order(self.world)
                self._check_destinations()
                self._despawn_background()
                self._record_all()
        except InvariantViolation as exc:
            # Protocol bugs must be loud: attach the recent history so the
            # caller can print a useful post-mortem.
            exc.dump = self._diagnostic_dump(50)
            raise
        traces = {vid: VehicleTrace(vehicle_id=vid, length=self.lengths[vid],
                                    dt=self.dt, records=rows)
                  for vid, rows in self.records.items()}
        return SimulationResult(config=self.config, traces=traces,
                                event_log=self.event_log, roster=self.roster,
                                bus=self.bus,
                                wall_time_s=_time.perf_counter() - t0)


def run(config: ScenarioConfig) -> SimulationResult:
    """Execute one scenario deterministically and return traces + event log."""
    return _Engine(config).run()
