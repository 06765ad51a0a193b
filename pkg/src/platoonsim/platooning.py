"""Platoon membership FSM, time-gap regulation, and join negotiation.

Followers regulate toward a constant inter-vehicular time gap using the
predecessor's shared planned position:

    pos_target = (pos_prev - L_prev + pos_self * gap/dt) / (1 + gap/dt)
    v_target   = (pos_target - pos_self) / dt

A merging vehicle negotiates with the platoon leader, moves to a meeting
slot, and laterally merges inside the acceleration lane.  Meeting-slot
selection is pluggable: nearest-member heuristic or fuzzy scoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .errors import ConfigurationError, ProtocolError, StaleDataError
from .fuzzy import FuzzyEngine, default_engine
from .world import KinematicState, WorldState, gap_between

#: Predecessor data older than this many steps triggers degraded mode.
STALENESS_BOUND_STEPS = 2

#: Extra time-gap allowance granted on top of twice the platoon gap while a
#: member opens space for a joiner (seconds).
GAP_OPEN_ALLOWANCE = 0.3

#: Seconds ahead the slot midpoint is projected when fixing the meeting point.
MEETING_PROJECTION_S = 3.0

#: Joiner must be this close to the meeting station to start merging (m).
MEETING_CAPTURE_RADIUS = 10.0

#: Required clearance margin on each side of the joiner inside the slot (m).
MIN_SLOT_MARGIN = 3.0

#: Completion thresholds: lateral offset and relative time-gap error.
COMPLETE_LATERAL_TOL = 0.2
COMPLETE_TIME_GAP_REL_ERR = 0.2


class MemberMode(Enum):
    LEADER_DRIVE = "LeaderDrive"
    MAINTAINING = "Maintaining"
    OPENING_GAP = "OpeningGap"
    SINGLE_SEARCHING = "SingleSearching"
    MOVE_TO_MEETING_POINT = "MoveToMeetingPoint"
    JOINING_MERGE = "JoiningMerge"


#: Legal FSM edges for a joining vehicle (plus the abort edges back to
#: SINGLE_SEARCHING from any in-flight state).
_JOIN_EDGES = {
    (MemberMode.SINGLE_SEARCHING, MemberMode.MOVE_TO_MEETING_POINT),
    (MemberMode.MOVE_TO_MEETING_POINT, MemberMode.JOINING_MERGE),
    (MemberMode.JOINING_MERGE, MemberMode.MAINTAINING),
    (MemberMode.MOVE_TO_MEETING_POINT, MemberMode.SINGLE_SEARCHING),
    (MemberMode.JOINING_MERGE, MemberMode.SINGLE_SEARCHING),
    (MemberMode.SINGLE_SEARCHING, MemberMode.SINGLE_SEARCHING),
    (MemberMode.MOVE_TO_MEETING_POINT, MemberMode.MOVE_TO_MEETING_POINT),
    (MemberMode.JOINING_MERGE, MemberMode.JOINING_MERGE),
}


def is_legal_join_transition(current: MemberMode, nxt: MemberMode) -> bool:
    return (current, nxt) in _JOIN_EDGES


@dataclass
class JoinRequest:
    requester_id: str
    state: KinematicState
    length: float            # m
    destination: float       # station, m
    route_summary: str = ""  # e.g. "ramp -> mainline lane 0"


@dataclass
class JoinPlan:
    front_vehicle_index: int          # roster index the joiner will follow
    meeting_station: float            # m, inside the merge zone
    gap_opener_index: Optional[int]   # roster index commanded to open, or None at tail


@dataclass
class JoinDecision:
    accepted: bool
    plan: Optional[JoinPlan] = None
    reason: str = ""


@dataclass
class PlatoonRoster:
    """Ordered platoon membership (index 0 = leader) plus per-member mode."""

    member_ids: list[str]
    desired_time_gap: float = 0.6  # s
    modes: dict[str, MemberMode] = field(default_factory=dict)
    gap_overrides: dict[str, float] = field(default_factory=dict)
    active_plan: Optional[JoinPlan] = None
    joiner_id: Optional[str] = None

    def __post_init__(self):
        if not self.member_ids:
            raise ConfigurationError("a platoon needs at least one member")
        if not self.desired_time_gap > 0:
            raise ConfigurationError("desired_time_gap must be positive")
        if not self.modes:
            self.modes = {self.member_ids[0]: MemberMode.LEADER_DRIVE}
            for vid in self.member_ids[1:]:
                self.modes[vid] = MemberMode.MAINTAINING

    @property
    def leader_id(self) -> str:
        return self.member_ids[0]

    @property
    def busy(self) -> bool:
        return self.active_plan is not None

    def index_of(self, vehicle_id: str) -> int:
        return self.member_ids.index(vehicle_id)

    def predecessor_of(self, vehicle_id: str) -> Optional[str]:
        i = self.index_of(vehicle_id)
        return self.member_ids[i - 1] if i > 0 else None

    def effective_gap(self, vehicle_id: str) -> float:
        return self.gap_overrides.get(vehicle_id, self.desired_time_gap)

    def insert_member(self, front_index: int, vehicle_id: str) -> None:
        """Insert a completed joiner directly behind ``front_index``."""
        self.member_ids.insert(front_index + 1, vehicle_id)
        self.modes[vehicle_id] = MemberMode.MAINTAINING

    def check_station_order(self, world: WorldState) -> None:
        stations = [world.state_of(vid).station for vid in self.member_ids]
        for i, (front, rear) in enumerate(zip(stations, stations[1:])):
            if rear >= front:
                from .errors import InvariantViolation
                raise InvariantViolation(
                    f"roster order broken: member {self.member_ids[i + 1]} "
                    f"({rear:.2f} m) is not behind {self.member_ids[i]} ({front:.2f} m)")


def follower_target_position(pos_prev: float, len_prev: float, pos_self_prev: float,
                             gap: float, dt: float) -> float:
    """Target position keeping a constant time gap behind the predecessor.

    ``pos_prev`` is the predecessor's (planned) position at the step being
    planned; ``pos_self_prev`` is the follower's current position.
    """
    if not gap > 0 or not dt > 0:
        raise ConfigurationError("gap and dt must be positive")
    ratio = gap / dt
    return (pos_prev - len_prev + pos_self_prev * ratio) / (1.0 + ratio)


def follower_desired_speed(pos_now: float, pos_prev_step: float, dt: float) -> float:
    """Speed needed to reach ``pos_now`` from ``pos_prev_step`` in one step."""
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    return max(0.0, (pos_now - pos_prev_step) / dt)


@dataclass(frozen=True)
class PredecessorView:
    """What a follower knows about its predecessor from the V2X bus."""

    position_next: float  # predecessor's planned position at the step being planned
    length: float
    age_steps: int        # steps since the underlying plan was computed


def step_follower(roster: PlatoonRoster, member_index: int,
                  predecessor: Optional[PredecessorView],
                  own_state: KinematicState, dt: float) -> float:
    """Target speed for one follower from its predecessor's shared plan.

    Raises StaleDataError when the predecessor view is missing or older than
    the staleness bound; the caller holds its last commanded speed and flags
    degraded mode.
    """
    if member_index < 1:
        raise ProtocolError("the leader does not follow a predecessor")
    if predecessor is None or predecessor.age_steps > STALENESS_BOUND_STEPS:
        raise StaleDataError(
            f"predecessor data for roster index {member_index} is "
            f"{'missing' if predecessor is None else 'stale'}")
    gap = roster.effective_gap(roster.member_ids[member_index])
    target_pos = follower_target_position(
        predecessor.position_next, predecessor.length, own_state.station, gap, dt)
    return follower_desired_speed(target_pos, own_state.station, dt)


def slot_center(front_station: float, front_length: float,
                rear_station: Optional[float]) -> float:
    """Midpoint of the physical gap behind a member.

    For the tail slot (no rear vehicle) the center sits half a nominal slot
    behind the tail's rear bumper.
    """
    rear_bumper = front_station - front_length
    if rear_station is None:
        return rear_bumper - 10.0
    return (rear_bumper + rear_station) / 2.0


def select_merge_position_heuristic(requester: KinematicState,
                                    members: Sequence[KinematicState],
                                    lane_width: float = 3.5) -> int:
    """Index of the member nearest the requester (Euclidean, ties low)."""
    if not members:
        raise ConfigurationError("empty roster")
    rx = requester.station
    ry = requester.lane * lane_width + requester.lateral_offset
    best, best_d = 0, math.inf
    for i, m in enumerate(members):
        my = m.lane * lane_width + m.lateral_offset
        d = math.hypot(m.station - rx, my - ry)
        if d < best_d:
            best, best_d = i, d
    return best


def fuzzy_slot_inputs(requester: KinematicState,
                      members: Sequence[tuple[float, float, float]],
                      trailing_time_gap: float) -> list[tuple[float, float, float]]:
    """Per-slot (offset, rel_speed, rear_gap) triples for the fuzzy engine.

    ``members`` holds (station, length, speed) in roster order.  The slot of
    the last member uses ``trailing_time_gap`` (gap to surrounding traffic
    behind the platoon, seconds) as its rear-gap availability.
    """
    rows = []
    for k, (station, length, speed) in enumerate(members):
        if k + 1 < len(members):
            rear_station, _, rear_speed = members[k + 1]
            center = slot_center(station, length, rear_station)
            physical = gap_between(station, length, rear_station)
            rear_gap = physical / rear_speed if rear_speed > 0 else 3.0
        else:
            center = slot_center(station, length, None)
            rear_gap = trailing_time_gap
        rows.append((center - requester.station, requester.speed - speed, rear_gap))
    return rows


def select_merge_position_fuzzy(requester: KinematicState,
                                members: Sequence[tuple[float, float, float]],
                                trailing_time_gap: float = 3.0,
                                engine: Optional[FuzzyEngine] = None) -> int:
    """Slot index with the highest fuzzy fitness score (ties low)."""
    if not members:
        raise ConfigurationError("empty roster")
    engine = engine or default_engine()
    best, best_score = 0, -math.inf
    for k, inputs in enumerate(fuzzy_slot_inputs(requester, members, trailing_time_gap)):
        score = engine.evaluate(inputs)
        if score > best_score:
            best, best_score = k, score
    return best


def handle_join_request(roster: PlatoonRoster, request: JoinRequest,
                        world: WorldState, algorithm: str,
                        trailing_time_gap: float = 3.0,
                        engine: Optional[FuzzyEngine] = None) -> JoinDecision:
    """Leader-side handling of a join request.

    On accept the roster records the plan and the slot-rear member is
    commanded to open its gap.  Rejections leave the requester searching.
    """
    if request.requester_id in roster.member_ids:
        raise ProtocolError(f"'{request.requester_id}' is already a platoon member")
    if roster.busy:
        return JoinDecision(False, reason="busy: another join is in progress")
    if request.state.station > world.map.accel_lane_end:
        return JoinDecision(False, reason="no feasible meeting point: requester is "
                                          "past the acceleration lane")

    states = [world.state_of(vid) for vid in roster.member_ids]
    if algorithm == "heuristic":
        front_idx = select_merge_position_heuristic(request.state, states,
                                                    world.map.lane_width)
    elif algorithm == "fuzzy":
        triples = [(s.station, world.body_of(vid).length, s.speed)
                   for vid, s in zip(roster.member_ids, states)]
        front_idx = select_merge_position_fuzzy(request.state, triples,
                                                trailing_time_gap, engine)
    else:
        raise ConfigurationError(f"unknown merge algorithm '{algorithm}'")

    front_state = states[front_idx]
    front_len = world.body_of(roster.member_ids[front_idx]).length
    rear_station = states[front_idx + 1].station if front_idx + 1 < len(states) else None
    center = slot_center(front_state.station, front_len, rear_station)
    meeting = center + MEETING_PROJECTION_S * front_state.speed
    meeting = min(max(meeting, world.map.ramp_merge_start), world.map.accel_lane_end)

    opener_idx: Optional[int] = front_idx + 1 if front_idx + 1 < len(roster.member_ids) else None
    plan = JoinPlan(front_vehicle_index=front_idx, meeting_station=meeting,
                    gap_opener_index=opener_idx)
    roster.active_plan = plan
    roster.joiner_id = request.requester_id
    if opener_idx is not None:
        open_gap(roster, opener_idx)
    return JoinDecision(True, plan=plan)


def open_gap(roster: PlatoonRoster, opener_index: Optional[int]) -> Optional[float]:
    """Command the slot-rear member to hold an enlarged time gap.

    Target gap is 2x the platoon gap plus a fixed joiner allowance.
    Idempotent; a tail join (no opener) is a no-op.
    """
    if opener_index is None:
        return None
    vid = roster.member_ids[opener_index]
    mode = roster.modes[vid]
    if mode == MemberMode.OPENING_GAP:
        return roster.gap_overrides[vid]
    if mode != MemberMode.MAINTAINING:
        raise ProtocolError(f"gap opener '{vid}' must be in Maintaining, is {mode.value}")
    target = 2.0 * roster.desired_time_gap + GAP_OPEN_ALLOWANCE
    roster.modes[vid] = MemberMode.OPENING_GAP
    roster.gap_overrides[vid] = target
    return target


def revert_gap(roster: PlatoonRoster, opener_index: Optional[int]) -> None:
    """Return an opener to the nominal platoon gap (join done or aborted)."""
    if opener_index is None:
        return
    vid = roster.member_ids[opener_index]
    roster.gap_overrides.pop(vid, None)
    if roster.modes.get(vid) == MemberMode.OPENING_GAP:
        roster.modes[vid] = MemberMode.MAINTAINING


def clear_join(roster: PlatoonRoster) -> None:
    roster.active_plan = None
    roster.joiner_id = None


def update_join_fsm(mode: MemberMode, joiner_state: KinematicState,
                    joiner_length: float, plan: JoinPlan,
                    roster: PlatoonRoster, world: WorldState) -> MemberMode:
    """Advance the joiner's mode one step along the legal protocol edges.

    Overrunning the acceleration lane before the merge is committed aborts
    back to single-vehicle driving.
    """
    if mode not in (MemberMode.MOVE_TO_MEETING_POINT, MemberMode.JOINING_MERGE):
        raise ProtocolError(f"update_join_fsm called in mode {mode.value}")

    map_spec = world.map
    front_id = roster.member_ids[plan.front_vehicle_index]
    front_state = world.state_of(front_id)
    front_len = world.body_of(front_id).length

    if mode == MemberMode.MOVE_TO_MEETING_POINT:
        if joiner_state.station > map_spec.accel_lane_end:
            return MemberMode.SINGLE_SEARCHING  # abort: ran out of lane
        rear_idx = plan.front_vehicle_index + 1
        all_members = roster.member_ids
        if rear_idx < len(all_members):
            rear_state = world.state_of(all_members[rear_idx])
            slot_gap = gap_between(front_state.station, front_len, rear_state.station)
            rear_clear = joiner_state.station - joiner_length - rear_state.station
        else:
            slot_gap = math.inf
            rear_clear = math.inf
        front_clear = front_state.station - front_len - joiner_state.station
        # One-sided capture: merging is allowed from the meeting vicinity on;
        # the zone end still bounds the maneuver.  A two-sided window can pass
        # by while the slot is still opening and deadlock the join.
        near_meeting = (joiner_state.station
                        > plan.meeting_station - MEETING_CAPTURE_RADIUS)
        in_zone = map_spec.in_merge_zone(joiner_state.station)
        if (near_meeting and in_zone
                and slot_gap >= joiner_length + 2.0 * MIN_SLOT_MARGIN
                and front_clear >= MIN_SLOT_MARGIN
                and rear_clear >= MIN_SLOT_MARGIN):
            return MemberMode.JOINING_MERGE
        return MemberMode.MOVE_TO_MEETING_POINT

    # JOINING_MERGE: finish when laterally settled and the time gap is close.
    if joiner_state.station > map_spec.accel_lane_end + 200.0:
        # Safety valve for pathological configs; normally completion wins.
        return MemberMode.SINGLE_SEARCHING
    if abs(joiner_state.lateral_offset) <= COMPLETE_LATERAL_TOL and joiner_state.speed > 0:
        gap = gap_between(front_state.station, front_len, joiner_state.station)
        time_gap = gap / joiner_state.speed
        err = abs(time_gap - roster.desired_time_gap) / roster.desired_time_gap
        if err < COMPLETE_TIME_GAP_REL_ERR:
            return MemberMode.MAINTAINING
    return MemberMode.JOINING_MERGE
