import random

import pytest

from platoonsim.errors import ConfigurationError, ProtocolError, StaleDataError
from platoonsim.platooning import (JoinPlan, JoinRequest, MemberMode,
                                   PlatoonRoster, PredecessorView,
                                   follower_desired_speed,
                                   follower_target_position, handle_join_request,
                                   is_legal_join_transition, open_gap, revert_gap,
                                   select_merge_position_heuristic,
                                   step_follower, update_join_fsm)
from platoonsim.world import (RAMP_LANE, KinematicState, MapSpec, SimClock,
                              VehicleBody, WorldState)

DT = 0.05
GAP = 0.6


def platoon_world(stations, joiner_station=None, joiner_lane=RAMP_LANE,
                  speed=25.0, joiner_speed=25.0):
    vehicles = [(VehicleBody(f"p{i}", 5.0), KinematicState(station=s, lane=0, speed=speed))
                for i, s in enumerate(stations)]
    if joiner_station is not None:
        vehicles.append((VehicleBody("joiner", 5.0),
                         KinematicState(station=joiner_station, lane=joiner_lane,
                                        speed=joiner_speed)))
    world = WorldState(clock=SimClock(0, DT), map=MapSpec(), vehicles=vehicles)
    roster = PlatoonRoster(member_ids=[f"p{i}" for i in range(len(stations))],
                           desired_time_gap=GAP)
    return world, roster


class TestGapLaw:
    def test_hand_evaluated_target(self):
        assert follower_target_position(100.0, 5.0, 78.75, GAP, DT) == pytest.approx(
            80.0, abs=1e-12)

    def test_second_hand_evaluated_target(self):
        assert follower_target_position(100.0, 5.0, 92.0, GAP, DT) == pytest.approx(
            1199.0 / 13.0, abs=1e-12)

    def test_steady_state_advances_by_v_dt(self):
        # with the synchronized bumper gap at v*gap, the follower moves v*dt
        v, own, length = 25.0, 100.0, 5.0
        pred_next = own + length + v * GAP + v * DT
        target = follower_target_position(pred_next, length, own, GAP, DT)
        assert target - own == pytest.approx(v * DT, abs=1e-12)

    def test_parameter_validation(self):
        with pytest.raises(ConfigurationError):
            follower_target_position(100.0, 5.0, 80.0, 0.0, DT)
        with pytest.raises(ConfigurationError):
            follower_desired_speed(1.0, 0.0, 0.0)

    def test_desired_speed_examples(self):
        assert follower_desired_speed(1199.0 / 13.0, 92.0, DT) == pytest.approx(
            4.6154, abs=1e-4)
        assert follower_desired_speed(80.0, 78.75, DT) == pytest.approx(25.0, abs=1e-12)
        assert follower_desired_speed(50.0, 50.0, DT) == 0.0

    def test_desired_speed_floored_at_zero(self):
        assert follower_desired_speed(10.0, 11.0, DT) == 0.0


class TestStepFollower:
    def roster(self):
        return PlatoonRoster(member_ids=["p0", "p1"], desired_time_gap=GAP)

    def test_equilibrium_fixed_point(self):
        own = KinematicState(station=100.0, speed=25.0)
        view = PredecessorView(position_next=100.0 + 5.0 + 25.0 * (GAP + DT),
                               length=5.0, age_steps=1)
        assert step_follower(self.roster(), 1, view, own, DT) == pytest.approx(
            25.0, abs=1e-12)

    def test_strong_closing_correction(self):
        own = KinematicState(station=92.0, speed=25.0)
        view = PredecessorView(position_next=100.0, length=5.0, age_steps=1)
        assert step_follower(self.roster(), 1, view, own, DT) == pytest.approx(
            4.6154, abs=1e-4)

    def test_larger_gap_raises_target(self):
        own = KinematicState(station=80.0, speed=25.0)
        roster = self.roster()
        targets = [step_follower(roster, 1,
                                 PredecessorView(pos, 5.0, 1), own, DT)
                   for pos in (100.0, 105.0, 112.0)]
        assert targets == sorted(targets)
        assert targets[-1] > 25.0

    def test_stale_or_missing_raises(self):
        own = KinematicState(station=80.0, speed=25.0)
        with pytest.raises(StaleDataError):
            step_follower(self.roster(), 1, None, own, DT)
        with pytest.raises(StaleDataError):
            step_follower(self.roster(), 1,
                          PredecessorView(100.0, 5.0, age_steps=3), own, DT)

    def test_leader_has_no_predecessor(self):
        own = KinematicState(station=80.0, speed=25.0)
        with pytest.raises(ProtocolError):
            step_follower(self.roster(), 0,
                          PredecessorView(100.0, 5.0, 1), own, DT)


class TestOpenGap:
    def test_opened_gap_value(self):
        _, roster = platoon_world([100.0, 80.0, 60.0])
        assert open_gap(roster, 1) == pytest.approx(1.5, abs=1e-12)  # 2*0.6 + 0.3
        assert roster.modes["p1"] is MemberMode.OPENING_GAP
        assert roster.effective_gap("p1") == pytest.approx(1.5)

    def test_tail_join_is_noop(self):
        _, roster = platoon_world([100.0, 80.0])
        assert open_gap(roster, None) is None
        assert roster.gap_overrides == {}

    def test_idempotent_and_revert(self):
        _, roster = platoon_world([100.0, 80.0, 60.0])
        open_gap(roster, 2)
        assert open_gap(roster, 2) == pytest.approx(1.5)
        revert_gap(roster, 2)
        assert roster.modes["p2"] is MemberMode.MAINTAINING
        assert roster.effective_gap("p2") == GAP

    def test_opener_must_be_maintaining(self):
        _, roster = platoon_world([100.0, 80.0])
        with pytest.raises(ProtocolError):
            open_gap(roster, 0)  # the leader never opens


class TestHeuristicSelection:
    def members(self, stations, speed=25.0):
        return [KinematicState(station=s, lane=0, speed=speed) for s in stations]

    def test_abreast_member_wins(self):
        requester = KinematicState(station=1800.0, lane=RAMP_LANE, speed=30.0)
        idx = select_merge_position_heuristic(
            requester, self.members([1840.0, 1820.0, 1800.0, 1780.0, 1760.0]))
        assert idx == 2

    def test_tie_breaks_toward_smaller_index(self):
        requester = KinematicState(station=100.0, lane=RAMP_LANE, speed=25.0)
        idx = select_merge_position_heuristic(
            requester, self.members([110.0, 90.0]))
        assert idx == 0

    def test_translation_invariance(self):
        stations = [1840.0, 1820.0, 1800.0, 1780.0, 1760.0]
        requester = KinematicState(station=1795.0, lane=RAMP_LANE, speed=28.0)
        base = select_merge_position_heuristic(requester, self.members(stations))
        for shift in (-500.0, 250.0, 900.0):
            shifted_req = KinematicState(station=1795.0 + shift, lane=RAMP_LANE,
                                         speed=28.0)
            idx = select_merge_position_heuristic(
                shifted_req, self.members([s + shift for s in stations]))
            assert idx == base

    def test_nearest_identity_invariant_under_permutation(self):
        rng = random.Random(17)
        stations = [1840.0, 1821.0, 1799.0, 1777.0, 1758.0]
        requester = KinematicState(station=1790.0, lane=RAMP_LANE, speed=27.0)
        members = self.members(stations)
        chosen = stations[select_merge_position_heuristic(requester, members)]
        for _ in range(10):
            perm = list(range(5))
            rng.shuffle(perm)
            idx = select_merge_position_heuristic(requester,
                                                  [members[i] for i in perm])
            assert stations[perm[idx]] == chosen

    def test_empty_roster_rejected(self):
        with pytest.raises(ConfigurationError):
            select_merge_position_heuristic(
                KinematicState(station=0.0, speed=1.0), [])


class TestHandleJoinRequest:
    def request(self, station=1800.0, speed=30.0):
        return JoinRequest(requester_id="joiner",
                           state=KinematicState(station=station, lane=RAMP_LANE,
                                                speed=speed),
                           length=5.0, destination=2800.0)

    def test_accept_mid_platoon(self):
        world, roster = platoon_world([1840.0, 1820.0, 1800.0, 1780.0, 1760.0],
                                      joiner_station=1800.0, joiner_speed=30.0)
        decision = handle_join_request(roster, self.request(), world, "heuristic")
        assert decision.accepted
        plan = decision.plan
        assert plan.front_vehicle_index == 2
        assert plan.gap_opener_index == 3
        assert world.map.ramp_merge_start <= plan.meeting_station <= world.map.accel_lane_end
        assert roster.modes["p3"] is MemberMode.OPENING_GAP
        assert roster.busy

    def test_requester_past_accel_lane_rejected(self):
        world, roster = platoon_world([2350.0, 2330.0, 2310.0])
        decision = handle_join_request(roster, self.request(station=2350.0),
                                       world, "heuristic")
        assert not decision.accepted
        assert "meeting point" in decision.reason

    def test_busy_platoon_rejected(self):
        world, roster = platoon_world([1840.0, 1820.0, 1800.0],
                                      joiner_station=1800.0)
        first = handle_join_request(roster, self.request(), world, "heuristic")
        assert first.accepted
        other = JoinRequest(requester_id="other",
                            state=KinematicState(station=1795.0, lane=RAMP_LANE,
                                                 speed=28.0),
                            length=5.0, destination=2800.0)
        second = handle_join_request(roster, other, world, "heuristic")
        assert not second.accepted
        assert "busy" in second.reason

    def test_member_request_is_protocol_error(self):
        world, roster = platoon_world([1840.0, 1820.0])
        bad = JoinRequest(requester_id="p1",
                          state=KinematicState(station=1820.0, lane=0, speed=25.0),
                          length=5.0, destination=2800.0)
        with pytest.raises(ProtocolError):
            handle_join_request(roster, bad, world, "heuristic")


class TestJoinFsm:
    def merge_ready(self):
        # joiner inside the zone, near the meeting point, slot opened
        world, roster = platoon_world([2080.0, 2060.0, 2035.0, 2015.0],
                                      joiner_station=2045.0)
        plan = JoinPlan(front_vehicle_index=1, meeting_station=2050.0,
                        gap_opener_index=2)
        return world, roster, plan

    def test_commit_at_meeting_with_open_slot(self):
        world, roster, plan = self.merge_ready()
        state = world.state_of("joiner")
        nxt = update_join_fsm(MemberMode.MOVE_TO_MEETING_POINT, state, 5.0, plan,
                              roster, world)
        assert nxt is MemberMode.JOINING_MERGE

    def test_waits_before_meeting_point(self):
        world, roster, plan = self.merge_ready()
        early = KinematicState(station=2020.0, lane=RAMP_LANE, speed=25.0)
        nxt = update_join_fsm(MemberMode.MOVE_TO_MEETING_POINT, early, 5.0, plan,
                              roster, world)
        assert nxt is MemberMode.MOVE_TO_MEETING_POINT

    def test_waits_for_rear_clearance(self):
        world, roster, plan = self.merge_ready()
        tight = KinematicState(station=2042.0, lane=RAMP_LANE, speed=25.0)
        # joiner rear at 2037, rear member front at 2035: 2 m < margin
        nxt = update_join_fsm(MemberMode.MOVE_TO_MEETING_POINT, tight, 5.0, plan,
                              roster, world)
        assert nxt is MemberMode.MOVE_TO_MEETING_POINT

    def test_overrun_aborts_to_single_mode(self):
        world, roster, plan = self.merge_ready()
        past = KinematicState(station=2301.0, lane=RAMP_LANE, speed=30.0)
        nxt = update_join_fsm(MemberMode.MOVE_TO_MEETING_POINT, past, 5.0, plan,
                              roster, world)
        assert nxt is MemberMode.SINGLE_SEARCHING

    def test_completion_inserts_behind_front_vehicle(self):
        world, roster, plan = self.merge_ready()
        done = KinematicState(station=2040.0, lane=0, lateral_offset=0.1, speed=25.0)
        nxt = update_join_fsm(MemberMode.JOINING_MERGE, done, 5.0, plan, roster,
                              world)
        assert nxt is MemberMode.MAINTAINING
        roster.insert_member(plan.front_vehicle_index, "joiner")
        assert roster.member_ids == ["p0", "p1", "joiner", "p2", "p3"]
        roster.check_station_order(world)  # joiner at 2040 sits between p1 and p2

    def test_not_done_while_laterally_off(self):
        world, roster, plan = self.merge_ready()
        straddling = KinematicState(station=2040.0, lane=0, lateral_offset=-1.2,
                                    speed=25.0)
        nxt = update_join_fsm(MemberMode.JOINING_MERGE, straddling, 5.0, plan,
                              roster, world)
        assert nxt is MemberMode.JOINING_MERGE

    def test_not_done_while_gap_error_large(self):
        world, roster, plan = self.merge_ready()
        squeezed = KinematicState(station=2051.0, lane=0, lateral_offset=0.0,
                                  speed=25.0)
        # front gap = 2055 - 2051 = 4 m -> 0.16 s, 73% off the 0.6 s target
        nxt = update_join_fsm(MemberMode.JOINING_MERGE, squeezed, 5.0, plan,
                              roster, world)
        assert nxt is MemberMode.JOINING_MERGE

    def test_wrong_mode_is_protocol_error(self):
        world, roster, plan = self.merge_ready()
        with pytest.raises(ProtocolError):
            update_join_fsm(MemberMode.MAINTAINING,
                            world.state_of("joiner"), 5.0, plan, roster, world)

    def test_only_legal_edges_observed(self):
        world, roster, plan = self.merge_ready()
        rng = random.Random(23)
        for _ in range(300):
            mode = rng.choice([MemberMode.MOVE_TO_MEETING_POINT,
                               MemberMode.JOINING_MERGE])
            state = KinematicState(station=rng.uniform(1900.0, 2400.0),
                                   lane=rng.choice([RAMP_LANE, 0]),
                                   lateral_offset=rng.uniform(-3.5, 0.5),
                                   speed=rng.uniform(5.0, 32.0))
            nxt = update_join_fsm(mode, state, 5.0, plan, roster, world)
            assert is_legal_join_transition(mode, nxt)

    def test_illegal_edges_rejected_by_table(self):
        assert not is_legal_join_transition(MemberMode.SINGLE_SEARCHING,
                                            MemberMode.JOINING_MERGE)
        assert not is_legal_join_transition(MemberMode.MAINTAINING,
                                            MemberMode.MOVE_TO_MEETING_POINT)
        assert not is_legal_join_transition(MemberMode.JOINING_MERGE,
                                            MemberMode.MOVE_TO_MEETING_POINT)


class TestRoster:
    def test_default_modes(self):
        roster = PlatoonRoster(member_ids=["a", "b", "c"])
        assert roster.modes["a"] is MemberMode.LEADER_DRIVE
        assert roster.modes["b"] is MemberMode.MAINTAINING
        assert roster.desired_time_gap == 0.6

    def test_station_order_violation_detected(self):
        world, roster = platoon_world([100.0, 120.0])  # follower ahead of leader
        from platoonsim.errors import InvariantViolation
        with pytest.raises(InvariantViolation):
            roster.check_station_order(world)
