import pytest

from platoonsim.errors import ConfigurationError
from platoonsim.fuzzy import FuzzyEngine, Triangular, default_engine, parse_rule_base
from platoonsim.platooning import select_merge_position_fuzzy
from platoonsim.world import RAMP_LANE, KinematicState

MINI_BASE = """
version 1
input x universe 0 10
  term Low  tri 0 0 6
  term High tri 4 10 10
output score
  term Bad 0.2
  term Good 0.8
rule Low  => Bad
rule High => Good
"""


class TestTriangular:
    def test_peak_and_edges(self):
        tri = Triangular(-30.0, 0.0, 30.0)
        assert tri(0.0) == 1.0
        assert tri(-30.0) == 0.0
        assert tri(15.0) == pytest.approx(0.5)
        assert tri(45.0) == 0.0

    def test_shoulder(self):
        shoulder = Triangular(0.9, 3.0, 3.0)
        assert shoulder(3.0) == 1.0
        assert shoulder(1.95) == pytest.approx(0.5)


class TestParser:
    def test_mini_base_round_trip(self):
        engine = parse_rule_base(MINI_BASE)
        assert engine.version == 1
        assert engine.evaluate([0.0]) == pytest.approx(0.2)
        assert engine.evaluate([10.0]) == pytest.approx(0.8)
        # at x=5 both terms hold 1/6, so the blend sits exactly between weights
        assert engine.evaluate([5.0]) == pytest.approx(0.5)

    def test_values_clamped_to_universe(self):
        engine = parse_rule_base(MINI_BASE)
        assert engine.evaluate([-100.0]) == engine.evaluate([0.0])
        assert engine.evaluate([1e9]) == engine.evaluate([10.0])

    @pytest.mark.parametrize("mutation", [
        ("version 1", ""),                       # missing version
        ("rule Low  => Bad", "rule Bogus => Bad"),   # unknown term
        ("term Good 0.8", ""),                   # missing consequent weight
        ("input x universe 0 10", "input x universe"),  # malformed input
    ])
    def test_malformed_bases_rejected(self, mutation):
        broken = MINI_BASE.replace(*mutation)
        with pytest.raises(ConfigurationError):
            parse_rule_base(broken)

    def test_packaged_base_loads(self):
        engine = default_engine()
        assert engine.version == 1
        assert [inp.name for inp in engine.inputs] == ["offset", "rel_speed",
                                                       "rear_gap"]
        assert len(engine.rules) == 18


class TestPackagedScoring:
    def test_hand_scored_example(self):
        # requester 5 m ahead of the slot (offset -5), speed matched, rear gap
        # at the Adequate peak: only (Near, Matched, Adequate) -> Excellent
        # fires, so the weighted average is exactly the Excellent weight.
        engine = default_engine()
        assert engine.evaluate([-5.0, 0.0, 3.0]) == pytest.approx(0.95, abs=1e-12)

    def test_all_slots_identical_ties_to_zero(self):
        members = [(120.0, 5.0, 25.0)] * 1  # degenerate: one member
        requester = KinematicState(station=105.0, lane=RAMP_LANE, speed=25.0)
        assert select_merge_position_fuzzy(requester, members) == 0

    def test_near_head_matched_adequate_prefers_leader(self):
        # wide slot behind the leader, requester right beside it, speeds matched
        members = [(800.0, 5.0, 25.0), (750.0, 5.0, 25.0), (730.0, 5.0, 25.0)]
        requester = KinematicState(station=770.0, lane=RAMP_LANE, speed=25.0)
        assert select_merge_position_fuzzy(requester, members,
                                           trailing_time_gap=0.6) == 0

    def test_fast_arrival_mid_platoon_prefers_head_slot(self):
        # the benchmark merge geometry: requester abreast the third member but
        # 5 m/s hot; the forward slot wins while the heuristic picks index 2
        members = [(1840.0, 5.0, 25.0), (1820.0, 5.0, 25.0), (1800.0, 5.0, 25.0),
                   (1780.0, 5.0, 25.0), (1760.0, 5.0, 25.0)]
        requester = KinematicState(station=1800.0, lane=RAMP_LANE, speed=30.0)
        assert select_merge_position_fuzzy(requester, members,
                                           trailing_time_gap=3.0) == 0
        from platoonsim.platooning import select_merge_position_heuristic
        states = [KinematicState(station=s, lane=0, speed=v)
                  for s, _, v in members]
        assert select_merge_position_heuristic(requester, states) == 2

    def test_argmax_invariant_to_score_rescaling(self):
        engine = default_engine()
        scaled = FuzzyEngine(engine.version, engine.inputs,
                             {k: 7.3 * w for k, w in engine.output_weights.items()},
                             engine.rules)
        members = [(1840.0, 5.0, 25.0), (1820.0, 5.0, 25.0), (1800.0, 5.0, 25.0),
                   (1780.0, 5.0, 25.0), (1760.0, 5.0, 25.0)]
        requester = KinematicState(station=1800.0, lane=RAMP_LANE, speed=30.0)
        assert (select_merge_position_fuzzy(requester, members, 3.0, engine)
                == select_merge_position_fuzzy(requester, members, 3.0, scaled))
