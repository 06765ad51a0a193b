"""platoonsim: deterministic fixed-timestep simulator for cooperative
platooning and freeway merge maneuvers, with V2X message passing and
safety/stability/efficiency metrics."""

from .errors import (AddressingError, ConfigurationError, InvalidStateError,
                     InvariantViolation, ProtocolError, SimulationError,
                     StaleDataError, TraceError)
from .evaluation import (MetricsReport, TrafficMetrics, VehicleTrace, attc,
                         accel_stats, build_reports, hazard_frequency,
                         render_report, time_gap_stats, time_to_complete_maneuver,
                         traffic_metrics, ttc_series)
from .longitudinal import (BehaviorParams, CubicCurve, IdmParams, Trajectory,
                           desired_accel, fit_cubic, idm_accel,
                           leader_following_speed, plan_trajectory)
from .platooning import (JoinPlan, JoinRequest, MemberMode, PlatoonRoster,
                         follower_desired_speed, follower_target_position,
                         handle_join_request, open_gap,
                         select_merge_position_fuzzy,
                         select_merge_position_heuristic, step_follower,
                         update_join_fsm)
from .scenario import (ScenarioConfig, SimulationResult, SpeedProfile,
                       builtin_cycle1, builtin_cycle2, builtin_merge_join,
                       load_config, load_speed_profile, run)
from .v2x import ChannelModel, MessageBus, MessageKind, V2XMessage
from .world import (KinematicState, MapSpec, SimClock, VehicleBody, VehicleKind,
                    WorldState, advance, bumper_gap, step_world)

__version__ = "0.1.0"
