"""Cooperative merge-and-join, comparing the two merge-position selectors
under the identical seed: nearest-member heuristic versus fuzzy scoring.

Run:  python3 demos/03_cooperative_merge.py
"""

from platoonsim import build_reports, render_report
from platoonsim.evaluation import min_time_gap_in_window
from platoonsim.scenario import builtin_merge_join, run

for algo in ("heuristic", "fuzzy"):
    config = builtin_merge_join(algo)
    result = run(config)
    print(f"== merge algorithm: {algo} ==")
    for ev in result.event_log:
        if ev.kind in ("join_requested", "join_approved", "gap_opening",
                       "merge_started", "join_completed", "join_aborted"):
            detail = ", ".join(f"{k}={v}" for k, v in ev.data.items())
            print(f"   t={ev.step * config.sim.dt:6.2f} s  {ev.kind:18s} {detail}")
    window = result.join_window("joiner")
    order = list(result.roster.member_ids)
    tcm = (window[1] - window[0]) * config.sim.dt
    min_gap = min_time_gap_in_window(result.traces, order,
                                     config.map.lane_width, window)
    print(f"   time to complete maneuver: {tcm:.2f} s")
    print(f"   minimum time gap during the join: {min_gap:.3f} s")
    print(f"   final roster order: {order}")
    reports = build_reports(result.traces, order, config.map.lane_width,
                            join_window=window, joiner_id="joiner")
    print(render_report(reports))
