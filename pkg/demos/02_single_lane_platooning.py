"""Single-lane platooning benchmarks: the synthetic speed cycle and the
recorded stop-and-go replay.

Run:  python3 demos/02_single_lane_platooning.py
"""

from platoonsim import build_reports, render_report
from platoonsim.scenario import builtin_cycle1, builtin_cycle2, run

for label, config in (("cycle 1: synthetic leader speed cycle", builtin_cycle1()),
                      ("cycle 2: stop-and-go human vehicle ahead", builtin_cycle2())):
    result = run(config)
    print(f"== {label} ==")
    print(f"   {config.sim.total_steps} steps "
          f"({config.sim.total_steps * config.sim.dt:.0f} s) simulated in "
          f"{result.wall_time_s:.2f} s")
    reports = build_reports(result.traces, list(result.roster.member_ids),
                            config.map.lane_width)
    print(render_report(reports))

    # show how tightly the last follower tracks the 0.6 s time gap
    tail, ahead = result.traces["p4"], result.traces["p3"]
    gaps = []
    for f, l in zip(tail.records, ahead.records):
        if f.speed > 0:
            gaps.append((l.station - f.station - ahead.length) / f.speed)
    print(f"   p4 time gap: min {min(gaps):.4f} s, max {max(gaps):.4f} s "
          f"(target 0.600 s)\n")
