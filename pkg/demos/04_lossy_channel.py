"""Bernoulli packet drops on the V2X bus: empirical delivery rates and the
effect of loss on platoon gap keeping.

Run:  python3 demos/04_lossy_channel.py
"""

from dataclasses import replace

from platoonsim import ChannelModel, MessageBus, MessageKind, V2XMessage
from platoonsim.scenario import builtin_cycle1, run
from platoonsim.v2x import StatusPayload
from platoonsim.world import KinematicState

print("== raw channel: empirical delivery rate vs configured drop probability ==")
payload = StatusPayload(KinematicState(station=0.0, speed=1.0), 5.0)
for p in (0.0, 0.1, 0.3, 0.5, 0.9):
    bus = MessageBus(ChannelModel(drop_probability=p, seed=7),
                     ["a", "b", "c", "d", "e"])
    for step in range(2500):
        bus.send(V2XMessage("a", None, MessageKind.STATUS, payload, step))
        bus.deliver(step)
    rate = 1.0 - bus.dropped_deliveries / bus.scheduled_deliveries
    print(f"   p={p:.1f}: delivered {rate:.4f} of "
          f"{bus.scheduled_deliveries} scheduled pairs")

print("\n== gap keeping under increasing packet loss (cycle 1) ==")
print("   followers hold their last command when predecessor data goes stale")
for p in (0.0, 0.3, 0.6, 0.95):
    config = builtin_cycle1()
    config.channel = replace(config.channel, drop_probability=p)
    result = run(config)
    degraded = sum(1 for e in result.event_log if e.kind == "degraded_mode")
    gaps = []
    for step in range(0, config.sim.total_steps, 40):
        for i in range(1, 5):
            lead = result.traces[f"p{i-1}"].records[step]
            foll = result.traces[f"p{i}"].records[step]
            if foll.speed > 0:
                gaps.append((lead.station - foll.station - 5.0) / foll.speed)
    print(f"   p={p:.2f}: degraded-mode episodes {degraded:4d}, "
          f"time gap range [{min(gaps):.3f}, {max(gaps):.3f}] s")
