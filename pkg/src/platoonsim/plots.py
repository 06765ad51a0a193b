"""Four-panel SVG plots: speed, acceleration, time gap, and distance gap."""

from __future__ import annotations

from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import VehicleTrace, predecessor_series


def four_panel_svg(traces: dict[str, VehicleTrace], vehicle_ids: Sequence[str],
                   lane_width: float, path: str,
                   title: Optional[str] = None) -> None:
    """Write one SVG with per-vehicle speed/accel/time-gap/distance-gap lines."""
    others = list(traces.values())
    fig, axes = plt.subplots(4, 1, figsize=(9, 11), sharex=True)
    ax_speed, ax_accel, ax_tgap, ax_dgap = axes
    for vid in vehicle_ids:
        trace = traces[vid]
        t = [r.step * trace.dt for r in trace.records]
        ax_speed.plot(t, [r.speed for r in trace.records], label=vid, linewidth=1.0)
        ax_accel.plot(t, [r.accel for r in trace.records], label=vid, linewidth=1.0)
        pairs = predecessor_series(trace, others, lane_width)
        tg_t, tg_v, dg_t, dg_v = [], [], [], []
        for rec, pair in zip(trace.records, pairs):
            if pair is None:
                continue
            gap, v_self, _ = pair
            dg_t.append(rec.step * trace.dt)
            dg_v.append(gap)
            if v_self > 0:
                tg_t.append(rec.step * trace.dt)
                tg_v.append(gap / v_self)
        ax_tgap.plot(tg_t, tg_v, label=vid, linewidth=1.0)
        ax_dgap.plot(dg_t, dg_v, label=vid, linewidth=1.0)
    ax_speed.set_ylabel("speed (m/s)")
    ax_accel.set_ylabel("accel (m/s$^2$)")
    ax_tgap.set_ylabel("time gap (s)")
    ax_dgap.set_ylabel("distance gap (m)")
    ax_dgap.set_xlabel("time (s)")
    ax_speed.legend(loc="upper right", fontsize=8, ncol=3)
    if title:
        fig.suptitle(title)
    for ax in axes:
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
