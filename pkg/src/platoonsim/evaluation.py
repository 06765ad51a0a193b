"""Safety, stability, and efficiency metrics computed from vehicle traces.

TTC uses the conventional closing condition: it is defined only while the
follower is faster than its leader, so every defined value is positive.
Closing speeds below 1 cm/s count as not closing; that measurement-scale
guard keeps numerical residue at speed equilibria from flooding the series
with astronomically large TTC samples.
Standard deviations are population (not sample) throughout.  Steps with zero
follower speed are excluded from time-gap series.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import TraceError

#: TTC warning threshold separating safe from hazardous episodes (s).
HAZARD_TTC_THRESHOLD = 2.5

#: Closing speeds below this (m/s) are treated as not closing.
CLOSING_SPEED_EPS = 0.01

TRACE_COLUMNS = ("step", "time_s", "id", "station_m", "lane", "lat_offset_m",
                 "speed_mps", "accel_mps2", "mode")

REPORT_COLUMNS = ("vehicle_id", "attc", "hf", "hf_steps", "atg", "tg_std",
                  "acc_std", "tcm", "mnv_acc_std")


@dataclass(frozen=True, slots=True)
class TraceRecord:
    step: int
    station: float
    lane: int
    lateral_offset: float
    speed: float
    accel: float
    mode: str


@dataclass
class VehicleTrace:
    vehicle_id: str
    length: float
    dt: float
    records: list[TraceRecord] = field(default_factory=list)

    def __post_init__(self):
        for prev, cur in zip(self.records, self.records[1:]):
            if cur.step != prev.step + 1:
                raise TraceError(f"trace '{self.vehicle_id}' is not step-contiguous "
                                 f"({prev.step} -> {cur.step})")

    @property
    def first_step(self) -> int:
        return self.records[0].step

    @property
    def last_step(self) -> int:
        return self.records[-1].step

    def record_at(self, step: int) -> Optional[TraceRecord]:
        i = step - self.first_step
        if 0 <= i < len(self.records):
            return self.records[i]
        return None


def ttc_series(follower: VehicleTrace, leader: VehicleTrace) -> list[Optional[float]]:
    """Per-step time-to-collision, None where the pair is not closing.

    Traces must cover identical step ranges.  The gap subtracts the leader's
    length (front-bumper stations); steps where the two are not in the same
    lane are undefined as well.
    """
    if (follower.first_step != leader.first_step
            or follower.last_step != leader.last_step):
        raise TraceError(
            f"misaligned traces: '{follower.vehicle_id}' covers "
            f"[{follower.first_step}, {follower.last_step}], '{leader.vehicle_id}' "
            f"covers [{leader.first_step}, {leader.last_step}]")
    out: list[Optional[float]] = []
    for f, l in zip(follower.records, leader.records):
        if f.lane != l.lane:
            out.append(None)
            continue
        closing = f.speed - l.speed
        if closing <= CLOSING_SPEED_EPS:
            out.append(None)
            continue
        gap = l.station - f.station - leader.length
        out.append(gap / closing)
    return out


def attc(series: Iterable[Optional[float]]) -> Optional[float]:
    """Arithmetic mean of the defined (closing) TTC samples; None if empty."""
    defined = [v for v in series if v is not None]
    if not defined:
        return None
    return sum(defined) / len(defined)


def hazard_frequency(series: Iterable[Optional[float]],
                     threshold: float = HAZARD_TTC_THRESHOLD) -> int:
    """Number of contiguous episodes with defined TTC below the threshold."""
    episodes = 0
    in_episode = False
    for v in series:
        below = v is not None and v < threshold
        if below and not in_episode:
            episodes += 1
        in_episode = below
    return episodes


def hazard_step_count(series: Iterable[Optional[float]],
                      threshold: float = HAZARD_TTC_THRESHOLD) -> int:
    """Auxiliary figure: total steps spent below the threshold."""
    return sum(1 for v in series if v is not None and v < threshold)


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def time_gap_series(follower: VehicleTrace, leader: VehicleTrace) -> list[Optional[float]]:
    """Per-step bumper gap over follower speed; None off-lane or at rest."""
    if (follower.first_step != leader.first_step
            or follower.last_step != leader.last_step):
        raise TraceError(f"misaligned traces: '{follower.vehicle_id}' vs "
                         f"'{leader.vehicle_id}'")
    out: list[Optional[float]] = []
    for f, l in zip(follower.records, leader.records):
        if f.lane != l.lane or f.speed <= 0.0:
            out.append(None)
            continue
        out.append((l.station - f.station - leader.length) / f.speed)
    return out


def time_gap_stats(follower: VehicleTrace,
                   leader: VehicleTrace) -> tuple[Optional[float], Optional[float],
                                                  list[Optional[float]]]:
    """(mean, population std, series) of the inter-vehicular time gap."""
    series = time_gap_series(follower, leader)
    defined = [v for v in series if v is not None]
    if not defined:
        return None, None, series
    mean, std = _mean_std(defined)
    return mean, std, series


def accel_stats(trace: VehicleTrace,
                window: Optional[tuple[int, int]] = None) -> tuple[float, float]:
    """(mean, population std) of acceleration over ``window`` steps (inclusive)."""
    records = trace.records
    if window is not None:
        lo, hi = window
        records = [r for r in records if lo <= r.step <= hi]
    if not records:
        raise TraceError(f"empty acceleration window for '{trace.vehicle_id}'")
    return _mean_std([r.accel for r in records])


def time_to_complete_maneuver(event_log: Sequence, dt: float,
                              joiner_id: Optional[str] = None) -> Optional[float]:
    """Seconds from join approval to join completion, None if unfinished."""
    approved = completed = None
    for ev in event_log:
        if joiner_id is not None and ev.data.get("vehicle") != joiner_id:
            continue
        if ev.kind == "join_approved" and approved is None:
            approved = ev.step
        elif ev.kind == "join_completed" and completed is None:
            completed = ev.step
    if approved is None or completed is None:
        return None
    return (completed - approved) * dt


@dataclass(frozen=True)
class TrafficMetrics:
    total_delay: float  # veh*s
    throughput: float   # veh/h past the measurement station


def traffic_metrics(traces: Sequence[VehicleTrace], free_flow_speed: float,
                    measurement_station: float) -> TrafficMetrics:
    """Aggregate delay and throughput over all traces.

    Delay per vehicle is its simulated travel time minus the free-flow time
    for the distance it covered, floored at zero.  Throughput counts
    crossings of the measurement station, scaled to vehicles per hour over
    the simulated period.
    """
    if not free_flow_speed > 0:
        raise TraceError("free_flow_speed must be positive")
    delay = 0.0
    crossings = 0
    duration = 0.0
    for trace in traces:
        if len(trace.records) < 2:
            continue
        first, last = trace.records[0], trace.records[-1]
        travel_time = (last.step - first.step) * trace.dt
        duration = max(duration, (last.step) * trace.dt)
        distance = last.station - first.station
        delay += max(0.0, travel_time - distance / free_flow_speed)
        if first.station < measurement_station <= last.station:
            crossings += 1
    throughput = crossings * 3600.0 / duration if duration > 0 else 0.0
    return TrafficMetrics(total_delay=delay, throughput=throughput)


@dataclass
class MetricsReport:
    """One table row per vehicle, mirroring the benchmark metric columns."""

    vehicle_id: str
    attc: Optional[float] = None
    hazard_frequency: int = 0
    hazard_steps: int = 0
    avg_time_gap: Optional[float] = None
    time_gap_std: Optional[float] = None
    accel_std: Optional[float] = None
    time_to_complete_maneuver: Optional[float] = None
    maneuver_accel_std: Optional[float] = None


def _fmt(value, digits=3) -> str:
    if value is None:
        return "NA"
    if isinstance(value, int):
        return str(value)
    return f"{value:.{digits}f}"


def render_report(reports: Sequence[MetricsReport]) -> str:
    """Plain-text table with one row per vehicle and NA for absent values."""
    header = ("vehicle_id", "attc", "hf", "hf_steps", "atg", "tg_std",
              "acc_std", "tcm", "mnv_acc_std")
    rows = [header]
    for r in reports:
        rows.append((r.vehicle_id, _fmt(r.attc, 2), str(r.hazard_frequency),
                     str(r.hazard_steps), _fmt(r.avg_time_gap),
                     _fmt(r.time_gap_std), _fmt(r.accel_std),
                     _fmt(r.time_to_complete_maneuver, 2),
                     _fmt(r.maneuver_accel_std)))
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def report_csv_text(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in reports:
        writer.writerow([
            r.vehicle_id,
            "" if r.attc is None else repr(r.attc),
            r.hazard_frequency,
            r.hazard_steps,
            "" if r.avg_time_gap is None else repr(r.avg_time_gap),
            "" if r.time_gap_std is None else repr(r.time_gap_std),
            "" if r.accel_std is None else repr(r.accel_std),
            "" if r.time_to_complete_maneuver is None else repr(r.time_to_complete_maneuver),
            "" if r.maneuver_accel_std is None else repr(r.maneuver_accel_std),
        ])
    return buf.getvalue()


def parse_report_csv(text: str) -> list[MetricsReport]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != REPORT_COLUMNS:
        raise TraceError(f"unexpected report header {header}")
    out = []
    for row in reader:
        def opt(cell: str) -> Optional[float]:
            return None if cell == "" else float(cell)
        out.append(MetricsReport(
            vehicle_id=row[0], attc=opt(row[1]), hazard_frequency=int(row[2]),
            hazard_steps=int(row[3]), avg_time_gap=opt(row[4]),
            time_gap_std=opt(row[5]), accel_std=opt(row[6]),
            time_to_complete_maneuver=opt(row[7]), maneuver_accel_std=opt(row[8])))
    return out


def trace_csv_text(trace: VehicleTrace) -> str:
    """Trace export; float cells use repr for byte-stable round trips."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    dt = trace.dt
    for r in trace.records:
        writer.writerow([r.step, repr(r.step * dt), trace.vehicle_id,
                         repr(r.station), r.lane, repr(r.lateral_offset),
                         repr(r.speed), repr(r.accel), r.mode])
    return buf.getvalue()


def parse_trace_csv(text: str, length: float, dt: float) -> VehicleTrace:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != TRACE_COLUMNS:
        raise TraceError(f"unexpected trace header {header}")
    vehicle_id = None
    records = []
    for row in reader:
        vehicle_id = row[2]
        records.append(TraceRecord(step=int(row[0]), station=float(row[3]),
                                   lane=int(row[4]), lateral_offset=float(row[5]),
                                   speed=float(row[6]), accel=float(row[7]),
                                   mode=row[8]))
    if vehicle_id is None:
        raise TraceError("trace CSV has no rows")
    return VehicleTrace(vehicle_id=vehicle_id, length=length, dt=dt, records=records)


# ---------------------------------------------------------------------------
# Dynamic pairing: metrics against whichever vehicle is physically ahead.
# ---------------------------------------------------------------------------

def _in_lane(record: TraceRecord, lane_width: float) -> bool:
    return abs(record.lateral_offset) <= lane_width / 2.0


def predecessor_series(subject: VehicleTrace, others: Sequence[VehicleTrace],
                       lane_width: float) -> list[Optional[tuple[float, float, float]]]:
    """Per-step (gap, own_speed, predecessor_speed) against the nearest
    in-lane vehicle ahead; None when there is none or the subject straddles.

    The pairing is a pure function of the trace rows, so an external tool can
    reproduce it from the exported CSVs alone.
    """
    out: list[Optional[tuple[float, float, float]]] = []
    for rec in subject.records:
        if not _in_lane(rec, lane_width):
            out.append(None)
            continue
        best: Optional[tuple[float, VehicleTrace, TraceRecord]] = None
        for other in others:
            if other.vehicle_id == subject.vehicle_id:
                continue
            orec = other.record_at(rec.step)
            if orec is None or orec.lane != rec.lane or not _in_lane(orec, lane_width):
                continue
            if orec.station <= rec.station:
                continue
            if best is None or orec.station < best[0]:
                best = (orec.station, other, orec)
        if best is None:
            out.append(None)
        else:
            _, other, orec = best
            gap = orec.station - rec.station - other.length
            out.append((gap, rec.speed, orec.speed))
    return out


def ttc_from_pairs(pairs: Sequence[Optional[tuple[float, float, float]]]) -> list[Optional[float]]:
    out: list[Optional[float]] = []
    for p in pairs:
        if p is None:
            out.append(None)
            continue
        gap, v_self, v_pred = p
        closing = v_self - v_pred
        out.append(gap / closing if closing > CLOSING_SPEED_EPS else None)
    return out


def time_gaps_from_pairs(pairs: Sequence[Optional[tuple[float, float, float]]],
                         window: Optional[tuple[int, int]] = None,
                         first_step: int = 0) -> list[Optional[float]]:
    out: list[Optional[float]] = []
    for i, p in enumerate(pairs):
        step = first_step + i
        if window is not None and not (window[0] <= step <= window[1]):
            out.append(None)
            continue
        if p is None or p[1] <= 0.0:
            out.append(None)
            continue
        out.append(p[0] / p[1])
    return out


def build_reports(traces: dict[str, VehicleTrace], vehicle_order: Sequence[str],
                  lane_width: float,
                  join_window: Optional[tuple[int, int]] = None,
                  joiner_id: Optional[str] = None) -> list[MetricsReport]:
    """Assemble the per-vehicle metric rows for a finished run.

    ``vehicle_order`` is the final roster order (leader first); the leader
    row reports no platoon time gap.  TTC and time gaps are measured against
    whichever vehicle is physically ahead in-lane at each step, so merges and
    gap openings are reflected without re-pairing by hand.
    """
    others = list(traces.values())
    reports = []
    for i, vid in enumerate(vehicle_order):
        trace = traces[vid]
        pairs = predecessor_series(trace, others, lane_width)
        ttcs = ttc_from_pairs(pairs)
        atg = tg_std = None
        if i > 0:
            defined = [v for v in time_gaps_from_pairs(
                pairs, first_step=trace.first_step) if v is not None]
            if defined:
                atg, tg_std = _mean_std(defined)
        _, acc_std = accel_stats(trace)
        tcm = mnv = None
        if join_window is not None:
            if vid == joiner_id:
                tcm = (join_window[1] - join_window[0]) * trace.dt
            try:
                _, mnv = accel_stats(trace, window=join_window)
            except TraceError:
                mnv = None
        reports.append(MetricsReport(
            vehicle_id=vid, attc=attc(ttcs), hazard_frequency=hazard_frequency(ttcs),
            hazard_steps=hazard_step_count(ttcs), avg_time_gap=atg,
            time_gap_std=tg_std, accel_std=acc_std,
            time_to_complete_maneuver=tcm, maneuver_accel_std=mnv))
    return reports


def min_time_gap_in_window(traces: dict[str, VehicleTrace],
                           vehicle_ids: Sequence[str], lane_width: float,
                           window: tuple[int, int]) -> Optional[float]:
    """Smallest time gap any listed vehicle sees during the window."""
    others = list(traces.values())
    smallest: Optional[float] = None
    for vid in vehicle_ids:
        trace = traces[vid]
        pairs = predecessor_series(trace, others, lane_width)
        for value in time_gaps_from_pairs(pairs, window=window,
                                          first_step=trace.first_step):
            if value is not None and (smallest is None or value < smallest):
                smallest = value
    return smallest
