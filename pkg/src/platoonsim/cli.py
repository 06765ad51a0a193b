"""Command-line entry point: run scenarios, export artifacts, compare algorithms.

    platoonsim run --scenario cycle1 --seed 7 --out-dir out/
    platoonsim compare --scenario merge_join --algos heuristic fuzzy --seed 3
    platoonsim list

The default output directory is ``out`` unless PLATOONSIM_OUT is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import scenario
from .errors import InvariantViolation, SimulationError
from .evaluation import (build_reports, min_time_gap_in_window, render_report,
                         report_csv_text, trace_csv_text, traffic_metrics)
from .scenario import (ScenarioConfig, SimulationResult, builtin_scenarios,
                       load_config, load_speed_profile, run)

#: Station where throughput crossings are counted (m short of the map end).
THROUGHPUT_SETBACK = 300.0


def _default_out_dir() -> str:
    return os.environ.get("PLATOONSIM_OUT", "out")


def _resolve_config(args) -> ScenarioConfig:
    if args.scenario is not None:
        name = args.scenario
        if name in builtin_scenarios():
            text = scenario._packaged_scenario_text(name)
        else:
            raise SimulationError(
                f"unknown builtin scenario '{name}' (see `platoonsim list`)")
        config = load_config(text)
    else:
        config = load_config(Path(args.config).read_text(encoding="utf-8"))
    if args.seed is not None:
        config.sim = replace(config.sim, seed=args.seed)
    if getattr(args, "steps", None) is not None:
        config.sim = replace(config.sim, total_steps=args.steps)
    if getattr(args, "channel_drop", None) is not None:
        config.channel = replace(config.channel, drop_probability=args.channel_drop)
    if getattr(args, "merge_algo", None) is not None:
        config.singles = tuple(replace(s, merge_algorithm=args.merge_algo)
                               for s in config.singles)
    if getattr(args, "profile", None) is not None:
        profile = load_speed_profile(args.profile)
        for key in list(config.profiles):
            config.profiles[key] = profile
    return config


def _vehicle_order(result: SimulationResult) -> list[str]:
    """Report rows: final roster order, then any single CAV not yet inserted."""
    order = list(result.roster.member_ids) if result.roster is not None else []
    for s in result.config.singles:
        if s.id not in order:
            order.append(s.id)
    return order


def _write_artifacts(result: SimulationResult, out_dir: Path,
                     plot: bool) -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for vid, trace in result.traces.items():
        path = out_dir / f"trace_{vid}.csv"
        path.write_text(trace_csv_text(trace), encoding="utf-8")
        written.append(path.name)

    joiner = result.config.singles[0].id if result.config.singles else None
    window = result.join_window(joiner)
    order = _vehicle_order(result)
    reports = build_reports(result.traces, order, result.config.map.lane_width,
                            join_window=window, joiner_id=joiner)
    (out_dir / "report.csv").write_text(report_csv_text(reports), encoding="utf-8")
    table = render_report(reports)
    (out_dir / "report.txt").write_text(table, encoding="utf-8")
    written += ["report.csv", "report.txt"]

    manifest = {
        "scenario": result.config.name,
        "seed": result.config.sim.seed,
        "dt": result.config.sim.dt,
        "total_steps": result.config.sim.total_steps,
        "lane_width": result.config.map.lane_width,
        "vehicle_order": order,
        "joiner": joiner,
        "join_window": list(window) if window else None,
        "lengths": {vid: t.length for vid, t in result.traces.items()},
        "events": [{"step": e.step, "kind": e.kind, **e.data}
                   for e in result.event_log],
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append("manifest.json")

    if result.config.channel.drop_probability > 0:
        rows = ["step,sender,recipient,kind,dropped"]
        rows += [f"{s},{snd},{rcp},{kind},{dropped}"
                 for s, snd, rcp, kind, dropped in result.bus.drop_log_rows()]
        (out_dir / "drops.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
        written.append("drops.csv")

    if plot:
        from .plots import four_panel_svg
        four_panel_svg(result.traces, order, result.config.map.lane_width,
                       str(out_dir / "plots.svg"), title=result.config.name)
        written.append("plots.svg")
    return written


def cmd_run(args) -> int:
    config = _resolve_config(args)
    result = run(config)
    out_dir = Path(args.out_dir or _default_out_dir())
    written = _write_artifacts(result, out_dir, args.plot)
    joiner = config.singles[0].id if config.singles else None
    window = result.join_window(joiner)
    order = _vehicle_order(result)
    reports = build_reports(result.traces, order, config.map.lane_width,
                            join_window=window, joiner_id=joiner)
    print(f"scenario {config.name}: {config.sim.total_steps} steps "
          f"({config.sim.total_steps * config.sim.dt:.1f} s) in "
          f"{result.wall_time_s:.2f} s wall time")
    print(render_report(reports), end="")
    if config.background is not None:
        tm = traffic_metrics(list(result.traces.values()),
                             config.background.desired_speed,
                             config.map.mainline_length - THROUGHPUT_SETBACK)
        print(f"traffic: total delay {tm.total_delay:.1f} veh*s, "
              f"throughput {tm.throughput:.0f} veh/h")
    print(f"wrote {len(written)} files to {out_dir}/")
    return 0


def cmd_compare(args) -> int:
    if len(args.algos) < 2:
        print("error: compare needs at least two algorithms", file=sys.stderr)
        return 2
    if args.seed is not None and len(set(args.seed)) > 1:
        print("error: compare requires one shared seed across algorithms",
              file=sys.stderr)
        return 2
    seed = args.seed[0] if args.seed else None

    rows = [("algorithm", "tcm_s", "min_time_gap_s", "join_accel_std")]
    results = {}
    for algo in args.algos:
        ns = argparse.Namespace(scenario=args.scenario, config=args.config,
                                seed=seed, steps=None, channel_drop=None,
                                merge_algo=algo, profile=None)
        config = _resolve_config(ns)
        result = run(config)
        results[algo] = result
        joiner = config.singles[0].id if config.singles else None
        window = result.join_window(joiner)
        if window is None:
            rows.append((algo, "NA", "NA", "NA"))
            continue
        tcm = (window[1] - window[0]) * config.sim.dt
        order = _vehicle_order(result)
        min_gap = min_time_gap_in_window(result.traces, order,
                                         config.map.lane_width, window)
        reports = build_reports(result.traces, order, config.map.lane_width,
                                join_window=window, joiner_id=joiner)
        join_std = next((r.maneuver_accel_std for r in reports
                         if r.vehicle_id == joiner), None)
        rows.append((algo, f"{tcm:.2f}",
                     "NA" if min_gap is None else f"{min_gap:.3f}",
                     "NA" if join_std is None else f"{join_std:.3f}"))
        if args.out_dir:
            _write_artifacts(result, Path(args.out_dir) / algo, plot=False)

    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for i, row in enumerate(rows):
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            print("  ".join("-" * w for w in widths))
    return 0


def cmd_list(args) -> int:
    catalog = dict(builtin_scenarios())
    if args.scenario_dir:
        for path in sorted(Path(args.scenario_dir).glob("*.yaml")):
            catalog.setdefault(path.stem, f"user scenario ({path})")
    if args.names_only:
        for name in catalog:
            print(name)
    else:
        width = max(len(n) for n in catalog)
        for name, desc in catalog.items():
            print(f"{name.ljust(width)}  {desc}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="platoonsim",
        description="Deterministic platooning and cooperative-merge simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario and export artifacts")
    src = run_p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="builtin scenario name")
    src.add_argument("--config", help="path to a scenario YAML file")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--steps", type=int, default=None,
                       help="override total simulation steps")
    run_p.add_argument("--out-dir", default=None,
                       help="output directory (default: $PLATOONSIM_OUT or ./out)")
    run_p.add_argument("--channel-drop", type=float, default=None,
                       help="V2X drop probability in [0, 1]")
    run_p.add_argument("--merge-algo", choices=["heuristic", "fuzzy"], default=None)
    run_p.add_argument("--plot", action="store_true",
                       help="write four-panel SVG plots")
    run_p.add_argument("--profile", default=None,
                       help="speed-profile CSV replacing the scenario's profiles")
    run_p.set_defaults(func=cmd_run)

    cmp_p = sub.add_parser("compare",
                           help="run one scenario under several merge algorithms")
    csrc = cmp_p.add_mutually_exclusive_group(required=True)
    csrc.add_argument("--scenario", help="builtin scenario name")
    csrc.add_argument("--config", help="path to a scenario YAML file")
    cmp_p.add_argument("--algos", nargs="+", required=True,
                       choices=["heuristic", "fuzzy"])
    cmp_p.add_argument("--seed", type=int, action="append", default=None,
                       help="shared seed (passing different values is an error)")
    cmp_p.add_argument("--out-dir", default=None)
    cmp_p.set_defaults(func=cmd_compare)

    list_p = sub.add_parser("list", help="list available scenarios")
    list_p.add_argument("--names-only", action="store_true",
                        help="machine-readable: one name per line")
    list_p.add_argument("--scenario-dir", default=None,
                        help="also list *.yaml scenarios from this directory")
    list_p.set_defaults(func=cmd_list)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        dump = getattr(exc, "dump", None)
        if dump:
            print(dump, file=sys.stderr)
        return 3
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
