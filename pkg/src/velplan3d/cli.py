"""Command-line front end: ``velplan3d {profile,plan,simulate,gen-track,report}``.

Exit codes: 0 success, 2 invalid input, 3 solver or simulation stall.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from .frenet import FrenetState
from .ggcon import AnalyticGG, GGFormatError, GripMap, GripZone, load_gg_map
from .planner import (Obstacle, PlannerConfig, WorldSnapshot, config_with, plan_step, write_candidates_csv,
                      write_trajectory_csv)
from .sim import (ScenarioError, SimulationStall, bundled_scenario, run_scenario, scenario_from_dict, summary, write_ndjson,
                  write_states_csv, write_steps_csv)
from .track3d import TrackFormatError, TrackInvariantError, load_track, save_track
from .tracks import KINDS, generate_synthetic_track
from .velprofile import ProfileConfig, ProfileStallError, generate_profile, write_profile_csv

log = logging.getLogger("velplan3d")

EXIT_INVALID = 2
EXIT_STALL = 3


class InputError(ValueError):
    pass


def parse_value(text: str):
    """JSON scalar/list if it parses, the raw string otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_sets(items: list[str] | None) -> dict[str, object]:
    out: dict[str, object] = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise InputError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = parse_value(value.strip())
    return out


def _split_sets(sets: dict, default: str) -> dict[str, dict]:
    groups: dict[str, dict] = {"profile": {}, "planner": {}, "gg": {}}
    for key, value in sets.items():
        head, dot, rest = key.partition(".")
        if dot and head in groups:
            groups[head][rest] = value
        else:
            groups[default][key] = value
    return groups


def profile_config(overrides: dict, h_opt: float | None = None, ds: float | None = None) -> ProfileConfig:
    apex_names = {f.name for f in fields(ProfileConfig().apex)}
    prof_names = {f.name for f in fields(ProfileConfig)} - {"apex"}
    cfg = ProfileConfig()
    apex_kw = {k: v for k, v in overrides.items() if k in apex_names}
    prof_kw = {k: v for k, v in overrides.items() if k in prof_names}
    unknown = set(overrides) - apex_names - prof_names
    if unknown:
        raise InputError(f"unknown profile setting(s): {', '.join(sorted(unknown))}")
    if h_opt is not None:
        apex_kw["h_opt"] = h_opt
    if ds is not None:
        prof_kw["ds"] = ds
    return replace(cfg, apex=replace(cfg.apex, **apex_kw), **prof_kw)


def _load_gg(path: str | None, overrides: dict):
    if path:
        if overrides:
            raise InputError("gg.* settings apply to the analytic model only")
        return load_gg_map(path)
    return AnalyticGG(**overrides)


def _alpha(args, track):
    zones = [GripZone(a, b, al) for a, b, al in (args.grip_zone or [])]
    if zones:
        return GripMap(zones, track.s_lap if track.closed else None)
    if not 0.0 < args.alpha <= 1.0:
        raise InputError("--alpha must lie in (0, 1]")
    return args.alpha


# ------------------------------------------------------------------ verbs
def cmd_profile(args) -> int:
    groups = _split_sets(parse_sets(args.set), "profile")
    track = load_track(args.track)
    gg = _load_gg(args.gg, groups["gg"])
    cfg = profile_config(groups["profile"], args.h_opt, args.ds)
    v_start = args.v_start if args.v_start is not None else float(track.sample(args.s_start).v_off[0])
    prof = generate_profile(track, gg, _alpha(args, track), v_start, args.v_max, args.s_start, cfg)
    with _open_out(args.output) as fh:
        write_profile_csv(prof, fh)
    log.info("profile: %d samples, %d apexes", len(prof.s), len(prof.apexes))
    return 0


def cmd_plan(args) -> int:
    groups = _split_sets(parse_sets(args.set), "planner")
    track = load_track(args.track)
    gg = _load_gg(args.gg, groups["gg"])
    alpha = _alpha(args, track)
    cfg = profile_config(groups["profile"], args.h_opt)
    pcfg = config_with(PlannerConfig(mode=args.mode), **groups["planner"])
    state = FrenetState(args.s, args.v, args.a, args.n, args.n_dot, 0.0)
    prof = generate_profile(track, gg, alpha, args.v, args.v_max, args.s, cfg)
    obstacles = tuple(Obstacle(s, n, hl, hw) for s, n, hl, hw in (args.obstacle or []))
    cands: list = []
    traj = plan_step(WorldSnapshot(track, gg, prof, alpha, obstacles, state), None, pcfg, cands)
    with _open_out(args.output) as fh:
        write_trajectory_csv(traj, fh)
    if args.candidates:
        with open(args.candidates, "w", newline="") as fh:
            write_candidates_csv(cands, fh)
    if traj.degraded:
        log.warning("no feasible candidate; returned the least-violating one")
    return 0


def _apply_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    node = d
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise InputError(f"cannot set {key}: {p} is not a table")
    node[parts[-1]] = value


def _scenario_path(name: str) -> Path:
    """A file path, or the name of a bundled scenario when no such file exists."""
    path = Path(name)
    if not path.exists() and path.suffix == "" and bundled_scenario(name).exists():
        return bundled_scenario(name)
    return path


def cmd_simulate(args) -> int:
    path = _scenario_path(args.scenario)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    for key, value in parse_sets(args.set).items():
        _apply_dotted(raw, key, value)
    ref = args.reference or raw.get("reference", "online")
    refs = ["online", "offline"] if ref == "both" else [ref]
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    result: dict = {"scenario": raw.get("name", path.stem), "runs": {}}
    for r in refs:
        scenario = scenario_from_dict(raw, path.parent, r)
        try:
            sim_log = run_scenario(scenario)
        except SimulationStall as exc:
            _write_log(out, r, exc.log)
            raise
        _write_log(out, r, sim_log)
        result["runs"][r] = summary(sim_log, scenario.sectors)
        log.info("%s: %s after %d steps, %d degraded", r, sim_log.terminated, len(sim_log.records),
                 sim_log.degraded_steps)
    if len(refs) == 2:
        gaps = []
        for a, b in zip(result["runs"]["online"]["sector_times"], result["runs"]["offline"]["sector_times"]):
            gap = None if a["time"] is None or b["time"] is None else float(f"{b['time'] - a['time']:.9g}")
            gaps.append({"s_from": a["s_from"], "s_to": a["s_to"], "offline_minus_online": gap})
        result["sector_gaps"] = gaps
    (out / "summary.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return 0


def _write_log(out: Path, ref: str, sim_log) -> None:
    with open(out / f"log_{ref}.ndjson", "w") as fh:
        write_ndjson(sim_log, fh, include_runtime=True)
    with open(out / f"states_{ref}.csv", "w", newline="") as fh:
        write_states_csv(sim_log, fh)
    with open(out / f"steps_{ref}.csv", "w", newline="") as fh:
        write_steps_csv(sim_log, fh)


def cmd_gen_track(args) -> int:
    params = parse_sets(args.param)
    track = generate_synthetic_track(args.kind, **params)
    save_track(track, args.output)
    return 0


def cmd_report(args) -> int:
    from .plotting import render_directory

    written = render_directory(Path(args.directory), profile_csv=args.profile)
    if not written:
        raise InputError(f"nothing to plot in {args.directory}")
    for p in written:
        print(p)
    return 0


# ------------------------------------------------------------------ parser
class _Stdout:
    def __enter__(self):
        return sys.stdout

    def __exit__(self, *exc):
        sys.stdout.flush()
        return False


def _open_out(path: str | None):
    return open(path, "w", newline="") if path and path != "-" else _Stdout()


def _add_common_dynamics(p: argparse.ArgumentParser) -> None:
    p.add_argument("--track", required=True, help="track CSV file")
    p.add_argument("--gg", help="gg-diagram table; the analytic model is used when omitted")
    p.add_argument("--alpha", type=float, default=1.0, help="uniform grip scale in (0, 1]")
    p.add_argument("--grip-zone", nargs=3, type=float, action="append", metavar=("S_FROM", "S_TO", "ALPHA"),
                   help="grip zone, repeatable; overrides --alpha")
    p.add_argument("--v-max", type=float, default=90.0)
    p.add_argument("--h-opt", type=float, help="optimisation horizon [m]")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a setting (profile.*, planner.*, gg.*), repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="velplan3d", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("profile", help="generate a velocity profile CSV")
    _add_common_dynamics(p)
    p.add_argument("--s-start", type=float, default=0.0)
    p.add_argument("--v-start", type=float, help="start speed; the offline speed at s_start by default")
    p.add_argument("--ds", type=float)
    p.add_argument("-o", "--output", help="output CSV (stdout when omitted)")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("plan", help="plan one trajectory from a start state")
    _add_common_dynamics(p)
    p.add_argument("--s", type=float, default=0.0)
    p.add_argument("--v", type=float, required=True, help="progress speed s_dot")
    p.add_argument("--a", type=float, default=0.0, help="progress acceleration s_ddot")
    p.add_argument("--n", type=float, default=0.0)
    p.add_argument("--n-dot", type=float, default=0.0)
    p.add_argument("--mode", choices=("spatial", "temporal"), default="spatial")
    p.add_argument("--obstacle", nargs=4, type=float, action="append",
                   metavar=("S", "N", "HALF_LENGTH", "HALF_WIDTH"))
    p.add_argument("--candidates", help="also dump every candidate to this CSV")
    p.add_argument("-o", "--output", help="trajectory CSV (stdout when omitted)")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="run a scenario file")
    p.add_argument("scenario", help="scenario JSON file or bundled name (reduced_grip, obstacle, straight)")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--reference", choices=("online", "offline", "both"))
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a scenario entry by dotted key, e.g. planner.n_velocity=17")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-track", help="write an analytic test track")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="builder parameter, repeatable")
    p.set_defaults(func=cmd_gen_track)

    p = sub.add_parser("report", help="render PNG figures from simulate/profile output")
    p.add_argument("directory", help="simulate output directory (PNGs are written next to the data)")
    p.add_argument("--profile", help="additional profile CSV to plot")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ProfileStallError, SimulationStall) as exc:
        print(f"velplan3d: stall: {exc}", file=sys.stderr)
        return EXIT_STALL
    except (InputError, ScenarioError, TrackFormatError, TrackInvariantError, GGFormatError,
            FileNotFoundError, KeyError, TypeError, ValueError, OSError) as exc:
        print(f"velplan3d: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
