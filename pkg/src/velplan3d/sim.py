"""Deterministic closed-loop simulation with perfect tracking.

Every step regenerates the velocity profile from the planning start state
(or reuses a frozen offline reference), runs one planning cycle, and moves
the vehicle along the selected trajectory by exactly one step period.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Any

import numpy as np

from .apex import ApexSearchConfig
from .frenet import FrenetState
from .ggcon import AnalyticGG, GGSource, GripMap, GripZone, load_gg_map
from .planner import (Obstacle, PlannerConfig, Trajectory, WorldSnapshot, config_with, match_start,
                      plan_step, _obstacle_distance)
from .track3d import Track3D, load_track
from .tracks import generate_synthetic_track
from .velprofile import ProfileConfig, VelocityProfile, generate_profile

STALL_SPEED = 0.1
STALL_STEPS = 50

RUNTIME_REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "runtime report",
    "type": "object",
    "required": ["steps", "step_period", "phases", "over_budget_steps", "over_budget_count"],
    "properties": {
        "steps": {"type": "integer", "minimum": 0},
        "step_period": {"type": "number", "exclusiveMinimum": 0},
        "phases": {
            "type": "object",
            "required": ["profile", "planning", "total"],
            "additionalProperties": {
                "type": "object",
                "required": ["mean", "max", "count"],
                "properties": {
                    "mean": {"type": "number", "minimum": 0},
                    "max": {"type": "number", "minimum": 0},
                    "count": {"type": "integer", "minimum": 0},
                },
            },
        },
        "over_budget_steps": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "over_budget_count": {"type": "integer", "minimum": 0},
    },
}


class ScenarioError(ValueError):
    """Invalid or unreadable scenario description."""


class SimulationStall(RuntimeError):
    """The vehicle stayed below the stall speed for too many steps."""

    def __init__(self, message: str, log: "SimLog"):
        super().__init__(message)
        self.log = log


class SectorError(ValueError):
    """A sector boundary was not crossed during the run."""


def closed_loop_planner(**overrides) -> PlannerConfig:
    """Planner defaults for replanning loops.

    Each cycle regenerates the reference, whose acceleration is piecewise
    constant, so the plan starts on the reference acceleration instead of
    inheriting the previous plan's.
    """
    return config_with(PlannerConfig(accel_continuity=False), **overrides)


@dataclass(frozen=True)
class Scenario:
    track: Track3D
    gg: GGSource
    start: FrenetState
    v_max: float
    name: str = "scenario"
    grip_zones: tuple[GripZone, ...] = ()
    obstacles: tuple[Obstacle, ...] = ()
    planner: PlannerConfig = field(default_factory=closed_loop_planner)
    profile: ProfileConfig = field(default_factory=ProfileConfig)
    step_period: float = 0.1
    s_goal: float | None = None
    max_steps: int = 1000
    reference: str = "online"  # online | offline
    sectors: tuple[tuple[float, float], ...] = ()
    start_on_profile: bool = True  # take the initial s_ddot from the reference profile

    def __post_init__(self):
        if not self.step_period > 0:
            raise ScenarioError("step period must be > 0")
        if not self.v_max > 0:
            raise ScenarioError("v_max must be > 0")
        if self.reference not in ("online", "offline"):
            raise ScenarioError("reference must be 'online' or 'offline'")
        for z in self.grip_zones:
            if z.s_from < 0 or z.s_to > self.track.s_lap + 1e-9:
                raise ScenarioError(f"grip zone [{z.s_from}, {z.s_to}] lies outside the track")
        if self.s_goal is None and self.max_steps < 1:
            raise ScenarioError("need s_goal or max_steps >= 1")

    def alpha_map(self) -> GripMap:
        return GripMap(self.grip_zones, self.track.s_lap if self.track.closed else None)


@dataclass
class StepRecord:
    step: int
    t: float
    state: FrenetState
    profile_id: int
    runtime_profile: float
    runtime_plan: float
    degraded: bool
    curvature_ok: bool
    track_ok: bool
    accel_ok: bool
    collision_ok: bool
    accel_violation: float
    cost_total: float
    n_end: float
    dv_end: float
    trajectory: Trajectory = field(repr=False)
    profile_v_at_state: float = math.nan  # reference speed at the planning start
    executed_violation: float = 0.0  # gg excess over the part of the plan actually driven


@dataclass
class SimLog:
    scenario: str
    reference: str
    step_period: float
    records: list[StepRecord] = field(default_factory=list)
    final_state: FrenetState | None = None
    final_t: float = 0.0
    terminated: str = "running"
    collision: bool = False
    accel_slack: float = 0.1

    # -------------------------------------------------------------- extracts
    def executed(self) -> dict[str, np.ndarray]:
        """Executed states over time, including the final state."""
        states = [r.state for r in self.records] + ([self.final_state] if self.final_state else [])
        ts = [r.t for r in self.records] + ([self.final_t] if self.final_state else [])
        return {
            "t": np.array(ts),
            "s": np.array([x.s for x in states]),
            "s_dot": np.array([x.s_dot for x in states]),
            "s_ddot": np.array([x.s_ddot for x in states]),
            "n": np.array([x.n for x in states]),
            "n_dot": np.array([x.n_dot for x in states]),
        }

    @property
    def degraded_steps(self) -> int:
        return sum(r.degraded for r in self.records)

    @property
    def accel_violation_steps(self) -> int:
        return sum(not r.accel_ok for r in self.records)

    @property
    def hard_violation_steps(self) -> int:
        """Steps whose driven segment leaves the gg diagram by more than the slack."""
        return sum(r.executed_violation > self.accel_slack for r in self.records)


def _num(x: float):
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.9g}")


def _state_dict(st: FrenetState) -> dict:
    return {k: _num(getattr(st, k)) for k in ("s", "s_dot", "s_ddot", "n", "n_dot", "n_ddot")}


def record_to_dict(r: StepRecord, include_runtime: bool = True) -> dict[str, Any]:
    d = {
        "step": r.step, "t": _num(r.t), "state": _state_dict(r.state), "profile_id": r.profile_id,
        "degraded": r.degraded, "curvature_ok": r.curvature_ok, "track_ok": r.track_ok,
        "accel_ok": r.accel_ok, "collision_ok": r.collision_ok, "accel_violation": _num(r.accel_violation),
        "executed_violation": _num(r.executed_violation),
        "cost_total": _num(r.cost_total), "n_end": _num(r.n_end), "dv_end": _num(r.dv_end),
        "trajectory": {
            "t0": _num(r.trajectory.t0),
            "t": [_num(x) for x in r.trajectory.t],
            "s": [_num(x) for x in r.trajectory.s],
            "n": [_num(x) for x in r.trajectory.n],
            "v": [_num(x) for x in r.trajectory.v],
        },
    }
    if include_runtime:
        d["runtime_profile"] = _num(r.runtime_profile)
        d["runtime_plan"] = _num(r.runtime_plan)
    return d


def write_ndjson(log: SimLog, fh: IO[str], include_runtime: bool = True) -> None:
    """One JSON record per step, then a closing summary line."""
    for r in log.records:
        fh.write(json.dumps(record_to_dict(r, include_runtime), sort_keys=True) + "\n")
    fh.write(json.dumps({"final": True, "t": _num(log.final_t),
                         "state": _state_dict(log.final_state) if log.final_state else None,
                         "terminated": log.terminated, "collision": log.collision}, sort_keys=True) + "\n")


def write_states_csv(log: SimLog, fh: IO[str]) -> None:
    ex = log.executed()
    fh.write("t,s,s_dot,s_ddot,n,n_dot\n")
    for i in range(len(ex["t"])):
        fh.write(",".join(f"{ex[k][i]:.9g}" for k in ("t", "s", "s_dot", "s_ddot", "n", "n_dot")) + "\n")


def write_steps_csv(log: SimLog, fh: IO[str]) -> None:
    cols = ("step", "t", "s", "v", "n", "profile_id", "degraded", "accel_ok", "accel_violation",
            "executed_violation", "cost_total", "n_end", "dv_end", "runtime_profile", "runtime_plan")
    fh.write(",".join(cols) + "\n")
    for r in log.records:
        row = [str(r.step), f"{r.t:.9g}", f"{r.state.s:.9g}", f"{r.state.s_dot:.9g}", f"{r.state.n:.9g}",
               str(r.profile_id), str(int(r.degraded)), str(int(r.accel_ok)), f"{r.accel_violation:.9g}",
               f"{r.executed_violation:.9g}", f"{r.cost_total:.9g}", f"{r.n_end:.9g}", f"{r.dv_end:.9g}", f"{r.runtime_profile:.9g}",
               f"{r.runtime_plan:.9g}"]
        fh.write(",".join(row) + "\n")


# ------------------------------------------------------------------ loop
def offline_reference(scenario: Scenario) -> VelocityProfile:
    """Profile at full grip over the whole remaining track, frozen for the run."""
    track = scenario.track
    horizon = 2.0 * track.s_lap if track.closed else track.s_lap - scenario.start.s
    cfg = replace(scenario.profile, apex=replace(scenario.profile.apex, h_opt=horizon))
    return generate_profile(track, scenario.gg, 1.0, scenario.start.s_dot, scenario.v_max,
                            scenario.start.s, cfg)


def _goal_reached(scenario: Scenario, st: FrenetState) -> bool:
    return scenario.s_goal is not None and st.s >= scenario.s_goal


def _executed_excess(traj: Trajectory, t: float, t_next: float) -> float:
    exc = traj.feasibility.accel_excess
    if exc is None or not len(exc):
        return 0.0
    tt = traj.t0 + traj.t
    win = (tt >= t - 1e-9) & (tt <= t_next + 1e-9)
    return float(np.max(exc[win])) if win.any() else 0.0


def run_scenario(scenario: Scenario) -> SimLog:
    alpha = scenario.alpha_map()
    cfg = scenario.planner
    log = SimLog(scenario.name, scenario.reference, scenario.step_period, accel_slack=cfg.accel_slack)
    frozen = offline_reference(scenario) if scenario.reference == "offline" else None
    est = scenario.start
    prev: Trajectory | None = None
    t = 0.0
    slow = 0
    for k in range(scenario.max_steps):
        if _goal_reached(scenario, est):
            log.terminated = "goal"
            break
        tic = time.perf_counter()
        if frozen is None:
            start, _ = match_start(prev, est, cfg.t_const)
            profile = generate_profile(scenario.track, scenario.gg, alpha, max(start.s_dot, 0.0),
                                       scenario.v_max, start.s, scenario.profile)
            profile_id = k
        else:
            profile = frozen
            profile_id = 0
        toc = time.perf_counter()
        if prev is None and scenario.start_on_profile:
            est = replace(est, s_ddot=float(profile.a_at(est.s)))
        world = WorldSnapshot(scenario.track, scenario.gg, profile, alpha, scenario.obstacles, est, t)
        traj = plan_step(world, prev, cfg)
        t_plan = time.perf_counter() - toc
        f = traj.feasibility
        t_next = t + scenario.step_period
        log.records.append(StepRecord(
            step=k, t=t, state=est, profile_id=profile_id, runtime_profile=toc - tic, runtime_plan=t_plan,
            degraded=traj.degraded, curvature_ok=f.curvature_ok, track_ok=f.track_ok, accel_ok=f.accel_ok,
            collision_ok=f.collision_ok, accel_violation=f.accel_violation, cost_total=traj.cost.total,
            n_end=traj.n_end, dv_end=traj.dv_end, trajectory=traj,
            profile_v_at_state=float(profile.v[0]),
            executed_violation=_executed_excess(traj, t, t_next),
        ))
        if scenario.obstacles:
            _, inside = _obstacle_distance(np.array([est.s]), np.array([est.n]), scenario.obstacles,
                                           scenario.track, replace(cfg, obstacle_margin=0.0))
            log.collision |= bool(inside[0])
        est = traj.state_at(t_next - traj.t0)
        t = t_next
        slow = slow + 1 if est.s_dot < STALL_SPEED else 0
        if slow >= STALL_STEPS:
            log.final_state, log.final_t, log.terminated = est, t, "stall"
            raise SimulationStall(f"vehicle below {STALL_SPEED} m/s for {STALL_STEPS} steps at s={est.s:.2f}", log)
        prev = traj
    else:
        log.terminated = "goal" if _goal_reached(scenario, est) else "max_steps"
    log.final_state, log.final_t = est, t
    return log


# ------------------------------------------------------------------ metrics
def sector_time(log: SimLog, s_from: float, s_to: float) -> float:
    """Time between the first crossings of ``s_from`` and ``s_to`` (linear interpolation)."""
    ex = log.executed()
    s, t = ex["s"], ex["t"]

    def crossing(sb: float) -> float:
        idx = np.flatnonzero(s >= sb)
        if idx.size == 0 or (idx[0] == 0 and s[0] > sb):
            raise SectorError(f"the run never crossed s={sb}")
        i = int(idx[0])
        if i == 0:
            return float(t[0])
        f = (sb - s[i - 1]) / (s[i] - s[i - 1])
        return float(t[i - 1] + f * (t[i] - t[i - 1]))

    if s_to <= s_from:
        raise SectorError("sector end must lie beyond its start")
    return crossing(s_to) - crossing(s_from)


def _phase(values: list[float]) -> dict:
    if not values:
        return {"mean": 0.0, "max": 0.0, "count": 0}
    return {"mean": float(np.mean(values)), "max": float(np.max(values)), "count": len(values)}


def runtime_report(log: SimLog) -> dict:
    prof = [r.runtime_profile for r in log.records]
    plan = [r.runtime_plan for r in log.records]
    total = [a + b for a, b in zip(prof, plan)]
    over = [r.step for r, x in zip(log.records, total) if x > log.step_period]
    return {
        "steps": len(log.records),
        "step_period": log.step_period,
        "phases": {"profile": _phase(prof), "planning": _phase(plan), "total": _phase(total)},
        "over_budget_steps": over,
        "over_budget_count": len(over),
    }


def summary(log: SimLog, sectors=()) -> dict:
    ex = log.executed()
    out = {
        "scenario": log.scenario,
        "reference": log.reference,
        "terminated": log.terminated,
        "steps": len(log.records),
        "final_s": _num(ex["s"][-1]) if len(ex["s"]) else None,
        "degraded_steps": log.degraded_steps,
        "accel_violation_steps": log.accel_violation_steps,
        "hard_violation_steps": log.hard_violation_steps,
        "max_executed_violation": _num(max((r.executed_violation for r in log.records), default=0.0)),
        "collision_free": not log.collision and all(r.collision_ok for r in log.records),
        "max_abs_n": _num(np.max(np.abs(ex["n"]))) if len(ex["n"]) else None,
        "sector_times": [],
        "runtime": runtime_report(log),
    }
    for a, b in sectors:
        try:
            out["sector_times"].append({"s_from": a, "s_to": b, "time": _num(sector_time(log, a, b))})
        except SectorError as exc:
            out["sector_times"].append({"s_from": a, "s_to": b, "time": None, "error": str(exc)})
    return out


# ------------------------------------------------------------------ scenario files
SCENARIO_KEYS = {"name", "track", "gg", "grip_zones", "obstacles", "start", "v_max", "step_period", "stop",
                 "reference", "planner", "profile", "sectors", "description", "start_on_profile"}


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def _load_track_spec(spec: dict, base: Path) -> Track3D:
    if "file" in spec:
        return load_track(_resolve(base, spec["file"]))
    if "generate" in spec:
        params = dict(spec["generate"])
        kind = params.pop("kind")
        return generate_synthetic_track(kind, **params)
    raise ScenarioError("track needs 'file' or 'generate'")


def _load_gg_spec(spec: dict, base: Path) -> GGSource:
    if "file" in spec:
        return load_gg_map(_resolve(base, spec["file"]))
    params = dict(spec.get("analytic", {}))
    for key in ("power",):
        if params.get(key) == "inf":
            params[key] = math.inf
    return AnalyticGG(**params)


def profile_config_from(d: dict) -> ProfileConfig:
    apex_keys = {"h_opt", "l", "epsilon", "max_iter", "prominence", "min_separation"}
    apex = ApexSearchConfig(**{k: v for k, v in d.items() if k in apex_keys})
    rest = {k: v for k, v in d.items() if k not in apex_keys}
    return ProfileConfig(apex=apex, **rest)


def scenario_from_dict(d: dict, base_dir: str | Path = ".", reference: str | None = None) -> Scenario:
    base = Path(base_dir)
    unknown = set(d) - SCENARIO_KEYS
    if unknown:
        raise ScenarioError(f"unknown scenario key(s): {', '.join(sorted(unknown))}")
    try:
        track = _load_track_spec(d["track"], base)
        gg = _load_gg_spec(d.get("gg", {}), base)
        zones = tuple(GripZone(*map(float, z)) for z in d.get("grip_zones", []))
        obstacles = tuple(Obstacle(**o) for o in d.get("obstacles", []))
        start = FrenetState(**{k: float(v) for k, v in d["start"].items()})
        stop = d.get("stop", {})
        ref = reference or d.get("reference", "online")
        if ref == "both":
            ref = "online"
        return Scenario(
            track=track, gg=gg, start=start, v_max=float(d["v_max"]), name=d.get("name", "scenario"),
            grip_zones=zones, obstacles=obstacles, planner=closed_loop_planner(**d.get("planner", {})),
            profile=profile_config_from(d.get("profile", {})), step_period=float(d.get("step_period", 0.1)),
            s_goal=stop.get("s_goal"), max_steps=int(stop.get("max_steps", 1000)), reference=ref,
            sectors=tuple(tuple(map(float, x)) for x in d.get("sectors", [])),
            start_on_profile=bool(d.get("start_on_profile", True)),
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise ScenarioError(f"invalid scenario: {exc}") from exc


def load_scenario(path: str | Path, reference: str | None = None) -> Scenario:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return scenario_from_dict(d, path.parent, reference)


def scenario_references(path: str | Path) -> list[str]:
    """Reference modes requested by a scenario file (``"both"`` expands to online and offline)."""
    d = json.loads(Path(path).read_text())
    ref = d.get("reference", "online")
    return ["online", "offline"] if ref == "both" else [ref]


def bundled_scenario(name: str) -> Path:
    return Path(__file__).parent / "scenarios" / f"{name}.json"
