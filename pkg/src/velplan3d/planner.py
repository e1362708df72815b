"""Sampling-based local trajectory planner relative to the race line.

Candidates are generated either over a fixed arclength (spatial mode, the
default) or over a fixed duration (temporal mode). Each candidate is a
lateral quintic plus a longitudinal polynomial relative to the velocity
profile, sampled in time at ``dt``. Candidates are checked for path
curvature, track bounds, gg-feasibility and obstacle overlap, scored with a
six-term cost functional, and the cheapest feasible one is selected.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields, replace
from typing import IO, Callable, NamedTuple, Sequence

import numpy as np

from .frenet import (FrenetState, SpatialState, cubic_coeffs, polyval, quartic_coeffs,
                     quintic_coeffs, to_spatial)
from .ggcon import (G_EARTH, GGSource, apparent_accels, as_alpha_fn, backward_potential_scalar, diamond_value,
                    forward_potential_scalar)
from .track3d import Track3D, frenet_to_cartesian
from .velprofile import VelocityProfile

TERM_NAMES = ("lateral_deviation", "curvature_deviation", "velocity_deviation",
              "collision_risk", "collision_severity", "accel_violation")
WEIGHT_NAMES = ("lateral", "curvature", "velocity", "risk", "severity", "accel")
TRAJECTORY_COLUMNS = ("t", "s", "n", "x", "y", "z", "v", "ax_hat", "ay_hat", "kappa", "cost_total")


def _trapezoid(y: np.ndarray, x: np.ndarray) -> float:
    if len(x) < 2:
        return 0.0
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


@dataclass(frozen=True)
class CostWeights:
    lateral: float = 0.5
    curvature: float = 5.0
    velocity: float = 0.05
    risk: float = 10.0
    severity: float = 0.1
    accel: float = 20.0

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in WEIGHT_NAMES)


@dataclass(frozen=True)
class PlannerConfig:
    T: float = 4.0
    S: float = 200.0
    t_const: float = 0.1
    dt: float = 0.05
    n_lateral: int = 13
    lateral_margin: float = 0.5
    n_velocity: int = 9
    dv_min: float = -15.0
    dv_max: float = 5.0
    v_floor: float = 1.0
    r_min: float = 6.0
    accel_slack: float = 0.1
    weights: CostWeights = field(default_factory=CostWeights)
    mode: str = "spatial"
    longitudinal: str = "speed"
    blend_time: float | None = 1.5
    accel_continuity: bool = True
    d_sigma: float = 0.5
    obstacle_margin: float = 0.5
    d0: float = 2.0
    vehicle_half_length: float = 2.5
    vehicle_half_width: float = 1.0
    scale_ax_coefficient: bool = True
    g: float = G_EARTH

    def __post_init__(self):
        for name in ("T", "S", "dt", "d_sigma", "r_min", "d0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"planner parameter {name} must be > 0")
        if self.t_const < 0 or self.accel_slack < 0:
            raise ValueError("t_const and accel_slack must be >= 0")
        if self.n_lateral < 1 or self.n_velocity < 1:
            raise ValueError("need at least one lateral and one velocity sample")
        if self.dv_min > self.dv_max:
            raise ValueError("dv_min must not exceed dv_max")
        if self.mode not in ("spatial", "temporal"):
            raise ValueError("mode must be 'spatial' or 'temporal'")
        if self.longitudinal not in ("speed", "squared_speed"):
            raise ValueError("longitudinal must be 'speed' or 'squared_speed'")

    @property
    def kappa_max(self) -> float:
        return 1.0 / self.r_min


@dataclass(frozen=True)
class Obstacle:
    """Static rectangle in Frenet coordinates (centre and half-extents)."""

    s: float
    n: float
    half_length: float = 2.5
    half_width: float = 1.0


@dataclass(frozen=True)
class CostBreakdown:
    lateral_deviation: float
    curvature_deviation: float
    velocity_deviation: float
    collision_risk: float
    collision_severity: float
    accel_violation: float
    total: float

    @classmethod
    def from_terms(cls, terms: Sequence[float]) -> "CostBreakdown":
        terms = [float(x) for x in terms]
        return cls(*terms, total=math.fsum(terms))

    def terms(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in TERM_NAMES}


@dataclass(frozen=True)
class FeasibilityReport:
    """Verdict of every check plus violation magnitudes.

    ``accel_excess`` holds the per-sample gg excess (0 inside the
    boundary); the check fails only once its maximum exceeds the slack.
    """

    curvature_ok: bool
    curvature_excess: float
    curvature_first_index: int | None
    track_ok: bool
    track_excess: float
    track_first_index: int | None
    accel_ok: bool
    accel_violation: float
    accel_first_index: int | None
    collision_ok: bool
    collision_first_index: int | None
    accel_excess: np.ndarray = field(repr=False, compare=False, default=None)
    accel_excess_integral: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.curvature_ok and self.track_ok and self.accel_ok and self.collision_ok

    def hard_violation(self, config: PlannerConfig) -> float:
        """Scalar used to rank infeasible candidates (0 when feasible).

        The gg part integrates the excess above the slack over time: samples
        near the start are shared by every candidate, so a peak-based ranking
        would mostly tie, while the integral rewards the candidate that gets
        back inside the diagram soonest.
        """
        return (self.curvature_excess / config.kappa_max + self.track_excess
                + self.accel_excess_integral
                + (0.0 if self.collision_ok else 10.0))


class TrajectorySample(NamedTuple):
    t: float
    state: FrenetState
    position: tuple[float, float, float]


@dataclass
class Trajectory:
    """Time-sampled candidate. ``t`` is local (starts at 0); ``t0`` is the absolute start time."""

    t: np.ndarray
    s: np.ndarray
    s_dot: np.ndarray
    s_ddot: np.ndarray
    n: np.ndarray
    n_dot: np.ndarray
    n_ddot: np.ndarray
    n_prime: np.ndarray
    n_pprime: np.ndarray
    xyz: np.ndarray
    v: np.ndarray
    ax_hat: np.ndarray
    ay_hat: np.ndarray
    kappa: np.ndarray
    chi: np.ndarray
    ax_app: np.ndarray
    ay_app: np.ndarray
    az_app: np.ndarray
    horizon_kind: str
    n_end: float
    dv_end: float
    v_end: float
    t0: float = 0.0
    cost: CostBreakdown | None = None
    feasibility: FeasibilityReport | None = None
    degraded: bool = False
    coeffs: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.t)

    def state(self, i: int) -> FrenetState:
        return FrenetState(float(self.s[i]), float(self.s_dot[i]), float(self.s_ddot[i]),
                           float(self.n[i]), float(self.n_dot[i]), float(self.n_ddot[i]))

    @property
    def samples(self) -> list[TrajectorySample]:
        return [TrajectorySample(float(self.t0 + self.t[i]), self.state(i), tuple(map(float, self.xyz[i])))
                for i in range(len(self.t))]

    def state_at(self, t_local: float) -> FrenetState:
        """State at local time; exact on sample times, linear in between."""
        t = self.t
        if t_local <= t[0]:
            return self.state(0)
        if t_local >= t[-1]:
            return self.state(len(t) - 1)
        k = int(np.searchsorted(t, t_local, side="right")) - 1
        if abs(t_local - t[k]) <= 1e-9:
            return self.state(k)
        if abs(t[k + 1] - t_local) <= 1e-9:
            return self.state(k + 1)
        f = (t_local - t[k]) / (t[k + 1] - t[k])
        lerp = lambda a: float(a[k] + f * (a[k + 1] - a[k]))  # noqa: E731
        return FrenetState(lerp(self.s), lerp(self.s_dot), lerp(self.s_ddot), lerp(self.n),
                           lerp(self.n_dot), lerp(self.n_ddot))

    def nearest_index(self, s: float) -> int:
        return int(np.argmin(np.abs(self.s - s)))

    def min_speed_s(self) -> float:
        return float(self.s[int(np.argmin(self.v))])


@dataclass(frozen=True)
class WorldSnapshot:
    """Everything one planning step reads: geometry, grip, reference and the vehicle."""

    track: Track3D
    gg: GGSource
    profile: VelocityProfile
    alpha: Callable | float
    obstacles: tuple[Obstacle, ...]
    estimated: FrenetState
    t: float = 0.0


# ------------------------------------------------------------------ start state
def match_start(prev: Trajectory | None, estimated: FrenetState, t_const: float):
    """Start state and its local time on ``prev`` (``None`` when replanning from scratch)."""
    if prev is None or len(prev) == 0:
        return estimated, None
    tol = 1e-6
    if estimated.s < prev.s[0] - tol or estimated.s > prev.s[-1] + tol:
        return estimated, None
    k = prev.nearest_index(estimated.s)
    t_local = float(prev.t[k]) + t_const
    if t_local > prev.t[-1] + 1e-9:
        return estimated, None
    return prev.state_at(t_local), t_local


def determine_start_state(prev_traj: Trajectory | None, estimated: FrenetState,
                          t_const: float) -> FrenetState:
    """Match the estimate onto the previous plan, then advance along it by ``t_const``."""
    return match_start(prev_traj, estimated, t_const)[0]


# ------------------------------------------------------------------ kinematics
def _path_kinematics(track: Track3D, s, s_dot, s_ddot, n, n_p, n_pp, g: float):
    """Speed, accelerations and curvature of a Frenet motion.

    With ``q = 1 - n*Omega_z`` the path speed is ``s_dot * sqrt(q^2 + n'^2)``.
    The curvature follows the usual curvilinear-coordinate formula

        kappa = ((n'' + (Omega_z' n + Omega_z n') tan(d)) cos(d)^2 / q + Omega_z) cos(d) / q

    with heading offset ``d = atan2(n', q)``; on the reference line it
    reduces to ``Omega_z`` exactly.
    """
    smp = track.sample(s)
    oz, doz, oy = smp.omega_z, smp.domega_z, smp.omega_y
    q = 1.0 - n * oz
    f = np.sqrt(q * q + n_p * n_p)
    v = s_dot * f
    dq = -(n_p * oz + n * doz)
    df = (q * dq + n_p * n_pp) / f
    ax_hat = s_ddot * f + s_dot * s_dot * df
    with np.errstate(divide="ignore", invalid="ignore"):
        cos_d = q / f
        tan_d = n_p / q
        kappa = ((n_pp + (doz * n + oz * n_p) * tan_d) * cos_d * cos_d / q + oz) * cos_d / q
    kappa = np.where(q > 0.0, kappa, np.inf)
    ay_hat = kappa * v * v
    chi = np.arctan2(n_p, q)
    w_y_hat = oy * s_dot
    ax_app, ay_app, az_app = apparent_accels(ax_hat, ay_hat, v, w_y_hat, smp.phi, smp.mu, chi, g)
    xyz = frenet_to_cartesian(track, s, n)
    return dict(v=v, ax_hat=ax_hat, ay_hat=ay_hat, kappa=kappa, chi=chi, ax_app=ax_app,
                ay_app=ay_app, az_app=az_app, xyz=xyz)


def _build(track: Track3D, parts: list[dict], kind: str, t0: float, g: float) -> list[Trajectory]:
    """Concatenate raw candidate samples, run the kinematics once, split back."""
    if not parts:
        return []
    keys = ("t", "s", "s_dot", "s_ddot", "n", "n_dot", "n_ddot", "n_prime", "n_pprime")
    flat = {k: np.concatenate([p[k] for p in parts]) for k in keys}
    kin = _path_kinematics(track, flat["s"], flat["s_dot"], flat["s_ddot"], flat["n"],
                           flat["n_prime"], flat["n_pprime"], g)
    flat.update(kin)
    out = []
    start = 0
    for p in parts:
        stop = start + len(p["t"])
        arrays = {k: flat[k][start:stop] for k in flat}
        out.append(Trajectory(**arrays, horizon_kind=kind, n_end=p["n_end"], dv_end=p["dv_end"],
                              v_end=p["v_end"], t0=t0, coeffs=p.get("coeffs", {})))
        start = stop
    return out


def lateral_offsets(track: Track3D, s_end: float, config: PlannerConfig) -> np.ndarray:
    """End offsets across the usable width at the horizon end; 0 is always included."""
    smp = track.sample(s_end)
    left = max(float(smp.w_left[0]) - config.lateral_margin, 0.0)
    right = max(float(smp.w_right[0]) - config.lateral_margin, 0.0)
    if config.n_lateral == 1:
        return np.zeros(1)
    off = np.linspace(-right, left, config.n_lateral)
    off[int(np.argmin(np.abs(off)))] = 0.0
    return off


def velocity_offsets(config: PlannerConfig) -> np.ndarray:
    if config.n_velocity == 1:
        return np.zeros(1)
    dv = np.linspace(config.dv_min, config.dv_max, config.n_velocity)
    if config.dv_min <= 0.0 <= config.dv_max:
        dv[int(np.argmin(np.abs(dv)))] = 0.0
    return dv


# ------------------------------------------------------------------ spatial sampling
def sample_spatial(start: SpatialState, profile: VelocityProfile, track: Track3D,
                   config: PlannerConfig = PlannerConfig(), t0: float = 0.0) -> list[Trajectory]:
    """Candidates over a fixed arclength, relative to the profile.

    Lateral motion is a quintic ``n(sigma)``. Longitudinal motion is a cubic
    correction added to the profile's speed (``longitudinal="speed"``) or to
    its squared speed ``w`` (``"squared_speed"``), so the reference motion is
    reproduced exactly when the start state lies on it. Time follows from
    integrating ``dsigma / sqrt(w)`` with ``w`` linear in each cell;
    candidates whose speed reaches zero are discarded.

    With ``blend_time`` set, the longitudinal correction reaches its end
    offset after roughly that many seconds and is held constant from there;
    otherwise it spans the whole horizon.
    """
    if not start.s_dot > 0.0:
        raise ValueError("spatial sampling needs s_dot > 0")
    s0 = start.s
    S = min(config.S, profile.s_end - s0)
    if S < 2.0 * config.d_sigma:
        return []
    m = max(2, int(math.ceil(S / config.d_sigma - 1e-9)))
    sig = np.linspace(0.0, S, m + 1)
    w_ref = profile.w_at(s0 + sig)
    a_ref = profile.a_at(s0 + sig)

    dv = velocity_offsets(config)
    v_prof_end = float(profile.v_at(s0 + S))
    v_end = np.maximum(v_prof_end + dv, config.v_floor)
    S_b = S if config.blend_time is None else min(S, max(start.s_dot * config.blend_time,
                                                          4.0 * config.d_sigma))
    sig_b = np.minimum(sig, S_b)
    if config.longitudinal == "speed":
        v_ref = np.sqrt(w_ref)
        lon = cubic_coeffs(start.s_dot - v_ref[0], start.s_ddot_s - a_ref[0] / v_ref[0],
                           v_end - v_ref[-1], 0.0, S_b)
        w_all = (v_ref[None, :] + polyval(lon, sig_b)) ** 2
        valid = np.all(v_ref[None, :] + polyval(lon, sig_b) > 0.0, axis=1)
    else:
        w0 = start.s_dot ** 2
        dw0 = 2.0 * start.s_dot * start.s_ddot_s
        lon = cubic_coeffs(w0 - w_ref[0], dw0 - 2.0 * a_ref[0], v_end ** 2 - w_ref[-1], 0.0, S_b)
        w_all = w_ref[None, :] + polyval(lon, sig_b)
        valid = np.all(w_all[:, 1:] > 0.0, axis=1)
    n_end = lateral_offsets(track, s0 + S, config)
    lat = quintic_coeffs(start.n, start.n_prime, start.n_pprime, n_end, 0.0, 0.0, S)

    parts = []
    dsig = np.diff(sig)
    for r in range(len(v_end)):
        if not valid[r]:
            continue
        w = w_all[r]
        sq = np.sqrt(w)
        tc = np.concatenate(([0.0], np.cumsum(2.0 * dsig / (sq[1:] + sq[:-1]))))
        t_stop = min(config.T, tc[-1])
        tk = config.dt * np.arange(int(math.floor(t_stop / config.dt + 1e-9)) + 1)
        j = np.clip(np.searchsorted(tc, tk, side="right") - 1, 0, m - 1)
        tau = tk - tc[j]
        acc = (w[j + 1] - w[j]) / (2.0 * dsig[j])
        sk = np.minimum(sig[j] + sq[j] * tau + 0.5 * acc * tau * tau, sig[j + 1])
        sk[0] = 0.0
        wk = profile.w_at(s0 + sk)
        ak = profile.a_at(s0 + sk)
        sb = np.minimum(sk, S_b)
        if config.longitudinal == "speed":
            vk = np.sqrt(wk)
            s_dot = vk + polyval(lon[r], sb)
            dvk = np.divide(ak, vk, out=np.zeros_like(vk), where=vk > 0.0)
            s_ddot = s_dot * (dvk + polyval(lon[r], sb, der=1))
        else:
            s_dot = np.sqrt(np.maximum(wk + polyval(lon[r], sb), 0.0))
            s_ddot = ak + 0.5 * polyval(lon[r], sb, der=1)
        s_dot[0], s_ddot[0] = start.s_dot, start.s_dot * start.s_ddot_s
        n = polyval(lat, sk)
        n_p = polyval(lat, sk, der=1)
        n_pp = polyval(lat, sk, der=2)
        for c in range(len(n_end)):
            parts.append(dict(
                t=tk, s=s0 + sk, s_dot=s_dot, s_ddot=s_ddot, n=n[c], n_dot=n_p[c] * s_dot,
                n_ddot=n_pp[c] * s_dot ** 2 + n_p[c] * s_ddot, n_prime=n_p[c], n_pprime=n_pp[c],
                n_end=float(n_end[c]), dv_end=float(dv[r]), v_end=float(v_end[r]),
                coeffs=dict(lateral=lat[c], longitudinal=lon[r], S=S, S_blend=S_b, s0=s0, t_end=float(tc[-1])),
            ))
    return _build(track, parts, "spatial", t0, config.g)


# ------------------------------------------------------------------ temporal sampling
def sample_temporal(start: FrenetState, profile: VelocityProfile, track: Track3D,
                    config: PlannerConfig = PlannerConfig(), t0: float = 0.0) -> list[Trajectory]:
    """Candidates over a fixed duration relative to the profile's time parametrisation.

    The longitudinal correction is a velocity-keeping quartic (end speed
    sampled, end position free); lateral motion is a quintic in time.
    Samples past the end of the profile are cut.
    """
    s0 = start.s
    tr0 = float(profile.t_at(s0))
    K = int(round(config.T / config.dt))
    tk = config.dt * np.arange(K + 1)
    keep = tr0 + tk <= profile.t[-1] + 1e-9
    tk = tk[keep]
    if len(tk) < 2:
        return []
    s_ref = profile.s_at_time(tr0 + tk)
    s_ref[0] = s0
    v_ref = profile.v_at(s_ref)
    a_ref = profile.a_at(s_ref)

    dv = velocity_offsets(config)
    v_ref_end = float(profile.v_at(profile.s_at_time(tr0 + config.T)))
    d_end = np.maximum(dv, config.v_floor - v_ref_end)
    lon = quartic_coeffs(0.0, start.s_dot - v_ref[0], start.s_ddot - a_ref[0], d_end, 0.0, config.T)
    n_end = lateral_offsets(track, float(s_ref[-1]), config)
    lat = quintic_coeffs(start.n, start.n_dot, start.n_ddot, n_end, 0.0, 0.0, config.T)
    n = polyval(lat, tk)
    n_d = polyval(lat, tk, der=1)
    n_dd = polyval(lat, tk, der=2)
    parts = []
    for r in range(len(dv)):
        s = s_ref + polyval(lon[r], tk)
        s_dot = v_ref + polyval(lon[r], tk, der=1)
        s_ddot = a_ref + polyval(lon[r], tk, der=2)
        s_dot[0], s_ddot[0] = start.s_dot, start.s_ddot
        inside = np.flatnonzero(s > profile.s_end + 1e-9)
        stop = int(inside[0]) if inside.size else len(tk)
        if stop < 2 or not np.all(s_dot[:stop] > 0.0):
            continue
        sl = slice(0, stop)
        for c in range(len(n_end)):
            n_p = n_d[c][sl] / s_dot[sl]
            parts.append(dict(
                t=tk[sl], s=s[sl], s_dot=s_dot[sl], s_ddot=s_ddot[sl], n=n[c][sl], n_dot=n_d[c][sl],
                n_ddot=n_dd[c][sl], n_prime=n_p, n_pprime=(n_dd[c][sl] - n_p * s_ddot[sl]) / s_dot[sl] ** 2,
                n_end=float(n_end[c]), dv_end=float(dv[r]), v_end=float(v_ref_end + d_end[r]),
                coeffs=dict(lateral=lat[c], longitudinal=lon[r], T=config.T, t_ref0=tr0),
            ))
    return _build(track, parts, "temporal", t0, config.g)


# ------------------------------------------------------------------ feasibility
def _obstacle_distance(s, n, obstacles: Sequence[Obstacle], track: Track3D, config: PlannerConfig):
    """Distance from each sample to the nearest inflated footprint (0 inside) and an inside mask."""
    d = np.full(len(s), np.inf)
    inside = np.zeros(len(s), dtype=bool)
    for ob in obstacles:
        ds = s - ob.s
        if track.closed:
            ds = np.mod(ds + 0.5 * track.s_lap, track.s_lap) - 0.5 * track.s_lap
        hl = ob.half_length + config.vehicle_half_length + config.obstacle_margin
        hw = ob.half_width + config.vehicle_half_width + config.obstacle_margin
        ex = np.abs(ds) - hl
        ey = np.abs(n - ob.n) - hw
        d = np.minimum(d, np.hypot(np.maximum(ex, 0.0), np.maximum(ey, 0.0)))
        inside |= (ex < 0.0) & (ey < 0.0)
    return d, inside


def _accel_excess(traj: Trajectory, track: Track3D, gg: GGSource, alpha, config: PlannerConfig,
                  reference: VelocityProfile | None) -> np.ndarray:
    """Per-sample excess over the gg boundary (diamond or engine), 0 when inside.

    With a reference profile the allowance at each progress value is the
    reference's own utilisation when that exceeds 1, so following the
    reference never counts as a violation.
    """
    alpha_fn = as_alpha_fn(alpha)
    s = traj.s
    al = np.broadcast_to(alpha_fn(s), s.shape).astype(float)
    ax_min, ax_max, ay_max, ax_eng, rho = gg.limits_array(traj.v, traj.az_app)
    scale = config.scale_ax_coefficient
    dia = diamond_value(traj.ax_app, traj.ay_app, ax_min, ax_max, ay_max, rho, al, scale)
    drive = al * ax_max if scale else ax_max
    eng = (traj.ax_app - ax_eng) / drive
    allow_d = np.ones_like(dia)
    allow_e = np.zeros_like(eng)
    if reference is not None:
        smp = track.sample(s)
        vr = reference.v_at(s)
        ar = reference.a_at(s)
        axr, ayr, azr = apparent_accels(ar, smp.omega_z * vr * vr, vr, smp.omega_y * vr, smp.phi, smp.mu,
                                        0.0, config.g)
        alr = np.broadcast_to(reference.alpha_at(s), s.shape).astype(float)
        r_min, r_max, r_ay, r_eng, r_rho = gg.limits_array(vr, azr)
        allow_d = np.maximum(1.0, diamond_value(axr, ayr, r_min, r_max, r_ay, r_rho, alr, scale))
        allow_e = np.maximum(0.0, (axr - r_eng) / (alr * r_max if scale else r_max))
    return np.maximum(np.maximum(dia - allow_d, eng - allow_e), 0.0)


def _first(mask: np.ndarray) -> int | None:
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else None


def check_feasibility(traj: Trajectory, track: Track3D, gg: GGSource, alpha,
                      config: PlannerConfig = PlannerConfig(), obstacles: Sequence[Obstacle] = (),
                      reference: VelocityProfile | None = None) -> FeasibilityReport:
    """Curvature, track-bound, gg and obstacle checks on the trajectory samples."""
    k_ex = np.abs(traj.kappa) - config.kappa_max
    k_bad = ~(k_ex <= 1e-12)
    smp = track.sample(traj.s)
    t_ex = np.maximum(traj.n - smp.w_left, -smp.w_right - traj.n)
    t_bad = t_ex > 1e-9
    excess = _accel_excess(traj, track, gg, alpha, config, reference)
    a_bad = excess > config.accel_slack
    over = np.maximum(excess - config.accel_slack, 0.0)
    a_int = float(np.sum(0.5 * (over[1:] + over[:-1]) * np.diff(traj.t))) if len(over) > 1 else 0.0
    _, inside = _obstacle_distance(traj.s, traj.n, obstacles, track, config)
    return FeasibilityReport(
        curvature_ok=not k_bad.any(),
        curvature_excess=float(np.max(np.where(np.isfinite(k_ex), np.maximum(k_ex, 0.0), 1e6))),
        curvature_first_index=_first(k_bad),
        track_ok=not t_bad.any(),
        track_excess=float(max(np.max(t_ex), 0.0)),
        track_first_index=_first(t_bad),
        accel_ok=not a_bad.any(),
        accel_violation=float(np.max(excess)) if len(excess) else 0.0,
        accel_first_index=_first(a_bad),
        collision_ok=not inside.any(),
        collision_first_index=_first(inside),
        accel_excess=excess,
        accel_excess_integral=a_int,
    )


# ------------------------------------------------------------------ cost
def cost_integrands(traj: Trajectory, profile: VelocityProfile, track: Track3D,
                    obstacles: Sequence[Obstacle], config: PlannerConfig,
                    accel_excess: np.ndarray | None = None) -> np.ndarray:
    """The six unweighted instantaneous cost terms, shape ``(6, len(traj))``."""
    smp = track.sample(traj.s)
    c1 = traj.n ** 2
    c2 = (traj.kappa - smp.omega_z) ** 2
    c3 = (traj.v - profile.v_at(traj.s)) ** 2
    if obstacles:
        d, _ = _obstacle_distance(traj.s, traj.n, obstacles, track, config)
        c4 = np.exp(-d / config.d0)
        k = int(np.argmin(d))
        c5 = np.full(len(traj), traj.v[k] ** 2 * math.exp(-d[k] / config.d0))
    else:
        c4 = np.zeros(len(traj))
        c5 = np.zeros(len(traj))
    c6 = np.zeros(len(traj)) if accel_excess is None else np.asarray(accel_excess) ** 2
    return np.vstack([c1, c2, c3, c4, c5, c6])


def evaluate_cost(traj: Trajectory, profile: VelocityProfile, track: Track3D,
                  obstacles: Sequence[Obstacle] = (), config: PlannerConfig = PlannerConfig(),
                  accel_excess: np.ndarray | None = None) -> CostBreakdown:
    """Weighted trapezoidal integrals of the six terms over the trajectory time.

    ``accel_excess`` defaults to the one stored by a previous feasibility check.
    """
    if accel_excess is None and traj.feasibility is not None:
        accel_excess = traj.feasibility.accel_excess
    c = cost_integrands(traj, profile, track, obstacles, config, accel_excess)
    w = config.weights.as_tuple()
    return CostBreakdown.from_terms([w[i] * _trapezoid(c[i], traj.t) for i in range(6)])


# ------------------------------------------------------------------ selection
def _rank_key(traj: Trajectory):
    return (traj.cost.total, abs(traj.n_end), abs(traj.dv_end))


def select(candidates: list[Trajectory], config: PlannerConfig) -> Trajectory | None:
    """Cheapest feasible candidate; else the least-violating one flagged degraded."""
    if not candidates:
        return None
    feasible = [c for c in candidates if c.feasibility.feasible]
    if feasible:
        best = min(feasible, key=_rank_key)
        best.degraded = False
        return best
    best = min(candidates, key=lambda c: (c.feasibility.hard_violation(config),) + _rank_key(c))
    best.degraded = True
    return best


def generate_candidates(start: FrenetState, profile: VelocityProfile, track: Track3D,
                        config: PlannerConfig, t0: float = 0.0) -> list[Trajectory]:
    if config.mode == "temporal":
        return sample_temporal(start, profile, track, config, t0)
    return sample_spatial(to_spatial(start), profile, track, config, t0)


def reference_start_accel(start: FrenetState, profile: VelocityProfile, track: Track3D, gg: GGSource,
                          alpha, config: PlannerConfig = PlannerConfig()) -> float:
    """Reference acceleration at the start, clipped into the gg diagram.

    The reference's ``a/v`` ratio is applied at the start speed, then the
    resulting apparent longitudinal acceleration is limited to what the
    diagram leaves next to the start state's own lateral load (which
    includes lateral motion the reference does not have). As in the
    feasibility check, whatever the reference itself uses beyond the
    diagram at this progress is allowed on top, so a start on the
    reference keeps the reference acceleration.
    """
    s0 = np.array([start.s])
    v_ref = float(profile.v_at(start.s))
    a_ref = float(profile.a_at(start.s))
    target = start.s_dot * a_ref / v_ref if v_ref > 0.0 else a_ref
    sd = start.s_dot
    n_p = start.n_dot / sd
    n_pp = (start.n_ddot - n_p * target) / (sd * sd)
    kin = [_path_kinematics(track, s0, np.array([sd]), np.array([acc]), np.array([start.n]),
                            np.array([n_p]), np.array([n_pp]), config.g) for acc in (0.0, 1.0)]
    ax0 = float(kin[0]["ax_app"][0])
    slope = float(kin[1]["ax_app"][0]) - ax0
    ax_t = ax0 + slope * target
    ay = float(kin[0]["ay_app"][0])
    if not (slope > 0.0 and math.isfinite(ay)):
        return target
    al = float(np.broadcast_to(as_alpha_fn(alpha)(s0), (1,))[0])
    scale = config.scale_ax_coefficient

    def window(k):
        ax_min, ax_max, ay_max, ax_eng, rho = (float(np.asarray(x).ravel()[0]) for x in
                                               gg.limits_array(k["v"], k["az_app"]))
        a_y = float(k["ay_app"][0])
        return (forward_potential_scalar(a_y, ax_max, ay_max, ax_eng, rho, al, scale),
                backward_potential_scalar(a_y, ax_min, ay_max, rho, al, scale))

    hi, lo = window(kin[0])
    if v_ref > 0.0:
        zero = np.zeros(1)
        ref = _path_kinematics(track, s0, np.array([v_ref]), np.array([a_ref]), zero, zero, zero, config.g)
        ax_ref = float(ref["ax_app"][0])
        hi_ref, lo_ref = window(ref)
        hi += max(0.0, ax_ref - hi_ref)
        lo -= max(0.0, lo_ref - ax_ref)
    if ax_t > hi:
        return target + (hi - ax_t) / slope
    if ax_t < lo:
        return target + (lo - ax_t) / slope
    return target


def plan_step(world: WorldSnapshot, prev_traj: Trajectory | None,
              config: PlannerConfig = PlannerConfig(),
              candidates_out: list | None = None) -> Trajectory:
    """One planning cycle: start state, sampling, checks, cost and selection.

    With ``config.accel_continuity`` the start acceleration is inherited
    from the previous plan; otherwise it is taken from the reference (see
    :func:`reference_start_accel`).
    """
    start, t_local = match_start(prev_traj, world.estimated, config.t_const)
    if not config.accel_continuity and start.s_dot > 0.0:
        start = replace(start, s_ddot=reference_start_accel(start, world.profile, world.track, world.gg,
                                                            world.alpha, config))
    t0 = world.t if t_local is None else prev_traj.t0 + t_local
    cands = generate_candidates(start, world.profile, world.track, config, t0)
    if not cands:
        raise RuntimeError(f"no candidate trajectory could be generated from s={start.s:.3f}")
    for c in cands:
        c.feasibility = check_feasibility(c, world.track, world.gg, world.alpha, config,
                                          world.obstacles, world.profile)
        c.cost = evaluate_cost(c, world.profile, world.track, world.obstacles, config)
    if candidates_out is not None:
        candidates_out.extend(cands)
    return select(cands, config)


# ------------------------------------------------------------------ export
def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_trajectory_csv(traj: Trajectory, fh: IO[str], include_header: bool = True) -> None:
    w = csv.writer(fh, lineterminator="\n")
    if include_header:
        w.writerow(TRAJECTORY_COLUMNS)
    total = traj.cost.total if traj.cost is not None else float("nan")
    for i in range(len(traj)):
        w.writerow([_fmt(traj.t0 + traj.t[i]), _fmt(traj.s[i]), _fmt(traj.n[i]), _fmt(traj.xyz[i, 0]),
                    _fmt(traj.xyz[i, 1]), _fmt(traj.xyz[i, 2]), _fmt(traj.v[i]), _fmt(traj.ax_hat[i]),
                    _fmt(traj.ay_hat[i]), _fmt(traj.kappa[i]), _fmt(total)])


def write_candidates_csv(cands: Sequence[Trajectory], fh: IO[str]) -> None:
    """Debug dump: one row per candidate with its sampling parameters and verdicts."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("index", "n_end", "dv_end", "v_end", "feasible", "curvature_ok", "track_ok", "accel_ok",
                "collision_ok", "accel_violation") + TERM_NAMES + ("total",))
    for i, c in enumerate(cands):
        f = c.feasibility
        w.writerow([i, _fmt(c.n_end), _fmt(c.dv_end), _fmt(c.v_end), int(f.feasible), int(f.curvature_ok),
                    int(f.track_ok), int(f.accel_ok), int(f.collision_ok), _fmt(f.accel_violation)]
                   + [_fmt(v) for v in c.cost.terms().values()] + [_fmt(c.cost.total)])


def config_with(config: PlannerConfig, **overrides) -> PlannerConfig:
    """Copy with overrides; weight names (``w_lateral`` ...) address the cost weights."""
    weights = {k[2:]: float(v) for k, v in overrides.items() if k.startswith("w_")}
    rest = {k: v for k, v in overrides.items() if not k.startswith("w_")}
    valid = {f.name for f in fields(PlannerConfig)}
    unknown = set(rest) - valid
    if unknown:
        raise KeyError(f"unknown planner setting(s): {', '.join(sorted(unknown))}")
    if weights:
        rest["weights"] = replace(config.weights, **weights)
    return replace(config, **rest)
