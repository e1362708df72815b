"""Segment-wise forward-backward minimum-time velocity profile.

The horizon ahead of the vehicle is split at the detected apexes. Every
segment ending in an apex is integrated backward from the apex speed with the
braking potential and forward from its start speed with the driving
potential; the profile is the pointwise minimum. A trailing segment without
an apex is integrated forward only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .apex import (Apex, ApexSearchConfig, admissible_velocities, apexes_on_grid,
                   bracketed_admissible, find_candidates, horizon_grid)
from .ggcon import (G_EARTH, GGSource, as_alpha_fn, backward_potential_scalar,
                    forward_potential_scalar)
from .track3d import Track3D

FW, BW, CROSS = 0, 1, 2
BRACKET_SPEED = 500.0  # search ceiling for the lateral cap when v_max is unbounded


class ProfileStallError(RuntimeError):
    """Two consecutive samples at zero speed: the profile cannot be timed."""


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ProfileConfig:
    apex: ApexSearchConfig = field(default_factory=ApexSearchConfig)
    ds: float | None = None
    lateral_cap: bool = True
    scale_ax_coefficient: bool = True
    g: float = G_EARTH

    @property
    def h_opt(self) -> float:
        return self.apex.h_opt


@dataclass(frozen=True)
class Segment:
    i_from: int
    i_to: int
    s_from: float
    s_to: float
    v_end: float | None  # apex speed at the end, None when forward-only

    @property
    def forward_only(self) -> bool:
        return self.v_end is None


@dataclass(frozen=True)
class VelocityProfile:
    """Feasible speed over the horizon with per-interval accelerations.

    ``a_hat_x[i]`` is the constant acceleration on ``[s[i], s[i+1]]``;
    ``governor[i]`` tells which pass produced it (FW, BW, or CROSS where the
    two profiles intersect inside the interval).
    """

    s: np.ndarray
    v: np.ndarray
    a_hat_x: np.ndarray
    t: np.ndarray
    alpha_used: np.ndarray
    apexes: tuple[Apex, ...] = ()
    governor: np.ndarray | None = None
    alpha_fn: Callable | None = None
    ds: float = 1.0

    def __len__(self) -> int:
        return len(self.s)

    @property
    def s_end(self) -> float:
        return float(self.s[-1])

    def _locate(self, s):
        s = np.asarray(s, dtype=float)
        idx = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.s) - 2)
        return s, idx

    def w_at(self, s):
        """Squared speed, linear in s between samples (exact for constant acceleration)."""
        s, idx = self._locate(s)
        sc = np.clip(s, self.s[0], self.s[-1])
        return self.v[idx] ** 2 + 2.0 * self.a_hat_x[idx] * (sc - self.s[idx])

    def v_at(self, s):
        return np.sqrt(np.maximum(self.w_at(s), 0.0))

    def a_at(self, s):
        _, idx = self._locate(s)
        return self.a_hat_x[idx]

    def t_at(self, s):
        """Time at progress ``s`` under constant acceleration per interval."""
        s, idx = self._locate(s)
        sc = np.clip(s, self.s[0], self.s[-1])
        v0 = self.v[idx]
        v1 = np.sqrt(np.maximum(self.w_at(sc), 0.0))
        ds = sc - self.s[idx]
        denom = v0 + v1
        dt = np.divide(2.0 * ds, denom, out=np.zeros_like(ds), where=denom > 0)
        return self.t[idx] + dt

    def s_at_time(self, t):
        """Inverse of :meth:`t_at` (constant acceleration inside each interval)."""
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, len(self.t) - 2)
        tc = np.clip(t, self.t[0], self.t[-1])
        tau = tc - self.t[idx]
        v0 = self.v[idx]
        a = self.a_hat_x[idx]
        return self.s[idx] + v0 * tau + 0.5 * a * tau * tau

    def alpha_at(self, s):
        if self.alpha_fn is not None:
            return np.asarray(self.alpha_fn(np.asarray(s, dtype=float)), dtype=float)
        _, idx = self._locate(s)
        return self.alpha_used[idx]


class _Horizon:
    """Per-sample geometry kept as Python lists for the scalar integration loops."""

    def __init__(self, track: Track3D, s: np.ndarray, alpha: np.ndarray, g: float):
        smp = track.sample(s)
        self.samples = smp
        self.s = s
        self.alpha = alpha
        cm, cp, sp = np.cos(smp.mu), np.cos(smp.phi), np.sin(smp.phi)
        self.oy = smp.omega_y.tolist()
        self.oz = smp.omega_z.tolist()
        self.gsp = (g * cm * sp).tolist()          # lateral gravity share
        self.gsm = (g * np.sin(smp.mu)).tolist()   # longitudinal gravity share
        self.gcc = (g * cm * cp).tolist()          # static normal load
        self.al = alpha.tolist()


def _forward(h: _Horizon, gg: GGSource, i0: int, i1: int, v0: float, cap: list[float],
             dsl: list[float], scale: bool):
    """Forward integration on samples i0..i1. Returns (v, a) lists (a has one entry per interval).

    ``dsl[i]`` is the length of interval ``[s[i], s[i+1]]``.
    """
    limits = gg.limits
    oy, oz, gsp, gsm, gcc, al = h.oy, h.oz, h.gsp, h.gsm, h.gcc, h.al
    v = [0.0] * (i1 - i0 + 1)
    a = [0.0] * (i1 - i0)
    vi = v0
    v[0] = vi
    for k in range(i1 - i0):
        i = i0 + k
        two_ds = 2.0 * dsl[i]
        v2 = vi * vi
        ax_min, ax_max, ay_max, ax_eng, rho = limits(vi, oy[i] * v2 + gcc[i])
        ay_app = v2 * oz[i] + gsp[i]
        ax_hat = forward_potential_scalar(ay_app, ax_max, ay_max, ax_eng, rho, al[i], scale) + gsm[i]
        w_next = v2 + two_ds * ax_hat
        if w_next <= 0.0:
            w_next = 0.0
            ax_hat = -v2 / two_ds
        lim = cap[i + 1]
        if w_next > lim * lim:
            w_next = lim * lim
            ax_hat = (w_next - v2) / two_ds
        vi = math.sqrt(w_next)
        v[k + 1] = vi
        a[k] = ax_hat
    return v, a


def _backward(h: _Horizon, gg: GGSource, i0: int, i1: int, v1: float, cap: list[float],
              dsl: list[float], scale: bool):
    """Backward integration from sample i1 down to i0 with the braking potential."""
    limits = gg.limits
    oy, oz, gsp, gsm, gcc, al = h.oy, h.oz, h.gsp, h.gsm, h.gcc, h.al
    n = i1 - i0
    v = [0.0] * (n + 1)
    a = [0.0] * n
    vj = v1
    v[n] = vj
    for k in range(n, 0, -1):
        j = i0 + k
        two_ds = 2.0 * dsl[j - 1]
        v2 = vj * vj
        ax_min, ax_max, ay_max, ax_eng, rho = limits(vj, oy[j] * v2 + gcc[j])
        ay_app = v2 * oz[j] + gsp[j]
        ax_hat = backward_potential_scalar(ay_app, ax_min, ay_max, rho, al[j], scale) + gsm[j]
        w_prev = v2 - two_ds * ax_hat
        if w_prev <= 0.0:
            w_prev = 0.0
            ax_hat = v2 / two_ds
        lim = cap[j - 1]
        if w_prev > lim * lim:
            w_prev = lim * lim
            ax_hat = (v2 - w_prev) / two_ds
        vj = math.sqrt(w_prev)
        v[k - 1] = vj
        a[k - 1] = ax_hat
    return v, a


def _combine_lists(v_fw, a_fw, v_bw, a_bw, dsl):
    n = len(v_fw)
    v = [min(f, b) for f, b in zip(v_fw, v_bw)]
    gov = [FW if f <= b else BW for f, b in zip(v_fw, v_bw)]
    a = [0.0] * (n - 1)
    g_int = [FW] * (n - 1)
    for i in range(n - 1):
        if gov[i] == gov[i + 1]:
            a[i] = a_fw[i] if gov[i] == FW else a_bw[i]
            g_int[i] = gov[i]
        else:
            a[i] = (v[i + 1] ** 2 - v[i] ** 2) / (2.0 * dsl[i])
            g_int[i] = CROSS
    return v, a, g_int


def combine(v_fw, a_fw, v_bw, a_bw, ds=1.0):
    """Pointwise minimum of the forward and backward profiles.

    Accelerations come from whichever profile is lower (ties: forward); an
    interval where the profiles cross gets the kinematically consistent
    constant acceleration. Returns ``(v, a, governor)`` arrays.
    """
    if not (len(v_fw) == len(v_bw) and len(a_fw) == len(a_bw) == len(v_fw) - 1):
        raise GridMismatchError("forward and backward profiles must share one sampling grid")
    dsl = np.broadcast_to(np.asarray(ds, dtype=float), (len(a_fw),)).tolist()
    v, a, g = _combine_lists(list(map(float, v_fw)), list(map(float, a_fw)),
                             list(map(float, v_bw)), list(map(float, a_bw)), dsl)
    return np.array(v), np.array(a), np.array(g, dtype=np.int8)


def update_timestamps(profile: VelocityProfile) -> VelocityProfile:
    v = profile.v
    ds = np.diff(profile.s)
    denom = v[:-1] + v[1:]
    if np.any(denom <= 0.0):
        i = int(np.flatnonzero(denom <= 0.0)[0])
        raise ProfileStallError(f"profile stalls between s={profile.s[i]:.3f} and s={profile.s[i + 1]:.3f}")
    t = np.concatenate(([0.0], np.cumsum(2.0 * ds / denom)))
    return replace(profile, t=t)


def segment_horizon(apexes, s_start: float, h_opt: float, ds: float = 1.0) -> list[Segment]:
    """Split ``[s_start, s_start + h_opt]`` at the apex locations.

    ``apexes`` are :class:`Apex` objects sorted by progress. An apex exactly
    at the horizon end terminates the last segment; otherwise a trailing
    forward-only segment closes the horizon.
    """
    n_total = int(round(h_opt / ds))
    segs: list[Segment] = []
    i_prev = 0
    for ap in apexes:
        k = int(round((ap.s_apex - s_start) / ds))
        if k <= i_prev or k > n_total:
            continue
        segs.append(Segment(i_prev, k, s_start + i_prev * ds, s_start + k * ds, ap.v_apex))
        i_prev = k
    if i_prev < n_total or not segs:
        segs.append(Segment(i_prev, n_total, s_start + i_prev * ds, s_start + n_total * ds, None))
    return segs


def _lateral_cap(h: _Horizon, gg: GGSource, v_max: float, g: float, enabled: bool) -> np.ndarray:
    n = len(h.s)
    if not enabled:
        return np.full(n, v_max)
    smp = h.samples
    cap, conv = admissible_velocities(smp, gg, h.alpha, np.sqrt(h.alpha) * smp.v_off,
                                      epsilon=1e-10, max_iter=200, g=g)
    bad = np.flatnonzero(~conv)
    if len(bad):
        v_hi = v_max if math.isfinite(v_max) else BRACKET_SPEED
        cap[bad] = bracketed_admissible(gg, h.alpha[bad], smp.omega_z[bad], smp.omega_y[bad],
                                        smp.phi[bad], smp.mu[bad], v_hi, g)
    return np.minimum(cap, v_max)


def _check_inputs(v_start, v_max):
    if v_start < 0:
        raise ValueError("v_start must be >= 0")
    if not v_max > 0:
        raise ValueError("v_max must be > 0")


def forward_pass(track: Track3D, gg: GGSource, alpha, v_start: float, v_max: float,
                 segment: Segment | tuple[float, float], config: ProfileConfig = ProfileConfig()):
    """Forward integration over ``segment``; returns ``(s, v, a_hat_x)`` arrays."""
    _check_inputs(v_start, v_max)
    s, h, cap, ds = _segment_setup(track, gg, alpha, v_max, segment, config)
    v, a = _forward(h, gg, 0, len(s) - 1, v_start, cap.tolist(), [ds] * (len(s) - 1),
                    config.scale_ax_coefficient)
    return s, np.array(v), np.array(a)


def backward_pass(track: Track3D, gg: GGSource, alpha, v_end: float, segment,
                  config: ProfileConfig = ProfileConfig(), v_max: float = math.inf):
    """Backward integration ending at ``v_end``; returns ``(s, v, a_hat_x)``."""
    _check_inputs(v_end, v_max)
    s, h, cap, ds = _segment_setup(track, gg, alpha, v_max, segment, config)
    v, a = _backward(h, gg, 0, len(s) - 1, v_end, cap.tolist(), [ds] * (len(s) - 1),
                     config.scale_ax_coefficient)
    return s, np.array(v), np.array(a)


def _segment_setup(track, gg, alpha, v_max, segment, config):
    if isinstance(segment, Segment):
        s0, s1 = segment.s_from, segment.s_to
    else:
        s0, s1 = segment
    ds = config.ds or track.ds
    n = int(round((s1 - s0) / ds))
    s = s0 + ds * np.arange(n + 1)
    alpha_arr = np.broadcast_to(as_alpha_fn(alpha)(s), s.shape).astype(float)
    h = _Horizon(track, s, alpha_arr, config.g)
    cap = _lateral_cap(h, gg, v_max, config.g, config.lateral_cap)
    return s, h, cap, ds


def generate_profile(track: Track3D, gg: GGSource, alpha, v_start: float, v_max: float,
                     s_start: float, config: ProfileConfig = ProfileConfig()) -> VelocityProfile:
    _check_inputs(v_start, v_max)
    ds = config.ds or track.ds
    alpha_fn = as_alpha_fn(alpha)
    s = horizon_grid(track, s_start, config.h_opt, ds)
    if len(s) < 2:
        raise ValueError("optimisation horizon shorter than one discretisation step")
    dsl = np.diff(s).tolist()
    alpha_arr = np.broadcast_to(alpha_fn(s), s.shape).astype(float)
    h = _Horizon(track, s, alpha_arr, config.g)
    cap_arr = _lateral_cap(h, gg, v_max, config.g, config.lateral_cap)
    cap = cap_arr.tolist()

    apex_cfg = config.apex
    found: list[tuple[int, Apex]] = []
    candidates = find_candidates(track, s_start, apex_cfg)
    if candidates:
        v_adm, conv = admissible_velocities(h.samples, gg, alpha_arr, np.sqrt(alpha_arr) * h.samples.v_off,
                                            apex_cfg.epsilon, apex_cfg.max_iter, config.g)
        found = [(k, ap) for k, ap in apexes_on_grid(s, v_adm, conv, candidates, apex_cfg.l, ds) if k > 0]

    n_last = len(s) - 1
    bounds = [0] + [k for k, _ in found]
    v_bound = [math.nan] + [min(ap.v_apex, cap[k]) for k, ap in found]
    if bounds[-1] < n_last:
        # the tail has no apex; its backward pass only ends at the lateral cap so a
        # corner cut off by the horizon end is braked for instead of clamped
        bounds.append(n_last)
        v_bound.append(cap[n_last])
    scale = config.scale_ax_coefficient

    # backward passes, last segment first, so earlier apex speeds respect later braking
    bw: dict[int, tuple[list[float], list[float]]] = {}
    for j in range(len(bounds) - 1, 0, -1):
        if not math.isfinite(v_bound[j]):
            n_seg = bounds[j] - bounds[j - 1]
            bw[j] = ([math.inf] * (n_seg + 1), [0.0] * n_seg)
            continue
        vb, ab = _backward(h, gg, bounds[j - 1], bounds[j], v_bound[j], cap, dsl, scale)
        bw[j] = (vb, ab)
        if j - 1 > 0 and not math.isnan(v_bound[j - 1]):
            v_bound[j - 1] = min(v_bound[j - 1], vb[0])

    v_out = [0.0] * len(s)
    a_out = [0.0] * (len(s) - 1)
    g_out = [FW] * (len(s) - 1)
    # a start above the braking limit (or the lateral cap) begins on the backward
    # profile, so the forward pass has to integrate from there as well
    v_seed = min(v_start, bw[1][0][0])
    for j in range(1, len(bounds)):
        i0, i1 = bounds[j - 1], bounds[j]
        vf, af = _forward(h, gg, i0, i1, v_seed, cap, dsl, scale)
        vb, ab = bw[j]
        vc, ac, gc = _combine_lists(vf, af, vb, ab, dsl[i0:i1])
        v_out[i0:i1 + 1] = vc
        a_out[i0:i1] = ac
        g_out[i0:i1] = gc
        v_seed = vc[-1]

    a_arr = np.array(a_out + [a_out[-1]])
    prof = VelocityProfile(
        s=s, v=np.array(v_out), a_hat_x=a_arr, t=np.zeros(len(s)), alpha_used=alpha_arr,
        apexes=tuple(ap for _, ap in found), governor=np.array(g_out, dtype=np.int8),
        alpha_fn=alpha_fn, ds=ds,
    )
    return update_timestamps(prof)


PROFILE_COLUMNS = ("s", "v", "a_hat_x", "t", "alpha")


def write_profile_csv(profile: VelocityProfile, fh) -> None:
    """Plot-ready profile table, 9 significant digits."""
    fh.write(",".join(PROFILE_COLUMNS) + "\n")
    cols = (profile.s, profile.v, profile.a_hat_x, profile.t, profile.alpha_used)
    for row in zip(*cols):
        fh.write(",".join(f"{x:.9g}" for x in row) + "\n")
