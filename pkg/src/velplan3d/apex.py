"""Apex candidates from curvature peaks and admissible cornering speeds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .ggcon import G_EARTH, GGSource, as_alpha_fn
from .track3d import Track3D, TrackSamples

MIN_CURVATURE = 1e-6


@dataclass(frozen=True)
class ApexSearchConfig:
    h_opt: float = 600.0
    l: float = 60.0
    epsilon: float = 0.01
    max_iter: int = 20
    prominence: float = 0.002
    min_separation: float | None = None  # defaults to l

    def __post_init__(self):
        if self.h_opt <= 0 or self.l <= 0 or self.epsilon <= 0 or self.max_iter < 1:
            raise ValueError("apex search needs h_opt, l, epsilon > 0 and max_iter >= 1")


@dataclass(frozen=True)
class Apex:
    s_apex: float
    v_apex: float
    converged: bool


def lateral_limit_hat(ay_max_app, alpha, omega_z, phi, mu, g=G_EARTH):
    """Velocity-frame lateral acceleration available towards the turn centre.

    The apparent limit ``alpha * ay_max`` is shifted by the gravity component
    of banking; the sign follows the turn direction.
    """
    return alpha * ay_max_app - np.sign(omega_z) * g * np.cos(mu) * np.sin(phi)


def admissible_velocities(samples: TrackSamples, gg: GGSource, alpha: np.ndarray,
                          v_guess: np.ndarray, epsilon: float, max_iter: int, g: float = G_EARTH,
                          fallback: str = "guess"):
    """Vectorised fixed-point iteration ``V = sqrt(ay_hat(V) / |Omega_z|)``.

    Returns ``(v, converged)``. Points with ``|Omega_z| < 1e-6`` get ``inf``.
    Non-converged points fall back to the initial guess (``fallback="guess"``)
    or to the smaller of the last two iterates (``fallback="last"``).
    """
    oz = np.abs(samples.omega_z)
    curved = oz >= MIN_CURVATURE
    v = np.where(curved, np.asarray(v_guess, dtype=float), np.inf)
    guess = v.copy()
    prev = v.copy()
    converged = ~curved
    result = np.where(curved, np.nan, np.inf)
    gcc = g * np.cos(samples.mu) * np.cos(samples.phi)
    for _ in range(max_iter):
        active = curved & ~converged
        if not active.any():
            break
        va = v[active]
        gt = samples.omega_y[active] * va * va + gcc[active]
        ay_max = gg.limits_array(va, gt)[2]
        lim = lateral_limit_hat(ay_max, alpha[active], samples.omega_z[active], samples.phi[active],
                                samples.mu[active], g)
        v_new = np.sqrt(np.maximum(lim, 0.0) / oz[active])
        done = np.abs(v_new - va) < epsilon
        idx = np.flatnonzero(active)
        result[idx[done]] = v_new[done]
        converged[idx[done]] = True
        prev[idx] = va
        v[idx] = v_new
    missing = curved & ~converged
    if fallback == "guess":
        result[missing] = guess[missing]
    else:
        result[missing] = np.minimum(v[missing], prev[missing])
    return result, converged


def bracketed_admissible(gg: GGSource, alpha, omega_z, omega_y, phi, mu, v_hi: float,
                         g: float = G_EARTH, n_scan: int = 64, n_bisect: int = 60) -> np.ndarray:
    """Lowest speed in ``[0, v_hi]`` where the lateral demand reaches the limit.

    Used where the fixed-point map is not a contraction, e.g. over a crest
    where the normal load drops with speed and the iterates oscillate. The
    residual ``lateral_limit_hat - v^2 |Omega_z|`` is scanned on a coarse grid
    and the first sign change is bisected. Points that never run out of grip
    get ``v_hi``; points already over the limit at rest get 0.
    """
    al, oz, oy, ph, m = (np.asarray(x, dtype=float) for x in (alpha, omega_z, omega_y, phi, mu))
    gcc = g * np.cos(m) * np.cos(ph)

    def residual(v, rows):
        # v has shape (len(rows), k)
        col = (slice(None), None)
        gt = oy[rows][col] * v * v + gcc[rows][col]
        ay_max = gg.limits_array(v.ravel(), gt.ravel())[2].reshape(v.shape)
        lim = lateral_limit_hat(ay_max, al[rows][col], oz[rows][col], ph[rows][col], m[rows][col], g)
        return lim - v * v * np.abs(oz[rows][col])

    rows = np.arange(len(oz))
    grid = np.linspace(0.0, v_hi, n_scan + 1)
    neg = residual(np.tile(grid, (len(rows), 1)), rows) < 0.0
    first = np.argmax(neg, axis=1)
    out = np.full(len(rows), float(v_hi))
    out[neg.any(axis=1) & (first == 0)] = 0.0
    sub = np.flatnonzero(neg.any(axis=1) & (first > 0))
    lo, hi = grid[first[sub] - 1], grid[first[sub]]
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        ok = residual(mid[:, None], sub)[:, 0] >= 0.0
        lo, hi = np.where(ok, mid, lo), np.where(ok, hi, mid)
    out[sub] = lo
    return out


def admissible_velocity(track: Track3D, s: float, gg: GGSource, alpha: float, v_off: float,
                        config: ApexSearchConfig = ApexSearchConfig(), g: float = G_EARTH,
                        history: list | None = None) -> tuple[float, bool]:
    """Admissible cornering speed at ``s`` starting from ``sqrt(alpha) * v_off``.

    Zero curvature returns ``(inf, True)``: no lateral limit applies.
    If ``history`` is given, every iterate is appended to it.
    """
    smp = track.sample(s)
    omega_z = float(smp.omega_z[0])
    if abs(omega_z) < MIN_CURVATURE:
        return math.inf, True
    phi, mu, oy = float(smp.phi[0]), float(smp.mu[0]), float(smp.omega_y[0])
    v_guess = math.sqrt(alpha) * v_off
    v_old = v_guess
    if history is not None:
        history.append(v_old)
    gcc = g * math.cos(mu) * math.cos(phi)
    for _ in range(config.max_iter):
        gt = oy * v_old * v_old + gcc
        ay_max = gg.limits(v_old, gt)[2]
        lim = float(lateral_limit_hat(ay_max, alpha, omega_z, phi, mu, g))
        v_new = math.sqrt(max(lim, 0.0) / abs(omega_z))
        if history is not None:
            history.append(v_new)
        if abs(v_new - v_old) < config.epsilon:
            return v_new, True
        v_old = v_new
    return v_guess, False


def _candidate_window(track: Track3D, s_start: float, config: ApexSearchConfig):
    half = 0.5 * config.l
    lo, hi = s_start - half, s_start + config.h_opt + half
    if not track.closed:
        lo, hi = max(lo, 0.0), min(hi, track.s_lap)
    k0 = math.ceil(lo / track.ds - 1e-9)
    k1 = math.floor(hi / track.ds + 1e-9)
    return track.ds * np.arange(k0, k1 + 1)


def find_candidates(track: Track3D, s_start: float,
                    config: ApexSearchConfig = ApexSearchConfig()) -> list[float]:
    """Progress values of prominent ``|Omega_z|`` peaks around the horizon.

    The scan extends half a search interval beyond both horizon ends so a
    turn straddling the boundary still produces a candidate. Returned values
    are unwrapped (they may exceed ``s_lap`` on closed tracks).
    """
    grid = _candidate_window(track, s_start, config)
    if grid.size < 3:
        return []
    kappa = np.abs(track.sample(grid).omega_z)
    sep = config.min_separation if config.min_separation is not None else config.l
    peaks, _ = find_peaks(kappa, prominence=config.prominence,
                          distance=max(1, int(round(sep / track.ds))))
    return [float(grid[p]) for p in peaks if kappa[p] >= MIN_CURVATURE]


def apexes_on_grid(s_grid: np.ndarray, v_adm: np.ndarray, converged: np.ndarray,
                   candidates: list[float], l: float, ds: float) -> list[tuple[int, Apex]]:
    """Pick the admissible-speed minimum inside each candidate window.

    Returns ``(grid index, Apex)`` pairs sorted by progress, with apexes
    closer than one grid step merged (lower speed kept).
    """
    found: dict[int, Apex] = {}
    half = 0.5 * l
    for cand in candidates:
        window = np.flatnonzero((s_grid >= cand - half - 1e-9) & (s_grid <= cand + half + 1e-9))
        if window.size == 0:
            continue
        vals = v_adm[window]
        if not np.isfinite(vals).any():
            continue
        k = int(window[int(np.argmin(vals))])
        apex = Apex(float(s_grid[k]), float(v_adm[k]), bool(converged[k]))
        if k not in found or apex.v_apex < found[k].v_apex:
            found[k] = apex
    merged: list[tuple[int, Apex]] = []
    for k in sorted(found):
        if merged and s_grid[k] - s_grid[merged[-1][0]] <= ds + 1e-9:
            if found[k].v_apex < merged[-1][1].v_apex:
                merged[-1] = (k, found[k])
            continue
        merged.append((k, found[k]))
    return merged


def horizon_grid(track: Track3D, s_start: float, h_opt: float, ds: float | None = None) -> np.ndarray:
    """``s_start`` followed by the multiples of ``ds`` up to ``s_start + h_opt``.

    Keeping interior samples on one global grid makes profiles generated
    from nearby start points share their apexes and braking curves exactly.
    The first interval is between half and one and a half steps long; a
    much shorter one would turn tiny speed differences at the start into
    large accelerations.
    """
    ds = track.ds if ds is None else ds
    h = h_opt if track.closed else min(h_opt, track.s_lap - s_start)
    if h < 0:
        raise ValueError("s_start lies beyond the end of an open track")
    k0 = math.floor(s_start / ds + 0.5) + 1
    k1 = math.floor((s_start + h) / ds + 1e-9)
    return np.concatenate(([s_start], ds * np.arange(k0, k1 + 1)))


def locate_apexes(track: Track3D, s_start: float, gg: GGSource, alpha,
                  config: ApexSearchConfig = ApexSearchConfig(), g: float = G_EARTH) -> list[Apex]:
    grid = horizon_grid(track, s_start, config.h_opt)
    smp = track.sample(grid)
    alpha_arr = np.broadcast_to(as_alpha_fn(alpha)(grid), grid.shape).astype(float)
    candidates = find_candidates(track, s_start, config)
    if not candidates:
        return []
    v_adm, conv = admissible_velocities(smp, gg, alpha_arr, np.sqrt(alpha_arr) * smp.v_off,
                                        config.epsilon, config.max_iter, g)
    return [a for _, a in apexes_on_grid(grid, v_adm, conv, candidates, config.l, track.ds)]
