"""Independent reference computations used by several test modules."""

from __future__ import annotations

import math

import numpy as np

from velplan3d.ggcon import G_EARTH, AnalyticGG, as_alpha_fn
from velplan3d.velprofile import BW, CROSS, FW


def diamond(ax, ay, ax_min, ax_max, ay_max, rho, alpha):
    """Left side of the scaled diamond inequality, written out independently."""
    lim = ax_max if ax > 0 else ax_min
    return (abs(ax) / (alpha * lim)) ** rho + (abs(ay) / (alpha * ay_max)) ** rho


def profile_violations(track, gg, profile, g=G_EARTH):
    """Worst diamond and engine excess over all intervals of a profile.

    A forward-governed interval is judged at its first sample, a backward one
    at its last sample (the sample each pass integrates from); an interval
    where the passes cross must be admissible at one of its two ends.
    """
    alpha = as_alpha_fn(profile.alpha_fn or 1.0)
    smp = track.sample(profile.s)
    worst_d, worst_e = 0.0, 0.0
    for i in range(len(profile.s) - 1):
        a_hat = float(profile.a_hat_x[i])
        gov = int(profile.governor[i])
        ends = {FW: (i,), BW: (i + 1,), CROSS: (i, i + 1)}[gov]
        best_d, best_e = math.inf, math.inf
        for j in ends:
            v = float(profile.v[j])
            phi, mu = float(smp.phi[j]), float(smp.mu[j])
            ax_app = a_hat + g * (-math.sin(mu))
            ay_app = v * v * float(smp.omega_z[j]) + g * math.cos(mu) * math.sin(phi)
            g_tilde = float(smp.omega_y[j]) * v * v + g * math.cos(mu) * math.cos(phi)
            ax_min, ax_max, ay_max, ax_eng, rho = gg.limits(v, g_tilde)
            al = float(np.broadcast_to(alpha(np.array([profile.s[j]])), (1,))[0])
            d = max(0.0, diamond(ax_app, ay_app, ax_min, ax_max, ay_max, rho, al) - 1.0)
            e = max(0.0, ax_app - ax_eng) if gov != BW else 0.0
            best_d, best_e = min(best_d, d), min(best_e, e)
        worst_d, worst_e = max(worst_d, best_d), max(worst_e, best_e)
    return worst_d, worst_e


def lattice_dp(s, omega_z, v_start, v_max, gg: AnalyticGG, alpha: float, dv: float = 0.05):
    """Minimum-time speed profile on a flat track by dynamic programming over an (s, v) lattice.

    A move between neighbouring stations is admissible when its constant
    acceleration fits the diamond at the station it starts from (driving,
    also below the engine limit) or at the station it ends at (braking).

    Each station keeps the speeds that still have an admissible
    continuation, ``[0, B_k]``; ``B_k`` comes from a dense scan of one-step
    braking preimages. The remaining time is tabulated on the ``dv``
    lattice plus the node ``B_k`` and interpolated linearly. The forward
    trace keeps a continuous speed and also tries the exact full-throttle
    move, so lattice rounding does not accumulate along long straights.
    """
    ds = np.diff(s)
    n = len(s)
    ax_min, ax_max, ay_max, rho = gg.ax_min, gg.ax_max, gg.ay_max, gg.rho  # flat: g_tilde = g
    oz = np.abs(np.asarray(omega_z, dtype=float))
    with np.errstate(divide="ignore"):
        cap = np.where(oz > 1e-12, np.sqrt(alpha * ay_max / np.maximum(oz, 1e-300)), np.inf)
    cap = np.minimum(cap, v_max)

    def tire(v, k):
        r = np.minimum(np.asarray(v) ** 2 * oz[k] / (alpha * ay_max), 1.0)
        return (1.0 - r ** rho) ** (1.0 / rho)

    def engine(v):
        v = np.asarray(v, dtype=float)
        with np.errstate(divide="ignore"):
            e = gg.power / (gg.mass * np.maximum(v, 1e-9)) - gg.c_drag * v * v / gg.mass
        return np.minimum(gg.ax_eng_0, np.where(v > 0, e, np.inf))

    def acc_hi(v, k):
        return np.minimum(engine(v), alpha * ax_max * tire(v, k))

    def allowed(v, vn, k):
        a = (vn ** 2 - v ** 2) / (2.0 * ds[k])
        return np.where(a >= 0.0, a <= acc_hi(v, k) + 1e-12, -a <= alpha * ax_min * tire(vn, k + 1) + 1e-12)

    bound = np.empty(n)
    bound[-1] = cap[-1]
    for k in range(n - 2, -1, -1):
        vn = np.linspace(0.0, bound[k + 1], 4001)
        pre = np.sqrt(vn ** 2 + 2.0 * ds[k] * alpha * ax_min * tire(vn, k + 1))
        bound[k] = min(cap[k], float(pre.max()))

    def nodes(k):
        lat = dv * np.arange(int(math.floor(bound[k] / dv - 1e-9)) + 1)
        return np.append(lat, bound[k])

    def step_cost(v, vn, k):
        denom = v + vn
        return np.where(denom > 0, 2.0 * ds[k] / np.maximum(denom, 1e-300), np.inf)

    node_sets = [None] * n
    values = [None] * n
    node_sets[-1] = nodes(n - 1)
    values[-1] = np.zeros(len(node_sets[-1]))

    def best_move(v, k):
        """Cost-to-go and destination from speed(s) ``v`` at station ``k``."""
        v = np.atleast_1d(np.asarray(v, dtype=float))
        cand = node_sets[k + 1]
        full = np.sqrt(np.maximum(v ** 2 + 2.0 * ds[k] * acc_hi(v, k), 0.0))
        full = np.minimum(full, bound[k + 1])
        dest = np.concatenate([np.broadcast_to(cand, (len(v), len(cand))), full[:, None]], axis=1)
        ok = allowed(v[:, None], dest, k)
        jn = np.interp(dest, cand, values[k + 1])
        total = np.where(ok, step_cost(v[:, None], dest, k) + jn, np.inf)
        pick = np.argmin(total, axis=1)
        rows = np.arange(len(v))
        return total[rows, pick], dest[rows, pick]

    for k in range(n - 2, -1, -1):
        node_sets[k] = nodes(k)
        values[k], _ = best_move(node_sets[k], k)
        if not np.all(np.isfinite(values[k])):
            raise ValueError(f"station {k}: a speed below the envelope has no admissible move")

    if v_start > bound[0] + 1e-9:
        raise ValueError("start speed lies above the feasible envelope")
    out = [float(v_start)]
    for k in range(n - 1):
        _, nxt = best_move(out[-1], k)
        out.append(float(nxt[0]))
    return np.array(out)
