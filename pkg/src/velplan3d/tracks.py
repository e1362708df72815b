"""Analytic test tracks: straight, circle, banked arc and a two-turn chicane."""

from __future__ import annotations

import math

import numpy as np

from .track3d import Track3D

KINDS = ("straight", "circle", "banked-arc", "chicane")


def quasi_steady_speed(kappa, ay_ref: float = 15.0, v_cap: float = 90.0) -> np.ndarray:
    """Offline speed guess sqrt(ay_ref / |kappa|), capped at ``v_cap``."""
    k = np.abs(np.asarray(kappa, dtype=float))
    with np.errstate(divide="ignore"):
        v = np.sqrt(ay_ref / k)
    return np.minimum(v, v_cap)


def _grid(length: float, ds: float) -> np.ndarray:
    n = max(int(round(length / ds)), 1)
    return np.linspace(0.0, length, n + 1)


def _planar(s: np.ndarray, heading: np.ndarray, refine: int = 10):
    """Integrate a planar spine from its heading on a refined grid (trapezoidal)."""
    fine = np.linspace(s[0], s[-1], (len(s) - 1) * refine + 1)
    th = np.interp(fine, s, heading)
    step = np.diff(fine)
    x = np.concatenate(([0.0], np.cumsum(0.5 * step * (np.cos(th[1:]) + np.cos(th[:-1])))))
    y = np.concatenate(([0.0], np.cumsum(0.5 * step * (np.sin(th[1:]) + np.sin(th[:-1])))))
    return x[::refine], y[::refine]


def _build(s, x, y, theta, kappa, width, v_cap, ay_ref, phi=None, closed=False) -> Track3D:
    n = len(s)
    phi = np.zeros(n) if phi is None else np.broadcast_to(phi, (n,))
    return Track3D(s, x, y, np.zeros(n), phi, np.zeros(n), theta, np.full(n, width), np.full(n, width),
                   quasi_steady_speed(kappa, ay_ref, v_cap), closed=closed)


def straight(length: float = 1000.0, ds: float = 1.0, width: float = 8.0, v_cap: float = 90.0) -> Track3D:
    s = _grid(length, ds)
    z = np.zeros_like(s)
    return Track3D(s, s, z, z, z, z, z, np.full_like(s, width), np.full_like(s, width),
                   np.full_like(s, v_cap))


def circle(radius: float = 100.0, ds: float = 1.0, width: float = 8.0, v_cap: float = 90.0,
           ay_ref: float = 15.0) -> Track3D:
    """Closed counter-clockwise circle; the last point repeats the first exactly."""
    s = _grid(2.0 * math.pi * radius, ds)
    theta = s / radius
    x = radius * np.sin(theta)
    y = radius * (1.0 - np.cos(theta))
    x[-1], y[-1] = x[0], y[0]
    return _build(s, x, y, theta, np.full_like(s, 1.0 / radius), width, v_cap, ay_ref, closed=True)


def banked_arc(radius: float = 100.0, bank_deg: float = 15.0, angle_deg: float = 180.0, ds: float = 1.0,
               width: float = 8.0, v_cap: float = 90.0, ay_ref: float = 15.0) -> Track3D:
    """Constant-radius planar arc with constant banking."""
    s = _grid(radius * math.radians(angle_deg), ds)
    theta = s / radius
    x = radius * np.sin(theta)
    y = radius * (1.0 - np.cos(theta))
    return _build(s, x, y, theta, np.full_like(s, 1.0 / radius), width, v_cap, ay_ref,
                  phi=math.radians(bank_deg))


def _bump(u: np.ndarray, shape: str) -> np.ndarray:
    """Unit curvature bump on ``u`` in [0, 1] with mean 1/2 and its single maximum at 0.5."""
    if shape == "sin2":
        return np.sin(math.pi * u) ** 2
    if shape == "triangle":
        return 1.0 - np.abs(2.0 * u - 1.0)
    raise ValueError(f"unknown turn shape {shape!r}")


def chicane_curvature(s, r1: float, r2: float, lead: float, gap: float, exit: float,
                      angle1_deg: float, angle2_deg: float, shape: str = "triangle") -> np.ndarray:
    """Two curvature bumps of opposite sign: left turn radius r1, then right turn radius r2.

    Each bump peaks at ``1/r`` and spans a length chosen so the heading
    change equals the turn angle, which leaves exactly one curvature maximum
    per turn. ``shape="triangle"`` is a clothoid pair meeting at the apex;
    ``"sin2"`` is a smooth bump with a flat top.
    """
    s = np.asarray(s, dtype=float)
    l1 = 2.0 * math.radians(angle1_deg) * r1
    l2 = 2.0 * math.radians(angle2_deg) * r2
    a1 = lead
    a2 = lead + l1 + gap
    k = np.zeros_like(s)
    in1 = (s >= a1) & (s <= a1 + l1)
    in2 = (s >= a2) & (s <= a2 + l2)
    k[in1] = _bump((s[in1] - a1) / l1, shape) / r1
    k[in2] = -_bump((s[in2] - a2) / l2, shape) / r2
    del exit
    return k


def chicane_length(r1, r2, lead, gap, exit, angle1_deg, angle2_deg) -> float:
    return lead + 2.0 * math.radians(angle1_deg) * r1 + gap + 2.0 * math.radians(angle2_deg) * r2 + exit


def chicane_apex_locations(r1, r2, lead, gap, angle1_deg=60.0, angle2_deg=60.0) -> tuple[float, float]:
    l1 = 2.0 * math.radians(angle1_deg) * r1
    l2 = 2.0 * math.radians(angle2_deg) * r2
    return lead + 0.5 * l1, lead + l1 + gap + 0.5 * l2


def chicane(r1: float = 40.0, r2: float = 55.0, lead: float = 200.0, gap: float = 40.0,
            exit: float = 200.0, angle1_deg: float = 60.0, angle2_deg: float = 60.0, ds: float = 1.0,
            width: float = 8.0, v_cap: float = 90.0, ay_ref: float = 15.0, shape: str = "triangle") -> Track3D:
    length = chicane_length(r1, r2, lead, gap, exit, angle1_deg, angle2_deg)
    s = _grid(length, ds)
    fine = np.linspace(0.0, length, (len(s) - 1) * 20 + 1)
    kf = chicane_curvature(fine, r1, r2, lead, gap, exit, angle1_deg, angle2_deg, shape)
    heading_f = np.concatenate(([0.0], np.cumsum(0.5 * np.diff(fine) * (kf[1:] + kf[:-1]))))
    theta = np.interp(s, fine, heading_f)
    x, y = _planar(s, theta)
    kappa = chicane_curvature(s, r1, r2, lead, gap, exit, angle1_deg, angle2_deg, shape)
    return _build(s, x, y, theta, kappa, width, v_cap, ay_ref)


def generate_synthetic_track(kind: str, **params) -> Track3D:
    """Build one of the analytic tracks by name (see :data:`KINDS`)."""
    builders = {"straight": straight, "circle": circle, "banked-arc": banked_arc, "chicane": chicane}
    if kind not in builders:
        raise ValueError(f"unknown track kind {kind!r}; choose from {', '.join(KINDS)}")
    for key, value in params.items():
        if isinstance(value, (int, float)) and key not in ("bank_deg",) and value <= 0 \
                and key not in ("gap",):
            raise ValueError(f"track parameter {key} must be positive")
    return builders[kind](**params)
