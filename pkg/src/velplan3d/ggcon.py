"""Velocity- and load-dependent gg-diagram constraints.

Sign conventions: ``ax_min`` is stored as a positive braking magnitude, the
backward potential is returned negative. ``alpha`` scales the tire-limited
diamond, never the engine limit ``ax_eng``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Callable, Protocol, Sequence, Union

import numpy as np

G_EARTH = 9.81
GG_COLUMNS = ("v", "g_tilde", "ax_min", "ax_max", "ay_max", "ax_eng", "rho")


class GGFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GGVertex:
    ax_min: float
    ax_max: float
    ay_max: float
    ax_eng: float
    rho: float

    def __post_init__(self):
        if not (self.ax_min > 0 and self.ax_max > 0 and self.ay_max > 0):
            raise ValueError("gg limit magnitudes must be positive")
        if not self.rho >= 1.0:
            raise ValueError("gg shape exponent rho must be >= 1")


@dataclass(frozen=True)
class AccelState:
    ax_hat: float
    ay_hat: float
    ax_app: float
    ay_app: float
    az_app: float
    v: float
    chi_hat: float = 0.0
    w_y_hat: float = 0.0

    @property
    def contact(self) -> bool:
        return self.az_app > 0.0


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    diamond_violation: float
    engine_violation: float


class GGModel(Protocol):
    def limits(self, v: float, g_tilde: float) -> tuple[float, float, float, float, float]:
        """(ax_min, ax_max, ay_max, ax_eng, rho) at the given speed and load."""

    def limits_array(self, v: np.ndarray, g_tilde: np.ndarray) -> tuple[np.ndarray, ...]:
        ...


# ------------------------------------------------------------------ transforms
def apparent_accels(ax_hat, ay_hat, v, w_y_hat, phi, mu, chi_hat, g=G_EARTH):
    """Velocity-frame accelerations to apparent (IMU-measured) accelerations."""
    sp, cp = np.sin(phi), np.cos(phi)
    sm, cm = np.sin(mu), np.cos(mu)
    sc, cc = np.sin(chi_hat), np.cos(chi_hat)
    ax_app = ax_hat + g * (cm * sp * sc - sm * cc)
    ay_app = ay_hat + g * (sm * sc + cm * sp * cc)
    az_app = w_y_hat * v + g * (cm * cp)
    return ax_app, ay_app, az_app


def velocity_frame_accel_potential(ax_app_potential, phi, mu, chi_hat, g=G_EARTH):
    """Invert the longitudinal row of the apparent transform."""
    return ax_app_potential - g * (np.cos(mu) * np.sin(phi) * np.sin(chi_hat) - np.sin(mu) * np.cos(chi_hat))


def velocity_frame_lateral(ay_app, phi, mu, chi_hat, g=G_EARTH):
    return ay_app - g * (np.sin(mu) * np.sin(chi_hat) + np.cos(mu) * np.sin(phi) * np.cos(chi_hat))


# ------------------------------------------------------------------ diamond
def _tire_fraction(ay_app: float, ay_max: float, rho: float, alpha: float) -> float:
    """(1 - (|ay|/(alpha*ay_max))^rho)^(1/rho), clamped to 0 past the lateral limit."""
    r = abs(ay_app) / (alpha * ay_max)
    if r >= 1.0:
        return 0.0
    return (1.0 - r ** rho) ** (1.0 / rho)


def forward_potential_scalar(ay_app, ax_max, ay_max, ax_eng, rho, alpha, scale_ax_coefficient=True):
    coef = alpha * ax_max if scale_ax_coefficient else ax_max
    return min(ax_eng, coef * _tire_fraction(ay_app, ay_max, rho, alpha))


def backward_potential_scalar(ay_app, ax_min, ay_max, rho, alpha, scale_ax_coefficient=True):
    coef = alpha * ax_min if scale_ax_coefficient else ax_min
    return -coef * _tire_fraction(ay_app, ay_max, rho, alpha)


def forward_accel_potential(ay_app: float, vertex: GGVertex, alpha: float,
                            scale_ax_coefficient: bool = True) -> float:
    """Largest apparent longitudinal acceleration compatible with ``ay_app``.

    Lateral demand beyond ``alpha * ay_max`` yields zero tire potential
    (still capped by ``ax_eng``).
    """
    return forward_potential_scalar(ay_app, vertex.ax_max, vertex.ay_max, vertex.ax_eng,
                                    vertex.rho, alpha, scale_ax_coefficient)


def backward_decel_potential(ay_app: float, vertex: GGVertex, alpha: float,
                             scale_ax_coefficient: bool = True) -> float:
    return backward_potential_scalar(ay_app, vertex.ax_min, vertex.ay_max, vertex.rho, alpha,
                                     scale_ax_coefficient)


def diamond_value(ax_app, ay_app, ax_min, ax_max, ay_max, rho, alpha, scale_ax_coefficient=True):
    """Left side of the diamond inequality (<= 1 is inside); vectorised."""
    ax_app = np.asarray(ax_app, dtype=float)
    ax_lim = np.where(ax_app > 0.0, ax_max, ax_min)
    ax_scale = alpha * ax_lim if scale_ax_coefficient else ax_lim
    return (np.abs(ax_app) / ax_scale) ** rho + (np.abs(ay_app) / (alpha * ay_max)) ** rho


def is_feasible(ax_app: float, ay_app: float, vertex: GGVertex, alpha: float,
                scale_ax_coefficient: bool = True) -> Feasibility:
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    d = float(diamond_value(ax_app, ay_app, vertex.ax_min, vertex.ax_max, vertex.ay_max,
                            vertex.rho, alpha, scale_ax_coefficient))
    diamond_violation = max(0.0, d - 1.0)
    engine_violation = max(0.0, ax_app - vertex.ax_eng)
    return Feasibility(d <= 1.0 and ax_app <= vertex.ax_eng, diamond_violation, engine_violation)


def normal_load(omega_y, v, phi, mu, g=G_EARTH):
    """Apparent normal acceleration on the reference line (chi_hat = 0)."""
    return omega_y * v * v + g * np.cos(mu) * np.cos(phi)


# ------------------------------------------------------------------ models
class GGMap:
    """Tabulated gg vertices on a rectangular (v, g_tilde) grid.

    Lookups interpolate bilinearly and clamp to the grid boundary.
    """

    def __init__(self, v_grid: Sequence[float], g_grid: Sequence[float], table: np.ndarray):
        self.v_grid = np.array(v_grid, dtype=float)
        self.g_grid = np.array(g_grid, dtype=float)
        table = np.array(table, dtype=float)
        if table.shape != (len(self.v_grid), len(self.g_grid), 5):
            raise GGFormatError("vertex table must have shape (len(v_grid), len(g_grid), 5)")
        for name, grid in (("v", self.v_grid), ("g_tilde", self.g_grid)):
            if grid.size == 0 or np.any(np.diff(grid) <= 0):
                raise GGFormatError(f"{name} grid must be non-empty and strictly ascending")
        if np.any(table[..., :3] <= 0) or np.any(table[..., 4] < 1.0):
            raise GGFormatError("limit magnitudes must be positive and rho >= 1")
        self.table = table
        self._v = self.v_grid.tolist()
        self._g = self.g_grid.tolist()
        self._rows = [[tuple(table[i, j]) for j in range(len(self._g))] for i in range(len(self._v))]

    @classmethod
    def constant(cls, vertex: GGVertex) -> "GGMap":
        row = [vertex.ax_min, vertex.ax_max, vertex.ay_max, vertex.ax_eng, vertex.rho]
        return cls([0.0], [G_EARTH], np.array([[row]]))

    @staticmethod
    def _locate(grid: list[float], x: float) -> tuple[int, int, float]:
        n = len(grid)
        if n == 1 or x <= grid[0]:
            return 0, 0, 0.0
        if x >= grid[-1]:
            return n - 1, n - 1, 0.0
        j = bisect.bisect_right(grid, x) - 1
        return j, j + 1, (x - grid[j]) / (grid[j + 1] - grid[j])

    def limits(self, v: float, g_tilde: float) -> tuple[float, float, float, float, float]:
        i0, i1, fv = self._locate(self._v, v)
        j0, j1, fg = self._locate(self._g, g_tilde)
        a, b = self._rows[i0][j0], self._rows[i0][j1]
        c, d = self._rows[i1][j0], self._rows[i1][j1]
        w00 = (1 - fv) * (1 - fg)
        w01 = (1 - fv) * fg
        w10 = fv * (1 - fg)
        w11 = fv * fg
        return tuple(w00 * a[k] + w01 * b[k] + w10 * c[k] + w11 * d[k] for k in range(5))

    def limits_array(self, v, g_tilde):
        v = np.asarray(v, dtype=float)
        g_tilde = np.asarray(g_tilde, dtype=float)

        def axis(grid, x):
            if len(grid) == 1:
                z = np.zeros(x.shape, dtype=int)
                return z, z, np.zeros(x.shape)
            xc = np.clip(x, grid[0], grid[-1])
            j = np.clip(np.searchsorted(grid, xc, side="right") - 1, 0, len(grid) - 2)
            f = (xc - grid[j]) / (grid[j + 1] - grid[j])
            return j, j + 1, f

        i0, i1, fv = axis(self.v_grid, v)
        j0, j1, fg = axis(self.g_grid, g_tilde)
        t = self.table
        out = ((1 - fv)[..., None] * (1 - fg)[..., None] * t[i0, j0]
               + (1 - fv)[..., None] * fg[..., None] * t[i0, j1]
               + fv[..., None] * (1 - fg)[..., None] * t[i1, j0]
               + fv[..., None] * fg[..., None] * t[i1, j1])
        return tuple(out[..., k] for k in range(5))


@dataclass(frozen=True)
class AnalyticGG:
    """Default closed-form gg model.

    Tire limits scale with ``g_tilde / g`` when ``load_scaling`` is on; the
    engine limit is ``min(ax_eng_0, P/(m v) - c_d v^2 / m)``. Every constant
    here is configuration, not a vehicle claim.
    """

    ax_min: float = 15.0
    ax_max: float = 12.0
    ay_max: float = 15.0
    rho: float = 1.3
    ax_eng_0: float = 10.0
    power: float = 450e3
    mass: float = 800.0
    c_drag: float = 0.8
    load_scaling: bool = True
    g_ref: float = G_EARTH

    def engine_limit(self, v: float) -> float:
        if self.power == math.inf and self.c_drag == 0.0:
            return self.ax_eng_0
        if v <= 0.0:
            return self.ax_eng_0
        return min(self.ax_eng_0, self.power / (self.mass * v) - self.c_drag * v * v / self.mass)

    def limits(self, v: float, g_tilde: float) -> tuple[float, float, float, float, float]:
        k = max(g_tilde, 1e-3) / self.g_ref if self.load_scaling else 1.0
        return (self.ax_min * k, self.ax_max * k, self.ay_max * k, self.engine_limit(v), self.rho)

    def limits_array(self, v, g_tilde):
        v = np.asarray(v, dtype=float)
        g_tilde = np.broadcast_to(np.asarray(g_tilde, dtype=float), v.shape)
        k = np.maximum(g_tilde, 1e-3) / self.g_ref if self.load_scaling else np.ones_like(v)
        if self.power == math.inf and self.c_drag == 0.0:
            eng = np.full(v.shape, self.ax_eng_0)
        else:
            with np.errstate(divide="ignore"):
                eng = np.where(v > 0.0, self.power / (self.mass * np.maximum(v, 1e-12))
                               - self.c_drag * v * v / self.mass, np.inf)
            eng = np.minimum(self.ax_eng_0, eng)
        return (self.ax_min * k, self.ax_max * k, self.ay_max * k, eng, np.full(v.shape, self.rho))


GGSource = Union[GGMap, AnalyticGG]


def vertex_at(gg: GGSource, v: float, g_tilde: float) -> GGVertex:
    return GGVertex(*gg.limits(v, g_tilde))


# ------------------------------------------------------------------ grip
AlphaFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GripZone:
    s_from: float
    s_to: float
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("grip zone alpha must lie in (0, 1]")
        if self.s_to <= self.s_from:
            raise ValueError("grip zone must have s_to > s_from")


class GripMap:
    """Piecewise-constant grip scaling alpha(s); 1.0 outside every zone.

    ``s_lap`` wraps queries on closed tracks. Later zones win on overlap.
    """

    def __init__(self, zones: Sequence[GripZone] = (), s_lap: float | None = None, default: float = 1.0):
        self.zones = tuple(zones)
        self.s_lap = s_lap
        self.default = default

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        q = np.mod(s, self.s_lap) if self.s_lap else s
        out = np.full(q.shape, self.default)
        for z in self.zones:
            out = np.where((q >= z.s_from) & (q < z.s_to), z.alpha, out)
        return out

    @classmethod
    def uniform(cls, alpha: float) -> "GripMap":
        return cls((), default=alpha)


def as_alpha_fn(alpha) -> AlphaFn:
    if callable(alpha):
        return alpha
    return GripMap.uniform(float(alpha))


# ------------------------------------------------------------------ files
def load_gg_map(source: str | Path | IO[str]) -> GGMap:
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return load_gg_map(fh)
    header = None
    rows = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if header is None:
            if tuple(fields) != GG_COLUMNS:
                raise GGFormatError(f"line {lineno}: expected header {','.join(GG_COLUMNS)}")
            header = fields
            continue
        if len(fields) != len(GG_COLUMNS):
            raise GGFormatError(f"line {lineno}: expected {len(GG_COLUMNS)} fields")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise GGFormatError(f"line {lineno}: {exc}") from None
    if not rows:
        raise GGFormatError("gg map has no rows")
    data = np.array(rows)
    v_grid = np.unique(data[:, 0])
    g_grid = np.unique(data[:, 1])
    if len(rows) != len(v_grid) * len(g_grid):
        raise GGFormatError("gg map rows do not form a complete (v, g_tilde) grid")
    table = np.full((len(v_grid), len(g_grid), 5), np.nan)
    for r in data:
        i = int(np.searchsorted(v_grid, r[0]))
        j = int(np.searchsorted(g_grid, r[1]))
        if not np.isnan(table[i, j, 0]):
            raise GGFormatError(f"duplicate gg grid node v={r[0]}, g_tilde={r[1]}")
        table[i, j] = r[2:]
    return GGMap(v_grid, g_grid, table)


def save_gg_map(gg: GGMap, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(GG_COLUMNS) + "\n")
        for i, v in enumerate(gg.v_grid):
            for j, g in enumerate(gg.g_grid):
                fh.write(",".join(repr(float(x)) for x in (v, g, *gg.table[i, j])) + "\n")
