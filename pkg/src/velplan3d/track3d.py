"""Three-dimensional track surface built around a race-line spine.

The track is stored as a discretised spine ``c(s)`` carrying zyx Euler angles
(``phi`` banking, ``mu`` inclination, ``theta`` heading), lateral widths and the
offline reference speed. Everything between grid points is linearly
interpolated; angle derivatives come from central differences on the grid.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, NamedTuple

import numpy as np

COLUMNS = ("s", "x", "y", "z", "phi", "mu", "theta", "w_left", "w_right", "v_off")
CLOSURE_TOL = 1e-6


class TrackFormatError(ValueError):
    """Malformed track file (carries the offending line number)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrackInvariantError(ValueError):
    """A parsed track violates a geometric invariant."""


@dataclass(frozen=True)
class TrackPoint:
    s: float
    position: tuple[float, float, float]
    phi: float
    mu: float
    theta: float
    w_left: float
    w_right: float
    v_off: float


@dataclass(frozen=True)
class RoadFramePose:
    origin: np.ndarray
    t: np.ndarray
    n: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class AngularRate:
    """Angular velocity of the road frame per metre of progress [rad/m]."""

    omega_x: float
    omega_y: float
    omega_z: float


class TrackSamples(NamedTuple):
    """Vectorised geometry at a batch of progress values."""

    s: np.ndarray
    phi: np.ndarray
    mu: np.ndarray
    theta: np.ndarray
    omega_x: np.ndarray
    omega_y: np.ndarray
    omega_z: np.ndarray
    domega_z: np.ndarray
    w_left: np.ndarray
    w_right: np.ndarray
    v_off: np.ndarray


def _central_diff(values: np.ndarray, s: np.ndarray, closed: bool) -> np.ndarray:
    """Finite-difference derivative on the stored grid.

    For closed tracks the last point duplicates the first (shifted by any
    accumulated offset, e.g. 2*pi in heading), so the stencil wraps across
    the seam.
    """
    n = len(values)
    d = np.empty(n)
    if n == 1:
        d[0] = 0.0
        return d
    if closed and n > 2:
        s_lap = s[-1] - s[0]
        offset = values[-1] - values[0]
        # predecessor of point 0 is point n-2, one lap earlier
        prev_v = np.concatenate(([values[-2] - offset], values[:-2]))
        prev_s = np.concatenate(([s[-2] - s_lap], s[:-2]))
        next_v = values[1:]
        next_s = s[1:]
        d[:-1] = (next_v - prev_v) / (next_s - prev_s)
        d[-1] = d[0]
        return d
    d[1:-1] = (values[2:] - values[:-2]) / (s[2:] - s[:-2])
    d[0] = (values[1] - values[0]) / (s[1] - s[0])
    d[-1] = (values[-1] - values[-2]) / (s[-1] - s[-2])
    return d


def omega_from_angles(phi, mu, dphi, dmu, dtheta):
    """Road-frame angular rate from Euler angles and their progress derivatives."""
    sp, cp = np.sin(phi), np.cos(phi)
    sm, cm = np.sin(mu), np.cos(mu)
    ox = dphi - sm * dtheta
    oy = cp * dmu + cm * sp * dtheta
    oz = -sp * dmu + cm * cp * dtheta
    return ox, oy, oz


def rotation_columns(phi, mu, theta):
    """Columns (t, n, b) of R = Rz(theta) Ry(mu) Rx(phi), vectorised."""
    phi = np.asarray(phi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    theta = np.asarray(theta, dtype=float)
    sp, cp = np.sin(phi), np.cos(phi)
    sm, cm = np.sin(mu), np.cos(mu)
    st, ct = np.sin(theta), np.cos(theta)
    t = np.stack([ct * cm, st * cm, -sm], axis=-1)
    n = np.stack([ct * sm * sp - st * cp, st * sm * sp + ct * cp, cm * sp], axis=-1)
    b = np.stack([ct * sm * cp + st * sp, st * sm * cp - ct * sp, cm * cp], axis=-1)
    return t, n, b


class Track3D:
    """Immutable discretised spine with road-frame geometry queries."""

    def __init__(
        self,
        s: Iterable[float],
        x: Iterable[float],
        y: Iterable[float],
        z: Iterable[float],
        phi: Iterable[float],
        mu: Iterable[float],
        theta: Iterable[float],
        w_left: Iterable[float],
        w_right: Iterable[float],
        v_off: Iterable[float],
        closed: bool = False,
    ):
        arrays = [np.array(a, dtype=float) for a in (s, x, y, z, phi, mu, theta, w_left, w_right, v_off)]
        n = len(arrays[0])
        if any(len(a) != n for a in arrays):
            raise TrackInvariantError("all track columns must have the same length")
        if n < 2:
            raise TrackInvariantError("a track needs at least two points")
        s_arr = arrays[0] - arrays[0][0]
        self._raw_s = arrays[0]
        self.s = s_arr
        self.x, self.y, self.z = arrays[1], arrays[2], arrays[3]
        self.phi, self.mu = arrays[4], arrays[5]
        self.theta = np.unwrap(arrays[6])
        self.w_left, self.w_right, self.v_off = arrays[7], arrays[8], arrays[9]
        self.closed = bool(closed)
        self._validate()

        self.s_lap = float(self.s[-1])
        self.ds = float(np.median(np.diff(self.s)))
        self.dphi = _central_diff(self.phi, self.s, self.closed)
        self.dmu = _central_diff(self.mu, self.s, self.closed)
        self.dtheta = _central_diff(self.theta, self.s, self.closed)
        ox, oy, oz = omega_from_angles(self.phi, self.mu, self.dphi, self.dmu, self.dtheta)
        self.omega_x, self.omega_y, self.omega_z = ox, oy, oz
        self.domega_z = _central_diff(self.omega_z, self.s, self.closed)
        for arr in self._arrays():
            arr.setflags(write=False)

    def _arrays(self):
        return (self.s, self.x, self.y, self.z, self.phi, self.mu, self.theta, self.w_left,
                self.w_right, self.v_off, self.dphi, self.dmu, self.dtheta, self.omega_x,
                self.omega_y, self.omega_z, self.domega_z)

    def _validate(self) -> None:
        ds = np.diff(self.s)
        bad = np.flatnonzero(ds <= 0.0)
        if bad.size:
            i = int(bad[0]) + 1
            raise TrackInvariantError(f"point {i}: s must be strictly increasing (s={float(self._raw_s[i]):.9g})")
        for name, arr in (("w_left", self.w_left), ("w_right", self.w_right)):
            bad = np.flatnonzero(~(arr >= 0.0))
            if bad.size:
                raise TrackInvariantError(f"point {int(bad[0])}: {name} must be >= 0")
        bad = np.flatnonzero(~(self.v_off > 0.0))
        if bad.size:
            raise TrackInvariantError(f"point {int(bad[0])}: v_off must be > 0")
        for name in ("x", "y", "z", "phi", "mu", "theta"):
            arr = getattr(self, name)
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise TrackInvariantError(f"point {int(bad[0])}: {name} is not finite")
        if self.closed:
            gap = math.dist((self.x[0], self.y[0], self.z[0]), (self.x[-1], self.y[-1], self.z[-1]))
            if gap > CLOSURE_TOL:
                raise TrackInvariantError(
                    f"point {len(self.s) - 1}: closed track does not close (gap {gap:.3g} m)"
                )

    # ------------------------------------------------------------------ access
    def __len__(self) -> int:
        return len(self.s)

    @property
    def points(self) -> list[TrackPoint]:
        return [
            TrackPoint(float(self.s[i]), (float(self.x[i]), float(self.y[i]), float(self.z[i])),
                       float(self.phi[i]), float(self.mu[i]), float(self.theta[i]),
                       float(self.w_left[i]), float(self.w_right[i]), float(self.v_off[i]))
            for i in range(len(self.s))
        ]

    def domain(self, s):
        """Map progress onto the stored domain: wrap closed tracks, clip open ones."""
        s = np.asarray(s, dtype=float)
        if self.closed:
            return np.mod(s, self.s_lap)
        return np.clip(s, 0.0, self.s_lap)

    def interp(self, values: np.ndarray, s) -> np.ndarray:
        return np.interp(self.domain(s), self.s, values)

    def sample(self, s) -> TrackSamples:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        q = self.domain(s)
        it = lambda arr: np.interp(q, self.s, arr)  # noqa: E731
        phi, mu, theta = it(self.phi), it(self.mu), it(self.theta)
        dphi, dmu, dtheta = it(self.dphi), it(self.dmu), it(self.dtheta)
        ox, oy, oz = omega_from_angles(phi, mu, dphi, dmu, dtheta)
        return TrackSamples(s, phi, mu, theta, ox, oy, oz, it(self.domega_z),
                            it(self.w_left), it(self.w_right), it(self.v_off))

    def positions(self, s) -> np.ndarray:
        q = self.domain(s)
        return np.stack([np.interp(q, self.s, self.x), np.interp(q, self.s, self.y),
                         np.interp(q, self.s, self.z)], axis=-1)


def wrap_progress(track: Track3D, s: float) -> float:
    """Wrap ``s`` into ``[0, s_lap)`` on a closed track."""
    if not track.closed:
        raise ValueError("wrap_progress requires a closed track")
    r = math.fmod(s, track.s_lap)
    if r < 0.0:
        r += track.s_lap
    if r >= track.s_lap:  # fmod rounding for tiny negative inputs
        r = 0.0
    return r


def angular_rate(track: Track3D, s: float) -> AngularRate:
    smp = track.sample(s)
    return AngularRate(float(smp.omega_x[0]), float(smp.omega_y[0]), float(smp.omega_z[0]))


def pose_at(track: Track3D, s: float) -> RoadFramePose:
    q = track.domain(s)
    t, n, b = rotation_columns(np.interp(q, track.s, track.phi), np.interp(q, track.s, track.mu),
                               np.interp(q, track.s, track.theta))
    return RoadFramePose(track.positions(s), t, n, b)


def frenet_to_cartesian(track: Track3D, s, n) -> np.ndarray:
    """Point at progress ``s`` displaced by ``n`` along the in-plane normal.

    Works on scalars or equally shaped arrays; returns ``(..., 3)``.
    """
    s = np.asarray(s, dtype=float)
    n = np.asarray(n, dtype=float)
    q = track.domain(s)
    _, nvec, _ = rotation_columns(np.interp(q, track.s, track.phi), np.interp(q, track.s, track.mu),
                                  np.interp(q, track.s, track.theta))
    return track.positions(s) + n[..., None] * nvec


# ---------------------------------------------------------------------- files
def _parse_bool(text: str, line: int) -> bool:
    value = text.strip().lower()
    if value in ("true", "1", "yes"):
        return True
    if value in ("false", "0", "no"):
        return False
    raise TrackFormatError(f"invalid closed flag {text!r}", line)


def load_track(source: str | Path | IO[str]) -> Track3D:
    """Parse a track CSV (path or text stream)."""
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return load_track(fh)

    closed = False
    header: list[str] | None = None
    rows: list[list[float]] = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("closed="):
                closed = _parse_bool(body.split("=", 1)[1], lineno)
            continue
        fields = [f.strip() for f in line.split(",")]
        if header is None:
            if tuple(fields) != COLUMNS:
                raise TrackFormatError(f"expected header {','.join(COLUMNS)}", lineno)
            header = fields
            continue
        if len(fields) != len(COLUMNS):
            raise TrackFormatError(f"expected {len(COLUMNS)} fields, got {len(fields)}", lineno)
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise TrackFormatError(str(exc), lineno) from None
    if header is None:
        raise TrackFormatError("missing header row")
    if len(rows) < 2:
        raise TrackFormatError("a track needs at least two data rows")
    cols = np.array(rows).T
    return Track3D(*cols, closed=closed)


def dump_track(track: Track3D, fh: IO[str]) -> None:
    # repr() keeps the round trip bit-exact
    fh.write(f"# closed={'true' if track.closed else 'false'}\n")
    fh.write(",".join(COLUMNS) + "\n")
    cols = (track.s, track.x, track.y, track.z, track.phi, track.mu, track.theta,
            track.w_left, track.w_right, track.v_off)
    for row in zip(*cols):
        fh.write(",".join(repr(float(v)) for v in row) + "\n")


def save_track(track: Track3D, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        dump_track(track, fh)


def track_to_text(track: Track3D) -> str:
    buf = io.StringIO()
    dump_track(track, buf)
    return buf.getvalue()
