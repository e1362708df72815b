"""Frenet states in the temporal and spatial domain, plus boundary-value polynomials."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SpatialDomainError(ValueError):
    """The spatial parametrisation needs strictly positive progress speed."""


@dataclass(frozen=True)
class FrenetState:
    s: float
    s_dot: float
    s_ddot: float = 0.0
    n: float = 0.0
    n_dot: float = 0.0
    n_ddot: float = 0.0


@dataclass(frozen=True)
class SpatialState:
    """Derivatives with respect to progress; ``s_ddot_s`` is d(s_dot)/ds [1/s]."""

    s: float
    s_dot: float
    s_ddot_s: float = 0.0
    n: float = 0.0
    n_prime: float = 0.0
    n_pprime: float = 0.0


def to_spatial(state: FrenetState) -> SpatialState:
    sd = state.s_dot
    if not sd > 0.0:
        raise SpatialDomainError(f"s_dot must be > 0 for the spatial domain, got {sd}")
    n_prime = state.n_dot / sd
    return SpatialState(
        s=state.s,
        s_dot=sd,
        s_ddot_s=state.s_ddot / sd,
        n=state.n,
        n_prime=n_prime,
        n_pprime=(state.n_ddot - n_prime * state.s_ddot) / (sd * sd),
    )


def to_temporal(state: SpatialState) -> FrenetState:
    sd = state.s_dot
    if not sd > 0.0:
        raise SpatialDomainError(f"s_dot must be > 0 for the spatial domain, got {sd}")
    s_ddot = state.s_ddot_s * sd
    return FrenetState(
        s=state.s,
        s_dot=sd,
        s_ddot=s_ddot,
        n=state.n,
        n_dot=state.n_prime * sd,
        n_ddot=state.n_pprime * sd * sd + state.n_prime * s_ddot,
    )


# ------------------------------------------------------------------ polynomials
def quintic_coeffs(x0, dx0, ddx0, x1, dx1, ddx1, T: float) -> np.ndarray:
    """Coefficients c0..c5 of the quintic meeting position/velocity/acceleration at 0 and T.

    End conditions may be arrays; the result has shape ``(..., 6)``.
    """
    x1, dx1, ddx1 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x1, dx1, ddx1)))
    c0 = np.full(x1.shape, float(x0))
    c1 = np.full(x1.shape, float(dx0))
    c2 = np.full(x1.shape, 0.5 * float(ddx0))
    T2, T3, T4, T5 = T * T, T ** 3, T ** 4, T ** 5
    A = np.array([[T3, T4, T5], [3 * T2, 4 * T3, 5 * T4], [6 * T, 12 * T2, 20 * T3]])
    rhs = np.stack([x1 - c0 - c1 * T - c2 * T2, dx1 - c1 - 2 * c2 * T, ddx1 - 2 * c2], axis=-1)
    hi = np.linalg.solve(A, rhs.reshape(-1, 3).T).T.reshape(rhs.shape)
    return np.concatenate([c0[..., None], c1[..., None], c2[..., None], hi], axis=-1)


def quartic_coeffs(x0, dx0, ddx0, dx1, ddx1, T: float) -> np.ndarray:
    """Velocity-keeping quartic: start state fixed, end velocity/acceleration fixed, end position free."""
    dx1, ddx1 = np.broadcast_arrays(np.asarray(dx1, dtype=float), np.asarray(ddx1, dtype=float))
    c0 = np.full(dx1.shape, float(x0))
    c1 = np.full(dx1.shape, float(dx0))
    c2 = np.full(dx1.shape, 0.5 * float(ddx0))
    A = np.array([[3 * T * T, 4 * T ** 3], [6 * T, 12 * T * T]])
    rhs = np.stack([dx1 - c1 - 2 * c2 * T, ddx1 - 2 * c2], axis=-1)
    hi = np.linalg.solve(A, rhs.reshape(-1, 2).T).T.reshape(rhs.shape)
    return np.concatenate([c0[..., None], c1[..., None], c2[..., None], hi], axis=-1)


def cubic_coeffs(x0, dx0, x1, dx1, S: float) -> np.ndarray:
    """Hermite cubic with value and slope fixed at both ends of ``[0, S]``."""
    x0, dx0, x1, dx1 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x0, dx0, x1, dx1)))
    c2 = (3.0 * (x1 - x0) - (2.0 * dx0 + dx1) * S) / (S * S)
    c3 = (2.0 * (x0 - x1) + (dx0 + dx1) * S) / S ** 3
    return np.stack([x0, dx0, c2, c3], axis=-1)


def polyval(coeffs: np.ndarray, x, der: int = 0) -> np.ndarray:
    """Evaluate ``sum c_k x^k`` (or its derivative) for coefficient rows against ``x``.

    ``coeffs`` has shape ``(..., K)``; ``x`` broadcasts against the leading
    dimensions with one trailing sample axis, e.g. ``(P, K)`` with ``(M,)``
    gives ``(P, M)``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    x = np.asarray(x, dtype=float)
    c = coeffs
    for _ in range(der):
        c = c[..., 1:] * np.arange(1, c.shape[-1])
    if c.shape[-1] == 0:
        return np.zeros(np.broadcast_shapes(coeffs.shape[:-1] + (1,), x.shape))
    out = np.zeros(np.broadcast_shapes(c.shape[:-1] + (1,), x.shape))
    for k in range(c.shape[-1] - 1, -1, -1):
        out = out * x + c[..., k:k + 1]
    return out
