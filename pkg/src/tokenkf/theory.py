"""Closed-form references for the scalar recursion.

Nothing here imports the filter implementation; tests compare the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInput, ShapeError


def static_gain(t: int, p0: float, r: float) -> float:
    """Gain of the t-th update of a static scene with q = 0 and no clamps."""
    if t < 1:
        raise InvalidInput("t must be >= 1")
    return 1.0 / (t + r / p0)


def static_variance(t: int, p0: float, r: float) -> float:
    """Posterior variance after t static updates: precisions add up."""
    if t < 0:
        raise InvalidInput("t must be >= 0")
    return 1.0 / (1.0 / p0 + t / r)


@dataclass(frozen=True)
class SteadyState:
    p_star: float
    k_star: float
    q: float
    r: float

    @property
    def residual(self) -> float:
        p = self.p_star
        return p * p + self.q * p - self.q * self.r


def steady_state(q: float, r: float) -> SteadyState:
    """Positive root of p^2 + q p - q r = 0 and its gain."""
    if q <= 0 or r <= 0:
        raise InvalidInput("q and r must be positive")
    disc = math.sqrt(q * q + 4.0 * q * r)
    # 2qr / (disc + q) is the same root without cancellation when q << r
    p_star = 2.0 * q * r / (disc + q)
    k_star = (p_star + q) / (p_star + q + r)
    return SteadyState(p_star=p_star, k_star=k_star, q=q, r=r)


def steady_gain_closed_form(q: float, r: float) -> float:
    disc = math.sqrt(q * q + 4.0 * q * r)
    return (disc + q) / (disc + q + 2.0 * r)


def gain_floor(q_min: float, r: float) -> float:
    """Steady-state gain when process noise sits at q_min (before any clamp)."""
    return steady_state(q_min, r).k_star


def riccati_map(p: float, q: float, r: float) -> float:
    """One predict + update of the posterior variance: f(p) = r (p + q) / (p + q + r)."""
    return r * (p + q) / (p + q + r)


def riccati_slope(p, q: float, r: float):
    return r * r / (np.asarray(p) + q + r) ** 2


def fixed_point_iterate(q: float, r: float, p0: float = 1.5, steps: int = 500) -> float:
    p = p0
    for _ in range(steps):
        p = riccati_map(p, q, r)
    return p


def unroll_weights(gains: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Weights of the initial state and of each candidate after T smoothing steps.

    Returns ``(w0, w)`` with ``w0`` of shape (N,) and ``w`` of shape (T, N);
    for token i, ``w0[i] + w[:, i].sum()`` is 1.
    """
    if len(gains) == 0:
        raise ShapeError("no gains: T = 0 has no candidate weights")
    b = np.asarray(gains, dtype=np.float64)
    if b.ndim != 2:
        raise ShapeError(f"gains must stack to T x N, got {b.shape}")
    keep = 1.0 - b
    # survival[tau] = prod_{u > tau} (1 - b_u); reverse cumulative product
    tail = np.cumprod(keep[::-1], axis=0)[::-1]
    survival_after = np.vstack([tail[1:], np.ones((1, b.shape[1]))])
    return tail[0], b * survival_after


def unroll_state(initial: np.ndarray, candidates: Sequence[np.ndarray], gains: Sequence[np.ndarray]) -> np.ndarray:
    """State after T steps written as an explicit weighted history."""
    s0 = np.asarray(initial, dtype=np.float64)
    if len(candidates) != len(gains):
        raise ShapeError(f"{len(candidates)} candidates but {len(gains)} gain vectors")
    if len(candidates) == 0:
        return s0.copy()
    c = np.asarray(candidates, dtype=np.float64)
    if c.shape[1:] != s0.shape:
        raise ShapeError(f"candidates {c.shape[1:]} vs initial {s0.shape}")
    w0, w = unroll_weights(gains)
    if w.shape[1] != s0.shape[0]:
        raise ShapeError(f"gains have {w.shape[1]} tokens, state has {s0.shape[0]}")
    return w0[:, None] * s0 + np.einsum("tn,tnd->nd", w, c)


ORACLES = {
    "static_gain": (static_gain, (int, float, float)),
    "static_variance": (static_variance, (int, float, float)),
    "steady_state": (steady_state, (float, float)),
    "gain_floor": (gain_floor, (float, float)),
    "fixed_point": (fixed_point_iterate, (float, float, float, int)),
}
