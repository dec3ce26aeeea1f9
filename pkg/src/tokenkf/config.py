"""Filter hyperparameters."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from .errors import InvalidConfig


@dataclass(frozen=True)
class FilterConfig:
    """Hyperparameters of the per-token filter.

    Defaults are the deployed values. ``idealized`` and ``forced_q`` are
    verification switches: ``idealized`` removes the gain clamp and the
    stabilising epsilon so the recursion is the textbook scalar Kalman filter,
    and ``forced_q`` replaces the drift gate by a constant process noise. The
    CLI config parser refuses both.
    """

    p0: float = 1.5
    r: float = 1.0
    q_min: float = 0.02
    q_max: float = 0.5
    alpha_q: float = 20.0
    tau_q: float = 3.0
    lambda_delta: float = 0.05
    delta_floor: float = 0.01
    k_min: float = 0.01
    k_max: float = 0.99
    epsilon: float = 1e-6
    idealized: bool = False
    forced_q: float | None = None

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "idealized":
                if not isinstance(value, bool):
                    raise InvalidConfig(f.name, "must be a boolean")
                continue
            if value is None:
                continue
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InvalidConfig(f.name, f"must be a real number, got {value!r}")
            if not math.isfinite(value):
                raise InvalidConfig(f.name, "must be finite")
        for name in ("p0", "r", "q_min", "q_max", "alpha_q", "tau_q", "delta_floor", "epsilon"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(name, f"must be positive, got {getattr(self, name)!r}")
        if not 0 < self.lambda_delta <= 1:
            raise InvalidConfig("lambda_delta", "must lie in (0, 1]")
        if not 0 <= self.k_min < 1:
            raise InvalidConfig("k_min", "must lie in [0, 1)")
        if not 0 < self.k_max <= 1:
            raise InvalidConfig("k_max", "must lie in (0, 1]")
        if self.q_min > self.q_max:
            raise InvalidConfig("q_min", f"q_min={self.q_min} exceeds q_max={self.q_max}")
        if self.k_min >= self.k_max:
            raise InvalidConfig("k_min", f"k_min={self.k_min} must be below k_max={self.k_max}")
        if self.forced_q is not None and self.forced_q < 0:
            raise InvalidConfig("forced_q", "must be nonnegative")

    @property
    def gain_bounds(self) -> tuple[float, float]:
        return (0.0, 1.0) if self.idealized else (self.k_min, self.k_max)

    @property
    def stabilizer(self) -> float:
        return 0.0 if self.idealized else self.epsilon

    @property
    def q_midpoint(self) -> float:
        return 0.5 * (self.q_min + self.q_max)


def exact_kalman_config(p0: float = 1.5, r: float = 1.0, q: float = 0.0, **kwargs) -> FilterConfig:
    """Config for the unclamped, epsilon-free recursion with constant q."""
    return FilterConfig(p0=p0, r=r, idealized=True, forced_q=q, **kwargs)
