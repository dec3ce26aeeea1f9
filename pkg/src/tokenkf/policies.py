"""Update rules: the adaptive filter and the variants it is compared against.

Each policy maps ``(state, candidate)`` to a new state plus a full
StepDiagnostics record, so traces have one schema whatever the rule.
Policies are named in lower-kebab-case in configs, e.g. ``fixed-beta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np

from .errors import InvalidConfig, MissingInput
from .filter import (
    FilterState,
    StepDiagnostics,
    _check_candidate,
    _fuse_with_norms,
    _ratio,
    init_state,
    initial_diagnostics,
    kalman_step,
    make_diagnostics,
)
from .noise import AdaptiveRParams, AttentionSummary, adaptive_measurement_noise, measure_drift, process_noise


class UpdatePolicy:
    name: str = ""

    def step(self, state: FilterState, candidate, attention: AttentionSummary | None = None):
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def label(self) -> str:
        bits = [f"{k}{v}" for k, v in self.params().items() if not isinstance(v, dict)]
        return "-".join([self.name, *bits])


@dataclass(frozen=True)
class Filt3rFull(UpdatePolicy):
    name = "filt3r-full"

    def step(self, state, candidate, attention=None):
        return kalman_step(state, candidate)


def _fixed_gain_step(state: FilterState, candidate, gain: float):
    """Interpolate with a constant gain and leave the variance untouched."""
    cfg = state.config
    c = _check_candidate(state, candidate)
    drift = measure_drift(c, state.prev_candidate, state.ema_drift, cfg)
    gains = np.full(c.shape[0], gain)
    fused, proposed, applied = _fuse_with_norms(state.fused, c, gains)
    q = process_noise(drift.scores, cfg)
    rho = _ratio(applied, proposed, cfg.stabilizer)
    frame = state.frame_index + 1
    new_state = replace(state, fused=fused, prev_candidate=c, ema_drift=drift.ema_after, frame_index=frame)
    diag = make_diagnostics(gains, q, drift.scores, state.variance, state.variance, rho, frame)
    return new_state, diag


@dataclass(frozen=True)
class Overwrite(UpdatePolicy):
    """Always take the candidate (the r -> 0 limit)."""

    name = "overwrite"

    def step(self, state, candidate, attention=None):
        return _fixed_gain_step(state, candidate, 1.0)


@dataclass(frozen=True)
class FixedBeta(UpdatePolicy):
    beta: float = 0.05
    name = "fixed-beta"

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidConfig("beta", f"must lie in [0, 1], got {self.beta}")

    def params(self):
        return {"beta": self.beta}

    def step(self, state, candidate, attention=None):
        return _fixed_gain_step(state, candidate, float(self.beta))


@dataclass(frozen=True)
class FixedQ(UpdatePolicy):
    """Constant process noise; ``q_bar=None`` means the midpoint of [q_min, q_max]."""

    q_bar: float | None = None
    name = "fixed-q"

    def __post_init__(self):
        if self.q_bar is not None and not self.q_bar > 0:
            raise InvalidConfig("q_bar", f"must be positive, got {self.q_bar}")

    def params(self):
        return {} if self.q_bar is None else {"q_bar": self.q_bar}

    def step(self, state, candidate, attention=None):
        q = state.config.q_midpoint if self.q_bar is None else self.q_bar
        return kalman_step(state, candidate, q=q)


@dataclass(frozen=True)
class ResetP(UpdatePolicy):
    """No variance propagation: every frame predicts from p0."""

    name = "reset-p"

    def step(self, state, candidate, attention=None):
        prior = np.full_like(state.variance, state.config.p0)
        return kalman_step(state, candidate, prior_variance=prior)


@dataclass(frozen=True)
class NoEmaNorm(UpdatePolicy):
    name = "no-ema-norm"

    def step(self, state, candidate, attention=None):
        return kalman_step(state, candidate, normalize_drift=False)


@dataclass(frozen=True)
class AdaptiveR(UpdatePolicy):
    adaptive: AdaptiveRParams = field(default_factory=AdaptiveRParams)
    name = "adaptive-r"

    def params(self):
        return {"adaptive": dict(vars(self.adaptive))}

    def step(self, state, candidate, attention=None):
        if attention is None:
            raise MissingInput("adaptive-r needs an attention summary every frame")
        if not isinstance(attention, AttentionSummary):
            attention = AttentionSummary(attention)
        r, ema_h = adaptive_measurement_noise(attention, state.ema_entropy, self.adaptive)
        return kalman_step(state, candidate, r=r, ema_entropy=ema_h)


@dataclass(frozen=True)
class PeriodicReset(UpdatePolicy):
    """Hard reset to the first-frame state every ``interval`` frames.

    Frames ``interval + 1, 2 * interval + 1, ...`` re-initialise from the
    current candidate: state, variance, candidate buffer and both EMAs are
    dropped. The frame counter keeps counting.
    """

    interval: int = 100
    inner: UpdatePolicy = field(default_factory=Filt3rFull)
    name = "periodic-reset"

    def __post_init__(self):
        if isinstance(self.interval, bool) or not isinstance(self.interval, int) or self.interval < 1:
            raise InvalidConfig("interval", f"must be a positive integer, got {self.interval!r}")
        if isinstance(self.inner, PeriodicReset):
            raise InvalidConfig("inner", "periodic-reset cannot wrap itself")

    def params(self):
        return {"interval": self.interval, "inner": {"kind": self.inner.name, **self.inner.params()}}

    def label(self):
        return f"{self.name}-interval{self.interval}-{self.inner.label()}"

    def step(self, state, candidate, attention=None):
        frame = state.frame_index + 1
        if (frame - 1) % self.interval == 0:
            fresh = replace(init_state(_check_candidate(state, candidate), state.config), frame_index=frame)
            return fresh, initial_diagnostics(fresh)
        return self.inner.step(state, candidate, attention)


def policy_step(
    policy: UpdatePolicy, state: FilterState, candidate, attention: AttentionSummary | None = None
) -> tuple[FilterState, StepDiagnostics]:
    return policy.step(state, candidate, attention)


POLICY_KINDS: dict[str, type[UpdatePolicy]] = {
    cls.name: cls for cls in (Filt3rFull, Overwrite, FixedBeta, FixedQ, ResetP, NoEmaNorm, AdaptiveR, PeriodicReset)
}


def policy_from_dict(spec: Mapping[str, Any]) -> UpdatePolicy:
    """Build a policy from ``{"kind": "fixed-beta", "beta": 0.05}``-style mappings."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in POLICY_KINDS:
        raise InvalidConfig("kind", f"unknown policy {kind!r}; choose from {sorted(POLICY_KINDS)}")
    cls = POLICY_KINDS[kind]
    if cls is PeriodicReset and "inner" in spec:
        spec["inner"] = policy_from_dict(spec["inner"])
    if cls is AdaptiveR and "adaptive" in spec:
        try:
            spec["adaptive"] = AdaptiveRParams(**spec["adaptive"])
        except TypeError as exc:
            raise InvalidConfig("adaptive", str(exc)) from None
    try:
        return cls(**spec)
    except TypeError as exc:
        raise InvalidConfig(kind, str(exc)) from None
