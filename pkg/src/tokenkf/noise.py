"""Drift measurement and noise adaptation.

Process noise comes from how far each candidate token moved since the
previous frame, normalised by a running EMA of the stream-wide mean drift
and squashed through a sigmoid into ``[q_min, q_max]``. The attention
entropy path produces a per-token measurement noise for the adaptive-r
ablation only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

from .config import FilterConfig
from .errors import InvalidInput, ShapeError


@dataclass(frozen=True)
class DriftReport:
    per_token_drift: np.ndarray
    mean_drift: float
    ema_after: float
    scores: np.ndarray


@dataclass(frozen=True)
class AttentionSummary:
    """Pre-aggregated, nonnegative attention from N state tokens to K image tokens."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ShapeError(f"attention must be N x K, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InvalidInput("attention contains non-finite values")
        if np.any(w < 0):
            raise InvalidInput("attention weights must be nonnegative")
        if np.any(w.sum(axis=1) <= 0):
            raise InvalidInput("every attention row needs at least one positive entry")
        object.__setattr__(self, "weights", w)

    @property
    def n_image_tokens(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class AdaptiveRParams:
    r_min: float = 1.0
    r_scale: float = 1.0
    alpha_r: float = 8.0
    tau_r: float = 1.0
    entropy_ema_rate: float = 0.05
    epsilon: float = 1e-6


def compute_drift(candidate: np.ndarray, prev_candidate: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-token Euclidean distance between consecutive candidates, and its mean."""
    if candidate.shape != prev_candidate.shape:
        raise ShapeError(f"candidate {candidate.shape} vs previous {prev_candidate.shape}")
    diff = candidate - prev_candidate
    drift = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return drift, float(np.add.reduce(drift) / drift.size)


def update_ema_baseline(ema: float | None, mean_drift: float, lambda_delta: float, delta_floor: float) -> float:
    if ema is None:
        return max(mean_drift, delta_floor)
    return max((1.0 - lambda_delta) * ema + lambda_delta * mean_drift, delta_floor)


def drift_scores(per_token_drift: np.ndarray, ema: float, epsilon: float) -> np.ndarray:
    return per_token_drift / (ema + epsilon)


def process_noise(scores: np.ndarray, config: FilterConfig) -> np.ndarray:
    gate = expit(config.alpha_q * (np.asarray(scores, dtype=np.float64) - config.tau_q))
    return config.q_min + (config.q_max - config.q_min) * gate


def measure_drift(
    candidate: np.ndarray, prev_candidate: np.ndarray, ema: float | None, config: FilterConfig
) -> DriftReport:
    """Drift, EMA update and scores for one frame.

    The baseline absorbs the current frame's mean drift before the scores
    are formed.
    """
    drift, mean = compute_drift(candidate, prev_candidate)
    if not np.isfinite(mean):
        # the previous candidate is always finite, so this catches NaN/Inf input
        if not np.isfinite(candidate).all():
            raise InvalidInput("candidate contains non-finite values")
        raise InvalidInput("candidate drift overflows float64")
    ema_after = update_ema_baseline(ema, mean, config.lambda_delta, config.delta_floor)
    scores = drift_scores(drift, ema_after, config.stabilizer)
    return DriftReport(drift, mean, ema_after, scores)


def normalized_entropy(attention: AttentionSummary, epsilon: float = 1e-6) -> np.ndarray:
    """Row entropy of the attention distribution divided by log K (natural log)."""
    w = attention.weights
    probs = w / (w.sum(axis=1, keepdims=True) + epsilon)
    k = w.shape[1]
    return -xlogy(probs, probs).sum(axis=1) / (np.log(k) + epsilon)


def adaptive_measurement_noise(
    attention: AttentionSummary,
    ema_entropy: float | None,
    params: AdaptiveRParams = AdaptiveRParams(),
) -> tuple[np.ndarray, float]:
    """Token-wise measurement noise from normalised attention entropy.

    Returns ``(r, ema_entropy_after)``. The entropy EMA starts from the first
    sequence-mean entropy it sees.
    """
    h = normalized_entropy(attention, params.epsilon)
    mean_h = float(h.mean())
    if ema_entropy is None:
        ema = mean_h
    else:
        ema = (1.0 - params.entropy_ema_rate) * ema_entropy + params.entropy_ema_rate * mean_h
    # K = 1 gives zero entropy everywhere; keep the ratio finite
    ratio = h / max(ema, params.epsilon)
    r = params.r_min + params.r_scale * expit(params.alpha_r * (ratio - params.tau_r))
    return r, ema
