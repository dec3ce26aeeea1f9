"""Scalar-per-token Kalman recursion over an N x D latent state.

Every token carries one variance shared by its D coordinates. A frame runs
drift measurement, process-noise gating, variance prediction, gain,
gain-weighted fusion and the Joseph variance update, in that order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import FilterConfig
from .errors import InvalidInput, ShapeError
from .noise import measure_drift, process_noise


def as_token_matrix(values, name: str = "candidate", check_finite: bool = True) -> np.ndarray:
    """Validate and copy into a float64 N x D array."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must be an N x D matrix with N, D >= 1, got shape {arr.shape}")
    if check_finite:
        _require_finite(arr, name)
    return arr


def _require_finite(arr: np.ndarray, name: str = "candidate") -> None:
    if not np.isfinite(arr).all():
        raise InvalidInput(f"{name} contains non-finite values")


@dataclass(frozen=True)
class FilterState:
    fused: np.ndarray
    variance: np.ndarray
    prev_candidate: np.ndarray
    ema_drift: float | None
    frame_index: int
    config: FilterConfig
    # only the adaptive-r policy touches this
    ema_entropy: float | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.fused.shape


@dataclass(frozen=True)
class StepDiagnostics:
    gains: np.ndarray
    process_noise: np.ndarray
    drift_scores: np.ndarray
    predicted_variance: np.ndarray
    posterior_variance: np.ndarray
    mean_gain: float
    mean_posterior_variance: float
    update_ratio: float
    mean_drift_score: float
    frame_index: int = 0
    mean_process_noise: float = 0.0


def _mean(x: np.ndarray) -> float:
    # ndarray.mean has noticeable fixed overhead on tiny per-frame vectors
    return float(np.add.reduce(x) / x.size)


def make_diagnostics(gains, q, scores, p_pred, p_post, rho, frame_index) -> StepDiagnostics:
    return StepDiagnostics(
        gains=gains,
        process_noise=q,
        drift_scores=scores,
        predicted_variance=p_pred,
        posterior_variance=p_post,
        mean_gain=_mean(gains),
        mean_posterior_variance=_mean(p_post),
        update_ratio=float(rho),
        mean_drift_score=_mean(scores),
        frame_index=frame_index,
        mean_process_noise=_mean(q),
    )


def init_state(candidate, config: FilterConfig) -> FilterState:
    """First frame: overwrite with the candidate and fill the variance with p0."""
    if not isinstance(config, FilterConfig):
        raise TypeError("config must be a FilterConfig")
    c = as_token_matrix(candidate)
    return FilterState(
        fused=c,
        variance=np.full(c.shape[0], config.p0),
        prev_candidate=c,
        ema_drift=None,
        frame_index=1,
        config=config,
    )


def initial_diagnostics(state: FilterState) -> StepDiagnostics:
    """Diagnostics row for an overwrite-initialised frame.

    Gain is 1 (the state equals the candidate), drift and process noise are 0
    because no previous candidate exists, and both variances equal p0.
    """
    n = state.variance.shape[0]
    zeros = np.zeros(n)
    return make_diagnostics(np.ones(n), zeros, zeros, state.variance.copy(), state.variance.copy(), 1.0, state.frame_index)


def _check_length(*vectors):
    first = len(vectors[0])
    for v in vectors[1:]:
        if len(v) != first:
            raise ShapeError(f"length mismatch: {[len(x) for x in vectors]}")


def predict_variance(variance: np.ndarray, q: np.ndarray) -> np.ndarray:
    _check_length(variance, q)
    return variance + q


def compute_gain(predicted_variance: np.ndarray, r, k_min: float, k_max: float, epsilon: float) -> np.ndarray:
    """Kalman gain p/(p + r + eps), clamped last. ``r`` may be per-token."""
    raw = predicted_variance / (predicted_variance + r + epsilon)
    return np.clip(raw, k_min, k_max)


def fuse_state(prev: np.ndarray, candidate: np.ndarray, gains: np.ndarray) -> np.ndarray:
    if prev.shape != candidate.shape:
        raise ShapeError(f"state {prev.shape} vs candidate {candidate.shape}")
    _check_length(prev, gains)
    out, _, _ = _fuse_with_norms(prev, candidate, gains)
    return out


def row_norms(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def _fuse_with_norms(prev, candidate, gains):
    """prev + k (candidate - prev), plus the proposed and applied row norms.

    One difference buffer serves the fusion and both norms. Rows with k = 1
    are copied from the candidate so overwrite is exact.
    """
    work = np.subtract(candidate, prev)
    proposed = row_norms(work)
    # ||k d|| = k ||d|| for k >= 0
    applied = gains * proposed
    work *= gains[:, None]
    work += prev
    full = gains == 1.0
    if full.any():
        work[full] = candidate[full]
    return work, proposed, applied


def update_variance_joseph(predicted_variance: np.ndarray, gains: np.ndarray, r) -> np.ndarray:
    _check_length(predicted_variance, gains)
    return (1.0 - gains) ** 2 * predicted_variance + gains**2 * r


def _check_candidate(state: FilterState, candidate, check_finite: bool = True) -> np.ndarray:
    c = as_token_matrix(candidate, check_finite=check_finite)
    if c.shape != state.fused.shape:
        raise ShapeError(f"candidate shape {c.shape} does not match state {state.fused.shape}")
    return c


def kalman_step(
    state: FilterState,
    candidate,
    *,
    q: np.ndarray | float | None = None,
    r: np.ndarray | float | None = None,
    prior_variance: np.ndarray | None = None,
    normalize_drift: bool = True,
    ema_entropy: float | None = None,
) -> tuple[FilterState, StepDiagnostics]:
    """One frame of the recursion with the hooks the ablations need.

    ``q`` overrides the gate output, ``r`` the scalar measurement noise,
    ``prior_variance`` the carried-over variance, and ``normalize_drift=False``
    gates on raw drift instead of the EMA-normalised score. The drift
    pipeline always runs so diagnostics stay comparable.
    """
    cfg = state.config
    # measure_drift rejects non-finite candidates; skip the separate full scan
    c = _check_candidate(state, candidate, check_finite=False)
    drift = measure_drift(c, state.prev_candidate, state.ema_drift, cfg)
    gate_input = drift.scores if normalize_drift else drift.per_token_drift

    n = c.shape[0]
    if q is None and cfg.forced_q is not None:
        q = cfg.forced_q
    if q is None:
        q_vec = process_noise(gate_input, cfg)
    else:
        q_vec = np.array(q, dtype=np.float64) if np.ndim(q) else np.full(n, float(q))
    r_val = cfg.r if r is None else r

    p_prev = state.variance if prior_variance is None else prior_variance
    p_pred = predict_variance(p_prev, q_vec)
    k_lo, k_hi = cfg.gain_bounds
    gains = compute_gain(p_pred, r_val, k_lo, k_hi, cfg.stabilizer)
    fused, proposed, applied = _fuse_with_norms(state.fused, c, gains)
    p_post = update_variance_joseph(p_pred, gains, r_val)
    rho = _ratio(applied, proposed, cfg.stabilizer)

    frame = state.frame_index + 1
    new_state = FilterState(
        fused=fused,
        variance=p_post,
        prev_candidate=c,
        ema_drift=drift.ema_after,
        frame_index=frame,
        config=cfg,
        ema_entropy=state.ema_entropy if ema_entropy is None else ema_entropy,
    )
    return new_state, make_diagnostics(gains, q_vec, drift.scores, p_pred, p_post, rho, frame)


def _ratio(applied: np.ndarray, proposed: np.ndarray, epsilon: float) -> float:
    denom = _mean(proposed) + epsilon
    return 0.0 if denom == 0.0 else _mean(applied) / denom


def step(state: FilterState, candidate) -> tuple[FilterState, StepDiagnostics]:
    """Advance the full adaptive filter by one frame."""
    return kalman_step(state, candidate)
