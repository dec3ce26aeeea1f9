"""Post-hoc statistics over a run: transition timeline, gain windows, update ratio."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInput, ShapeError

SMOOTHING_WINDOW = 11
THRESHOLD_PERCENTILE = 90.0
PERCENTILE_METHOD = "linear"


@dataclass(frozen=True)
class TransitionTimeline:
    raw_scores: np.ndarray
    smoothed: np.ndarray
    threshold: float
    windows: list[tuple[int, int]]
    metadata: dict = field(default_factory=dict)

    def contains(self, frame: int) -> bool:
        return any(start <= frame <= end for start, end in self.windows)


def update_ratio(prev_state: np.ndarray, new_state: np.ndarray, candidate: np.ndarray, epsilon: float) -> float:
    """Mean applied update norm over mean candidate-update norm."""
    if not prev_state.shape == new_state.shape == candidate.shape:
        raise ShapeError(f"shapes differ: {prev_state.shape}, {new_state.shape}, {candidate.shape}")
    applied = _row_norms(new_state - prev_state).mean()
    proposed = _row_norms(candidate - prev_state).mean()
    denom = proposed + epsilon
    if denom == 0.0:
        # nothing was proposed and nothing moved
        return 0.0
    return float(applied / denom)


def _row_norms(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def trailing_mean(values: np.ndarray, window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Trailing moving average; the window is truncated at the start."""
    values = np.asarray(values, dtype=np.float64)
    csum = np.concatenate(([0.0], np.cumsum(values)))
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def above_threshold_runs(values: np.ndarray, threshold: float, first_frame: int = 1) -> list[tuple[int, int]]:
    """Maximal runs with values strictly above threshold, as inclusive frame ranges."""
    mask = np.asarray(values) > threshold
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [(int(s) + first_frame, int(e) + first_frame) for s, e in zip(starts, ends)]


def _mean_scores(diagnostics_sequence) -> np.ndarray:
    out = []
    for d in diagnostics_sequence:
        out.append(d.mean_drift_score if hasattr(d, "mean_drift_score") else float(d))
    return np.asarray(out, dtype=np.float64)


def transition_timeline(diagnostics_sequence: Sequence) -> TransitionTimeline:
    """MA-11 transition score thresholded at its 90th percentile.

    Accepts StepDiagnostics records or bare per-frame scores. Frames are
    numbered from 1.
    """
    raw = _mean_scores(diagnostics_sequence)
    if raw.size == 0:
        raise InvalidInput("transition_timeline needs at least one frame")
    smoothed = trailing_mean(raw)
    threshold = float(np.percentile(smoothed, THRESHOLD_PERCENTILE, method=PERCENTILE_METHOD))
    return TransitionTimeline(
        raw_scores=raw,
        smoothed=smoothed,
        threshold=threshold,
        windows=above_threshold_runs(smoothed, threshold),
        metadata={
            "smoothing_window": SMOOTHING_WINDOW,
            "percentile": THRESHOLD_PERCENTILE,
            "percentile_method": PERCENTILE_METHOD,
            "comparison": "strict",
        },
    )


def gain_window_summary(diagnostics_sequence: Sequence, window_fraction: float = 0.2) -> dict:
    """Mean of the per-frame mean gain over the first and last fraction of frames."""
    gains = np.asarray(
        [d.mean_gain if hasattr(d, "mean_gain") else float(d) for d in diagnostics_sequence],
        dtype=np.float64,
    )
    if gains.size < 5:
        raise InvalidInput(f"need at least 5 frames, got {gains.size}")
    if not 0 < window_fraction <= 1:
        raise InvalidInput("window_fraction must lie in (0, 1]")
    # 0.2 * 15 is 3.0000000000000004 in binary; don't let that round up
    width = math.ceil(window_fraction * gains.size - 1e-9)
    return {
        "early_mean_gain": float(gains[:width].mean()),
        "late_mean_gain": float(gains[-width:].mean()),
    }
