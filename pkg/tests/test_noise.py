import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tokenkf import FilterConfig, InvalidInput, ShapeError, init_state, step
from tokenkf.noise import (
    AdaptiveRParams,
    AttentionSummary,
    adaptive_measurement_noise,
    compute_drift,
    drift_scores,
    normalized_entropy,
    process_noise,
    update_ema_baseline,
)

CFG = FilterConfig()


def test_compute_drift():
    a = np.arange(6.0).reshape(3, 2)
    drift, mean = compute_drift(a, a)
    np.testing.assert_array_equal(drift, 0.0)
    assert mean == 0.0
    drift, _ = compute_drift(np.array([[3.0, 4.0]]), np.zeros((1, 2)))
    assert drift[0] == 5.0
    _, mean = compute_drift(np.array([[1.0], [3.0]]), np.zeros((2, 1)))
    assert mean == 2.0
    with pytest.raises(ShapeError):
        compute_drift(np.zeros((2, 2)), np.zeros((2, 3)))


def test_ema_baseline():
    assert update_ema_baseline(None, 0.5, 0.05, 0.01) == 0.5
    assert update_ema_baseline(None, 0.0, 0.05, 0.01) == 0.01
    assert update_ema_baseline(1.0, 1.0, 0.05, 0.01) == 1.0
    assert update_ema_baseline(0.01, 0.0, 0.05, 0.01) == 0.01


def test_ema_converges_geometrically():
    ema, d, lam = 5.0, 0.7, 0.05
    for t in range(1, 200):
        ema = update_ema_baseline(ema, d, lam, 0.01)
        assert ema - d == pytest.approx((5.0 - d) * (1 - lam) ** t, rel=1e-9)


def test_drift_scores():
    assert drift_scores(np.array([0.5]), 0.5, 1e-6)[0] == pytest.approx(1.0, rel=1e-5)
    assert drift_scores(np.array([0.0]), 3.7, 1e-6)[0] == 0.0
    g = drift_scores(np.array([1.5]), 0.5, 1e-6)
    assert g[0] == pytest.approx(3.0, rel=1e-5)
    assert process_noise(g, CFG)[0] == pytest.approx(0.26, abs=1e-4)


def test_process_noise_anchors():
    q = process_noise(np.array([3.0, 0.0, 6.0]), CFG)
    assert q[0] == 0.26
    assert abs(q[1] - 0.02) <= 1e-15
    assert abs(q[2] - 0.5) <= 1e-15


@given(st.floats(0, 10), st.floats(0, 10))
def test_process_noise_monotone(a, b):
    qa, qb = process_noise(np.array([a, b]), CFG)
    if a < b:
        assert qa <= qb
    assert CFG.q_min <= qa <= CFG.q_max


def test_process_noise_strictly_increasing_in_gate_range():
    g = np.linspace(1.5, 4.5, 301)
    assert np.all(np.diff(process_noise(g, CFG)) > 0)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 100.0))
def test_gate_is_scale_free(seed, c):
    rng = np.random.default_rng(seed)
    frames = rng.standard_normal((12, 5, 3))
    s1 = init_state(frames[0], CFG)
    s2 = init_state(c * frames[0], CFG)
    for f in frames[1:]:
        s1, d1 = step(s1, f)
        s2, d2 = step(s2, c * f)
        # equal up to the epsilon in the score denominator
        np.testing.assert_allclose(d1.drift_scores, d2.drift_scores, rtol=1e-4)
        np.testing.assert_allclose(d1.process_noise, d2.process_noise, rtol=1e-3)


def test_entropy_extremes():
    uniform = AttentionSummary(np.ones((3, 8)))
    np.testing.assert_allclose(normalized_entropy(uniform), 1.0, atol=1e-5)
    onehot = AttentionSummary(np.eye(3, 8))
    np.testing.assert_allclose(normalized_entropy(onehot), 0.0, atol=1e-5)


def test_adaptive_r_midpoint():
    att = AttentionSummary(np.ones((4, 6)))
    r, ema = adaptive_measurement_noise(att, None)
    # first frame initialises the EMA from the mean entropy, so H / ema = 1
    np.testing.assert_allclose(r, 1.5, rtol=1e-12)
    assert ema == pytest.approx(1.0, abs=1e-5)


def test_adaptive_r_ema_update():
    att = AttentionSummary(np.eye(2, 4) + 1e-9)
    h = normalized_entropy(att).mean()
    _, ema = adaptive_measurement_noise(att, 0.8)
    assert ema == pytest.approx(0.95 * 0.8 + 0.05 * h)


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2))
def test_adaptive_r_bounds_and_monotone(mix):
    # row entropy grows with the mixing weight towards uniform
    k = 6
    onehot = np.eye(1, k)[0]
    rows = np.array([(1 - m) * onehot + m * np.ones(k) / k for m in mix])
    params = AdaptiveRParams()
    r, _ = adaptive_measurement_noise(AttentionSummary(rows), 0.6, params)
    assert np.all(r > params.r_min) and np.all(r < params.r_min + params.r_scale)
    h = normalized_entropy(AttentionSummary(rows))
    if h[0] < h[1]:
        assert r[0] <= r[1]


def test_attention_rejects_zero_row():
    with pytest.raises(InvalidInput):
        AttentionSummary(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(InvalidInput):
        AttentionSummary(np.array([[1.0, -0.1]]))
