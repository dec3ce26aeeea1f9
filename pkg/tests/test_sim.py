import math

import numpy as np
import pytest

from tokenkf import (
    Filt3rFull,
    FilterConfig,
    FixedBeta,
    FixedQ,
    InvalidConfig,
    NoEmaNorm,
    Overwrite,
    ResetP,
    StreamScenario,
    Transition,
    evaluate,
    generate,
)
from tokenkf.diagnostics import transition_timeline
from tokenkf.sim import load_trace, load_trace_csv, save_trace, save_trace_csv
from tokenkf.theory import steady_state


def test_noiseless_static_scene():
    tr = generate(StreamScenario(n_tokens=3, dim=2, length=20, measurement_std=0.0, seed=1))
    assert np.array_equal(tr.candidates, np.broadcast_to(tr.true_latents[0], tr.candidates.shape))
    for policy in (Filt3rFull(), Overwrite(), FixedBeta(0.05), ResetP()):
        np.testing.assert_array_equal(evaluate(tr, policy, FilterConfig()).rmse, 0.0)


def test_seed_determinism():
    sc = StreamScenario(n_tokens=4, dim=3, length=50, base_process_std=0.3,
                        transitions=(Transition(10, 2.0),), seed=77, n_image_tokens=3)
    a, b = generate(sc), generate(sc)
    assert np.array_equal(a.true_latents, b.true_latents)
    assert np.array_equal(a.candidates, b.candidates)
    assert np.array_equal(a.attention, b.attention)
    c = generate(StreamScenario(n_tokens=4, dim=3, length=50, seed=78))
    assert not np.array_equal(a.candidates, c.candidates)


def test_consecutive_drift_of_pure_noise():
    # E|v_t - v_{t-1}| = sqrt(2) E|z| = 2 / sqrt(pi) for unit-variance scalar noise
    tr = generate(StreamScenario(n_tokens=1, dim=1, length=100_001, measurement_std=1.0, seed=3))
    drift = np.abs(np.diff(tr.candidates[:, 0, 0]))
    assert drift.mean() == pytest.approx(2 / math.sqrt(math.pi), rel=0.02)


def test_measurement_noise_level():
    tr = generate(StreamScenario(n_tokens=20, dim=5, length=200, base_process_std=0.5, measurement_std=0.7, seed=2))
    resid = tr.candidates - tr.true_latents
    assert resid.std() == pytest.approx(0.7, rel=0.2)


def test_transition_jump_magnitude():
    sc = StreamScenario(n_tokens=5, dim=4, length=30, measurement_std=0.0, transitions=(Transition(12, 3.5),), seed=0)
    tr = generate(sc)
    jumps = np.linalg.norm(tr.true_latents[11] - tr.true_latents[10], axis=1)
    np.testing.assert_allclose(jumps, 3.5, rtol=1e-12)
    assert tr.transition_frames == [12]


def test_transition_score_spikes():
    sc = StreamScenario(n_tokens=16, dim=3, length=100, measurement_std=0.1,
                        transitions=(Transition(50, 10.0),), seed=5)
    scores = np.array([d.mean_drift_score for d in evaluate(generate(sc), Filt3rFull(), FilterConfig()).diagnostics])
    # frames 2..49 precede the jump
    assert scores[49] > np.percentile(scores[1:49], 90)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"transitions": (Transition(1, 2.0),)},
        {"transitions": (Transition(30, 2.0), Transition(20, 2.0))},
        {"transitions": (Transition(500, 2.0),)},
        {"transitions": (Transition(10, 0.0),)},
        {"length": 0},
        {"measurement_std": -1.0},
    ],
)
def test_invalid_scenarios(kwargs):
    base = dict(n_tokens=2, dim=2, length=100)
    base.update(kwargs)
    with pytest.raises(InvalidConfig):
        StreamScenario(**base)


def test_filter_beats_overwrite_on_static_latent():
    tr = generate(StreamScenario(n_tokens=16, dim=4, length=500, seed=11))
    f = evaluate(tr, Filt3rFull(), FilterConfig())
    o = evaluate(tr, Overwrite(), FilterConfig())
    assert f.rmse[-1] < o.rmse[-1]
    assert o.rmse[-1] == pytest.approx(1.0, rel=0.15)
    assert f.cumulative_rmse[-1] < o.cumulative_rmse[-1]


def test_cumulative_rmse_definition():
    tr = generate(StreamScenario(n_tokens=4, dim=2, length=40, seed=0))
    rep = evaluate(tr, FixedBeta(0.2), FilterConfig())
    assert rep.prefix_rmse(10) == pytest.approx(math.sqrt(np.mean(rep.rmse[:10] ** 2)))


def _matched_walk(seed, length=400):
    return generate(StreamScenario(n_tokens=32, dim=4, length=length, base_process_std=math.sqrt(0.26),
                                   measurement_std=1.0, seed=seed))


def test_fixed_q_is_near_the_kalman_bound():
    rep = evaluate(_matched_walk(0), FixedQ(), FilterConfig())
    late = math.sqrt(np.mean(rep.rmse[100:] ** 2))
    assert late == pytest.approx(math.sqrt(steady_state(0.26, 1.0).p_star), rel=0.05)


def test_no_policy_beats_the_constant_gain_oracle():
    k_star = steady_state(0.26, 1.0).k_star
    policies = [Filt3rFull(), FixedQ(), ResetP(), NoEmaNorm(), Overwrite(), FixedBeta(0.05)]
    diffs = {p.label(): [] for p in policies}
    for seed in range(20):
        tr = _matched_walk(seed, length=200)
        oracle = np.mean(evaluate(tr, FixedBeta(k_star), FilterConfig()).rmse[50:] ** 2)
        for p in policies:
            diffs[p.label()].append(np.mean(evaluate(tr, p, FilterConfig()).rmse[50:] ** 2) - oracle)
    for label, d in diffs.items():
        d = np.asarray(d)
        se = d.std(ddof=1) / math.sqrt(d.size)
        assert d.mean() > -2 * se, label


def test_binary_trace_roundtrip(tmp_path):
    tr = generate(StreamScenario(n_tokens=3, dim=2, length=15, transitions=(Transition(5, 1.0),),
                                 seed=2**63 + 5, n_image_tokens=4))
    save_trace(tr, tmp_path / "t.bin")
    raw = (tmp_path / "t.bin").read_bytes()
    assert raw.startswith(b"TOKENKF-TRACE 1\n")
    back = load_trace(tmp_path / "t.bin")
    assert np.array_equal(back.candidates, tr.candidates)
    assert np.array_equal(back.true_latents, tr.true_latents)
    assert np.array_equal(back.attention, tr.attention)
    assert back.seed == tr.seed and back.transition_frames == [5]


def test_csv_trace_roundtrip(tmp_path):
    tr = generate(StreamScenario(n_tokens=2, dim=3, length=6, transitions=(Transition(3, 1.0),), seed=1))
    save_trace_csv(tr, tmp_path / "t.csv")
    back = load_trace_csv(tmp_path / "t.csv")
    assert np.array_equal(back.candidates, tr.candidates)
    assert np.array_equal(back.true_latents, tr.true_latents)
    assert back.transition_frames == [3]
