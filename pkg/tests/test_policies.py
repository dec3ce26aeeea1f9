import numpy as np
import pytest

from tokenkf import (
    AdaptiveR,
    AttentionSummary,
    Filt3rFull,
    FilterConfig,
    FixedBeta,
    FixedQ,
    InvalidConfig,
    MissingInput,
    NoEmaNorm,
    Overwrite,
    PeriodicReset,
    ResetP,
    StreamScenario,
    Transition,
    evaluate,
    generate,
    init_state,
    policy_from_dict,
    policy_step,
)

ALL = [Filt3rFull(), Overwrite(), FixedBeta(0.05), FixedQ(), ResetP(), NoEmaNorm(), PeriodicReset(7)]


@pytest.fixture(scope="module")
def trace():
    return generate(StreamScenario(n_tokens=6, dim=3, length=60, base_process_std=0.2,
                                   transitions=(Transition(30, 8.0),), seed=9, n_image_tokens=5))


def test_overwrite_takes_candidate(rng):
    state = init_state(rng.standard_normal((4, 3)), FilterConfig())
    cand = rng.standard_normal((4, 3))
    new, diag = policy_step(Overwrite(), state, cand)
    assert np.array_equal(new.fused, cand)
    np.testing.assert_array_equal(diag.gains, 1.0)
    np.testing.assert_array_equal(new.variance, state.variance)
    assert diag.update_ratio == pytest.approx(1.0, abs=1e-5)


def test_fixed_beta_arithmetic():
    state = init_state(np.array([[1.0, 1.0]]), FilterConfig())
    new, diag = policy_step(FixedBeta(0.05), state, np.array([[3.0, 1.0]]))
    np.testing.assert_allclose(new.fused, [[1.1, 1.0]], rtol=1e-15)
    np.testing.assert_array_equal(diag.gains, 0.05)


def test_fixed_beta_one_is_overwrite(trace):
    a = evaluate(trace, FixedBeta(1.0), FilterConfig())
    b = evaluate(trace, Overwrite(), FilterConfig())
    assert np.array_equal(a.rmse, b.rmse)
    for x, y in zip(a.diagnostics, b.diagnostics):
        assert np.array_equal(x.gains, y.gains)
        assert np.array_equal(x.process_noise, y.process_noise)


def test_reset_p_gain_is_constant(trace):
    cfg = FilterConfig(forced_q=0.26)
    report = evaluate(trace, ResetP(), cfg)
    gains = np.array([d.gains for d in report.diagnostics[1:51]])
    expected = (1.5 + 0.26) / (1.5 + 0.26 + 1.0 + 1e-6)
    np.testing.assert_allclose(gains, expected, rtol=0, atol=1e-12)


def test_fixed_q_matches_forced_q_with_open_clamps(trace):
    open_clamps = dict(k_min=0.0, k_max=1.0)
    a = evaluate(trace, Filt3rFull(), FilterConfig(forced_q=0.26, **open_clamps))
    b = evaluate(trace, FixedQ(), FilterConfig(**open_clamps))
    for x, y in zip(a.diagnostics, b.diagnostics):
        assert np.array_equal(x.gains, y.gains)


def test_fixed_q_default_midpoint(rng):
    state = init_state(rng.standard_normal((3, 2)), FilterConfig())
    _, diag = policy_step(FixedQ(), state, rng.standard_normal((3, 2)))
    np.testing.assert_array_equal(diag.process_noise, 0.26)
    assert diag.mean_drift_score > 0


def test_no_ema_norm_gates_raw_drift():
    state = init_state(np.zeros((2, 1)), FilterConfig())
    # raw drift 3 hits the sigmoid midpoint; the normalised score would be 1.5
    _, diag = policy_step(NoEmaNorm(), state, np.array([[3.0], [1.0]]))
    assert diag.process_noise[0] == pytest.approx(0.26)
    _, full = policy_step(Filt3rFull(), state, np.array([[3.0], [1.0]]))
    assert full.process_noise[0] < 0.03


def test_adaptive_r_requires_attention(rng):
    state = init_state(rng.standard_normal((3, 2)), FilterConfig())
    with pytest.raises(MissingInput):
        policy_step(AdaptiveR(), state, rng.standard_normal((3, 2)))


def test_adaptive_r_tracks_entropy_ema(rng):
    state = init_state(rng.standard_normal((3, 2)), FilterConfig())
    new, _ = policy_step(AdaptiveR(), state, rng.standard_normal((3, 2)), AttentionSummary(np.ones((3, 4))))
    assert new.ema_entropy == pytest.approx(1.0, abs=1e-5)


def test_periodic_reset_boundaries(trace):
    policy = PeriodicReset(interval=10, inner=FixedQ())
    state = init_state(trace.candidates[0], FilterConfig())
    for t in range(2, trace.candidates.shape[0] + 1):
        state, diag = policy_step(policy, state, trace.candidates[t - 1])
        assert state.frame_index == t
        if t % 10 == 1:
            assert np.array_equal(state.fused, trace.candidates[t - 1])
            np.testing.assert_array_equal(state.variance, 1.5)
            assert state.ema_drift is None
        else:
            assert state.ema_drift is not None


@pytest.mark.parametrize("policy", ALL, ids=lambda p: p.label())
def test_diagnostics_schema_is_uniform(trace, policy):
    report = evaluate(trace, policy, FilterConfig())
    n = trace.shape[1]
    for d in report.diagnostics:
        for arr in (d.gains, d.process_noise, d.drift_scores, d.predicted_variance, d.posterior_variance):
            assert arr.shape == (n,)
        assert np.isfinite([d.mean_gain, d.update_ratio, d.mean_drift_score]).all()


def test_co_excitation_on_transition_frame():
    sc = StreamScenario(n_tokens=32, dim=2, length=120, transitions=(Transition(80, 10.0),), seed=4, n_image_tokens=8)
    tr = generate(sc)
    f = evaluate(tr, Filt3rFull(), FilterConfig()).diagnostics[79].mean_gain
    a = evaluate(tr, AdaptiveR(), FilterConfig()).diagnostics[79].mean_gain
    assert a > f


@pytest.mark.parametrize(
    "spec, expected",
    [
        ({"kind": "filt3r-full"}, Filt3rFull()),
        ({"kind": "fixed-beta", "beta": 0.05}, FixedBeta(0.05)),
        ({"kind": "fixed-q", "q_bar": 0.3}, FixedQ(0.3)),
        ({"kind": "periodic-reset", "interval": 5, "inner": {"kind": "reset-p"}}, PeriodicReset(5, ResetP())),
    ],
)
def test_policy_from_dict(spec, expected):
    assert policy_from_dict(spec) == expected


@pytest.mark.parametrize("spec", [{"kind": "ttt3r"}, {"kind": "fixed-beta", "beta": 2.0},
                                  {"kind": "periodic-reset", "interval": 0}, {"kind": "overwrite", "x": 1}])
def test_policy_from_dict_rejects(spec):
    with pytest.raises(InvalidConfig):
        policy_from_dict(spec)
