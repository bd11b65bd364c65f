import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from engage.data import Recording
from engage.dsp import (PipelineConfig, StreamFilter, StreamResampler, StreamState, design_bandpass,
                        filter_offline, filter_streaming, preprocess, resample, resampled_length,
                        segment, zscore)
from engage.errors import DataError


def analytic_bandpass_gain(f, low, high, fs, n_poles_per_edge):
    """Butterworth bandpass magnitude through the bilinear transform, written out by hand."""
    w = np.tan(np.pi * np.asarray(f, float) / fs)
    wl, wh = np.tan(np.pi * low / fs), np.tan(np.pi * high / fs)
    x = (w**2 - wl * wh) / (w * (wh - wl))
    return 1.0 / np.sqrt(1.0 + x ** (2 * n_poles_per_edge))


def direct_form_sos(sos, x):
    """Plain difference-equation reference for cascaded biquads."""
    y = np.array(x, dtype=float)
    for b0, b1, b2, a0, a1, a2 in sos:
        out = np.zeros_like(y)
        x1 = x2 = y1 = y2 = 0.0
        for n, xn in enumerate(y):
            yn = (b0 * xn + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2) / a0
            out[n] = yn
            x2, x1, y2, y1 = x1, xn, y1, yn
        y = out
    return y


@pytest.fixture(scope="module")
def eeg_filter():
    return design_bandpass(0.1, 40.0, 1024.0, order=4)


def test_magnitude_matches_analytic_butterworth(eeg_filter):
    f = np.geomspace(0.01, 500, 400)
    expected = analytic_bandpass_gain(f, 0.1, 40.0, 1024.0, 2)
    np.testing.assert_allclose(eeg_filter.magnitude(f), expected, rtol=1e-6, atol=1e-12)


def test_passband_and_edge_gain(eeg_filter):
    db = 20 * np.log10(eeg_filter.magnitude([10.0, 40.0, 0.1]))
    assert abs(db[0]) <= 1.0
    assert abs(db[1] + 3.0) <= 0.5
    assert abs(db[2] + 3.0) <= 0.5


def test_geometric_center_is_unity_gain(eeg_filter):
    # the analytic peak of a bilinear bandpass sits at the prewarped geometric center
    wc = np.sqrt(np.tan(np.pi * 0.1 / 1024) * np.tan(np.pi * 40 / 1024))
    fc = np.arctan(wc) * 1024 / np.pi
    assert eeg_filter.magnitude(fc)[0] == pytest.approx(1.0, abs=1e-9)


def test_rolloff_is_monotonic(eeg_filter):
    wc = np.sqrt(np.tan(np.pi * 0.1 / 1024) * np.tan(np.pi * 40 / 1024))
    fc = np.arctan(wc) * 1024 / np.pi
    below = eeg_filter.magnitude(np.linspace(0.001, fc, 500))
    above = eeg_filter.magnitude(np.linspace(fc, 511, 500))
    # flat to ~1e-12 near the center, so allow rounding-level wiggle
    assert np.all(np.diff(below) > -1e-10)
    assert np.all(np.diff(above) < 1e-10)


def test_order_means_total_poles(eeg_filter):
    assert eeg_filter.sos.shape == (2, 6)
    assert len(eeg_filter.poles) == 4
    assert np.all(np.abs(eeg_filter.poles) < 1)


@pytest.mark.parametrize("low, high, fs, order", [
    (0.0, 40.0, 1024.0, 4), (40.0, 10.0, 1024.0, 4), (0.1, 600.0, 1024.0, 4),
    (0.1, 40.0, 1024.0, 3), (0.1, 40.0, 1024.0, 0),
])
def test_design_rejects_bad_arguments(low, high, fs, order):
    with pytest.raises(ValueError):
        design_bandpass(low, high, fs, order)


def test_impulse_response_matches_difference_equation(eeg_filter):
    x = np.zeros(3000)
    x[0] = 1.0
    ours = filter_offline(eeg_filter, x, zero_phase=False)
    np.testing.assert_allclose(ours, direct_form_sos(eeg_filter.sos, x), rtol=0, atol=1e-13)


def test_impulse_response_decays(eeg_filter):
    x = np.zeros(40 * 1024)
    x[0] = 1.0
    h = filter_offline(eeg_filter, x, zero_phase=False)
    assert np.max(np.abs(h[30 * 1024:])) < 1e-9


def test_zero_phase_has_no_delay(eeg_filter):
    # the 0.1 Hz edge leaves slow transients at both ends; look at the middle
    t = np.arange(120 * 1024) / 1024
    x = np.sin(2 * np.pi * 8 * t)
    y = filter_offline(eeg_filter, x)
    mid = slice(50 * 1024, 70 * 1024)
    assert np.corrcoef(x[mid], y[mid])[0, 1] > 0.9999


def test_streaming_equals_batch_bit_exact(eeg_filter):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5, 10_000))
    batch = filter_offline(eeg_filter, x, zero_phase=False)
    state = StreamFilter(eeg_filter, 5)
    cuts = np.sort(rng.choice(np.arange(1, 10_000), size=40, replace=False))
    pieces = [filter_streaming(state, c) for c in np.split(x, cuts, axis=1)]
    assert np.array_equal(np.concatenate(pieces, axis=1), batch)


def test_stream_filter_rejects_channel_mismatch(eeg_filter):
    with pytest.raises(ValueError):
        StreamFilter(eeg_filter, 4).process(np.zeros((3, 10)))


def test_non_finite_input_is_rejected(eeg_filter):
    x = np.zeros((2, 100))
    x[1, 7] = np.nan
    with pytest.raises(DataError):
        filter_offline(eeg_filter, x)


def test_resample_trial_length_exact():
    x = np.random.default_rng(0).standard_normal((3, 3072))
    assert resample(x, 1024, 200).shape == (3, 600)
    assert resampled_length(2_150_400, 1024, 200) == 420_000


def test_resample_is_exact_on_linear_signals():
    # linear interpolation reproduces a ramp exactly at every output time j / 200
    n = 3072
    x = 0.25 * np.arange(n) + 3.0
    y = resample(x, 1024, 200)
    t_in = np.arange(600) * 1024 / 200
    np.testing.assert_allclose(y, 0.25 * t_in + 3.0, rtol=0, atol=1e-12)


def test_resample_keeps_every_fifth_sample_at_integer_ratio():
    x = np.random.default_rng(1).standard_normal(1000)
    np.testing.assert_array_equal(resample(x, 1000, 200), x[::5])


def test_resample_rejects_upsampling():
    with pytest.raises(ValueError):
        resample(np.zeros(10), 100, 200)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 900), min_size=1, max_size=12))
def test_stream_resampler_matches_offline(chunks):
    rng = np.random.default_rng(len(chunks))
    n = sum(chunks)
    x = rng.standard_normal((2, n))
    rs = StreamResampler(1024, 200)
    out = np.concatenate([rs.process(c) for c in np.split(x, np.cumsum(chunks)[:-1], axis=1)], axis=1)
    # outputs at t_j = j * 1024/200 input samples, emitted once t_j < n - 1
    t = np.arange(out.shape[1]) * 1024 / 200
    assert out.shape[1] == int(np.sum(np.arange(n) * 5.12 < n - 1))
    ref = np.stack([np.interp(t, np.arange(n), row) for row in x])
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-10)
    assert 0.0 <= rs.phase < 1.0


def test_segment_counts_and_onsets():
    segs = segment(np.zeros((2, 3072 * 5 + 100)), 1024, 3.0)
    assert [onset for onset, _ in segs] == [0.0, 3.0, 6.0, 9.0, 12.0]
    assert all(s.shape == (2, 3072) for _, s in segs)


def test_full_session_segments_into_700_trials():
    # 35 min at 1024 Hz; segment() returns views, so no data is copied
    x = np.broadcast_to(np.float32(0), (1, 35 * 60 * 1024))
    assert len(segment(x, 1024, 3.0)) == 700


def test_zscore_invariants():
    x = np.random.default_rng(2).normal(5, 3, size=(4, 600))
    z = zscore(x)
    np.testing.assert_allclose(z.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=1), 1, atol=1e-12)


def test_zscore_constant_channel_becomes_zero():
    x = np.vstack([np.full(600, 7.0), np.arange(600.0)])
    z = zscore(x)
    assert np.all(z[0] == 0)
    assert z[1].std() == pytest.approx(1.0)


def test_zscore_rejects_non_finite():
    with pytest.raises(DataError):
        zscore(np.array([[1.0, np.inf, 2.0]]))


def _recording(seconds, n_channels=4, fs=1024.0, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_channels, int(seconds * fs))).astype(np.float32)
    return Recording("T", fs, x, ())


def test_preprocess_emits_standardized_trials():
    trials = preprocess(_recording(10.5))
    assert [t.onset_s for t in trials] == [0.0, 3.0, 6.0]
    for t in trials:
        assert t.data.shape == (4, 600) and t.data.dtype == np.float32
        np.testing.assert_allclose(t.data.mean(axis=1), 0, atol=1e-5)
        np.testing.assert_allclose(t.data.std(axis=1), 1, atol=1e-4)


def test_preprocess_short_recording_gives_no_trials():
    assert preprocess(_recording(2.0)) == []


def test_resample_then_zscore_equals_zscore_resample_zscore():
    # linear interpolation commutes with a per-channel affine map
    seg = np.random.default_rng(4).normal(3, 2, size=(3, 3072))
    a = zscore(resample(zscore(seg), 1024, 200))
    b = zscore(resample(seg, 1024, 200))
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_stream_state_matches_causal_offline_pipeline():
    rec = _recording(12.0, n_channels=3, seed=5)
    cfg = PipelineConfig(zero_phase=False)
    offline = preprocess(rec, cfg)
    state = StreamState(3, rec.fs_hz, cfg)
    streamed = []
    for s in range(0, rec.n_samples, 700):
        streamed += state.push(rec.samples[:, s:s + 700])
    assert [t for t, _ in streamed] == [t.onset_s for t in offline]
    for (_, got), want in zip(streamed, offline):
        np.testing.assert_allclose(got, want.data, atol=2e-4)


def test_stream_state_reset_restarts_onsets():
    state = StreamState(2, 1024.0)
    x = np.random.default_rng(0).standard_normal((2, 4000))
    assert len(state.push(x)) == 1
    state.reset()
    assert state.trials_emitted == 0 and state.buffer.shape[1] == 0


def test_pipeline_config_round_trip_and_unknown_keys(tmp_path):
    cfg = PipelineConfig(ica_enabled=True, frontal_channel_indices=(0, 1))
    path = tmp_path / "p.json"
    path.write_text(__import__("json").dumps(cfg.to_dict()))
    assert PipelineConfig.load(path) == cfg
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"lowcut": 1.0})
