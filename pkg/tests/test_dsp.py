import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aadnet import dsp
from aadnet.dsp import RawSignal


def sine(freq, fs, seconds, amp=1.0):
    t = np.arange(int(round(fs * seconds))) / fs
    return amp * np.sin(2 * np.pi * freq * t)


def interior(x, fs, edge_s=0.2):
    k = int(edge_s * fs)
    return x[k:-k]


# -- RawSignal ------------------------------------------------------------------------


def test_rawsignal_promotes_1d_to_column():
    s = RawSignal(np.arange(5.0), 10)
    assert s.samples.shape == (5, 1)
    assert s.duration_s == 0.5


@pytest.mark.parametrize("bad", [np.array([1.0, np.nan]), np.array([np.inf]), np.zeros((0, 2))])
def test_rawsignal_rejects_bad_samples(bad):
    with pytest.raises(ValueError):
        RawSignal(bad, 100)


def test_rawsignal_rejects_nonpositive_rate():
    with pytest.raises(ValueError):
        RawSignal(np.ones(3), 0)


# -- filters ----------------------------------------------------------------------------


def test_lowpass_keeps_constant():
    out = dsp.lowpass_filter(RawSignal(np.ones(5000), 2500), 32).samples
    assert np.max(np.abs(out - 1.0)) < 1e-6


def test_lowpass_removes_500hz():
    out = dsp.lowpass_filter(RawSignal(sine(500, 2500, 4), 2500), 32).samples[:, 0]
    assert np.max(np.abs(interior(out, 2500))) < 1e-3


def test_lowpass_passes_1hz():
    x = sine(1, 2500, 10)
    out = dsp.lowpass_filter(RawSignal(x, 2500), 32).samples[:, 0]
    ratio = np.max(np.abs(interior(out, 2500, 1.0))) / 1.0
    assert ratio >= 0.99


def test_lowpass_attenuation_matches_butterworth_response():
    # squared (forward-backward) 4th-order Butterworth magnitude at 100 Hz
    from scipy import signal as sps

    sos = sps.butter(4, 32, fs=2500, output="sos")
    _, h = sps.sosfreqz(sos, worN=[100.0], fs=2500)
    expected = np.abs(h[0]) ** 2
    out = dsp.lowpass_filter(RawSignal(sine(100, 2500, 4), 2500), 32).samples[:, 0]
    got = np.max(np.abs(interior(out, 2500, 0.5)))
    assert got == pytest.approx(expected, rel=0.02)


def test_highpass_removes_dc():
    out = dsp.highpass_filter(RawSignal(np.full(2000, 5.0), 64), 1).samples
    assert np.max(np.abs(out)) < 5e-3


def test_highpass_of_zero_is_zero():
    out = dsp.highpass_filter(RawSignal(np.zeros(300), 64), 1).samples
    assert np.all(out == 0)


def test_highpass_passes_16hz_at_64hz():
    t = np.arange(64 * 20) / 64
    # 16 Hz at 64 Hz samples the sine at its zero crossings, use a phase offset
    x = np.sin(2 * np.pi * 16 * t + np.pi / 4)
    out = dsp.highpass_filter(RawSignal(x, 64), 1).samples[:, 0]
    ratio = np.max(np.abs(interior(out, 64, 2.0))) / np.max(np.abs(x))
    assert ratio >= 0.99


@pytest.mark.parametrize("fn", [dsp.lowpass_filter, dsp.highpass_filter])
@pytest.mark.parametrize("cutoff", [32.0, 40.0, 0.0, -1.0])
def test_filters_reject_cutoff_outside_band(fn, cutoff):
    with pytest.raises(ValueError):
        fn(RawSignal(np.ones(500), 64), cutoff)


def test_filter_preserves_shape_multichannel():
    x = np.random.default_rng(0).standard_normal((700, 10))
    assert dsp.lowpass_filter(RawSignal(x, 256), 32).samples.shape == (700, 10)


def test_lowpass_idempotent_on_passband():
    x = sine(2, 256, 10)
    once = dsp.lowpass_filter(RawSignal(x, 256), 32).samples[:, 0]
    twice = dsp.lowpass_filter(RawSignal(once, 256), 32).samples[:, 0]
    a1 = np.max(np.abs(interior(once, 256, 1.0)))
    a2 = np.max(np.abs(interior(twice, 256, 1.0)))
    assert abs(a2 / a1 - 1) < 0.01


def test_highpass_idempotent_on_passband():
    t = np.arange(64 * 20) / 64
    x = np.sin(2 * np.pi * 10 * t + 0.3)
    once = dsp.highpass_filter(RawSignal(x, 64), 1).samples[:, 0]
    twice = dsp.highpass_filter(RawSignal(once, 64), 1).samples[:, 0]
    a1 = np.max(np.abs(interior(once, 64, 2.0)))
    a2 = np.max(np.abs(interior(twice, 64, 2.0)))
    assert abs(a2 / a1 - 1) < 0.01


# -- resampling ---------------------------------------------------------------------------


def test_resample_length_law():
    out = dsp.resample(RawSignal(np.zeros(2500), 2500), 64)
    assert out.n_samples == 64 and out.sample_rate == 64


@pytest.mark.parametrize("n,fs,target", [(2500, 2500, 64), (1001, 2500, 64), (48000, 44100, 16000),
                                          (999, 500, 64), (7, 128, 64)])
def test_resample_length_rounding(n, fs, target):
    out = dsp.resample(RawSignal(np.zeros((n, 3)), fs), target)
    assert out.samples.shape == (int(round(n * target / fs)), 3)


def test_resample_constant():
    out = dsp.resample(RawSignal(np.full(25000, 3.25), 2500), 64).samples
    assert np.max(np.abs(out - 3.25)) < 1e-6


def test_resample_8hz_sine_matches_analytic():
    x = sine(8, 2500, 10)
    out = dsp.resample(RawSignal(x, 2500), 64).samples[:, 0]
    ref = np.sin(2 * np.pi * 8 * np.arange(out.size) / 64)
    assert np.max(np.abs(interior(out - ref, 64, 0.5))) < 1e-2


@pytest.mark.parametrize("target", [0, -64])
def test_resample_rejects_nonpositive_rate(target):
    with pytest.raises(ValueError):
        dsp.resample(RawSignal(np.ones(100), 100), target)


def test_resample_same_rate_is_identity():
    s = RawSignal(np.arange(10.0), 64)
    assert dsp.resample(s, 64) is s


# -- segmentation -------------------------------------------------------------------------


def test_segment_count_300s():
    segs = dsp.segment_trials(RawSignal(np.zeros(300 * 64), 64), 3, 1)
    assert len(segs) == 298
    assert all(s.shape == (192, 1) for s in segs)


def test_segment_exact_length_gives_one():
    assert len(dsp.segment_trials(RawSignal(np.zeros(192), 64), 3)) == 1


def test_segment_too_short_gives_none():
    assert dsp.segment_trials(RawSignal(np.zeros(128), 64), 3) == []


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 600), d=st.sampled_from([2, 3, 4, 5]))
def test_segments_reconstruct_prefix(n, d):
    x = np.arange(n * 2, dtype=float).reshape(n, 2)
    segs = dsp.segment_trials(RawSignal(x, 16), d, 1)
    expected = max(0, (n - 16 * d) // 16 + 1)
    assert len(segs) == expected
    for k, s in enumerate(segs):
        np.testing.assert_array_equal(s, x[16 * k : 16 * k + 16 * d])
    if segs:
        # stitch: first segment, then the last hop of every later one
        stitched = np.concatenate([segs[0]] + [s[-16:] for s in segs[1:]])
        np.testing.assert_array_equal(stitched, x[: stitched.shape[0]])


# -- normalization ------------------------------------------------------------------------


def test_normalize_hand_column():
    out = dsp.normalize_trial(np.array([[1.0], [2.0], [3.0]]))
    np.testing.assert_allclose(out[:, 0], [-1.224744871, 0.0, 1.224744871], atol=1e-4)


def test_normalize_constant_column_is_zero():
    x = np.column_stack([np.full(50, 7.0), np.arange(50.0)])
    out = dsp.normalize_trial(x)
    assert np.all(out[:, 0] == 0)
    assert abs(out[:, 1].std() - 1) < 1e-12


def test_normalize_standard_column_unchanged():
    z = np.array([-1.0, 1.0, -1.0, 1.0])[:, None]
    np.testing.assert_allclose(dsp.normalize_trial(z), z, atol=1e-6)


def test_normalize_rejects_single_row():
    with pytest.raises(ValueError):
        dsp.normalize_trial(np.ones((1, 3)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 60), st.integers(1, 6)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_normalize_moments_and_idempotence(x):
    out = dsp.normalize_trial(x)
    for j in range(x.shape[1]):
        col = out[:, j]
        if np.all(col == 0):
            continue
        assert abs(col.mean()) < 1e-6
        assert abs(col.var() - 1) < 1e-4
    np.testing.assert_allclose(dsp.normalize_trial(out), out, atol=1e-6)


# -- STFT -------------------------------------------------------------------------------


@pytest.mark.parametrize("d,frames", [(2, 101), (3, 151), (4, 201), (5, 251)])
def test_spectrogram_dims(d, frames):
    spec = dsp.stft_spectrogram(RawSignal(np.zeros(16000 * d), 16000), d)
    assert spec.magnitudes.shape == (frames, 257)
    assert dsp.trial_dims(d) == (64 * d, frames)


def test_spectrogram_of_zero_is_zero():
    spec = dsp.stft_spectrogram(RawSignal(np.zeros(48000), 16000), 3)
    assert np.all(spec.magnitudes == 0)


def test_spectrogram_1khz_peak_bin():
    spec = dsp.stft_spectrogram(RawSignal(sine(1000, 16000, 3), 16000), 3).magnitudes
    assert np.all(np.argmax(spec[2:-2], axis=1) == 32)


def test_spectrogram_nonnegative_and_timing():
    x = np.random.default_rng(1).standard_normal(32000)
    spec = dsp.stft_spectrogram(RawSignal(x, 16000), 2)
    assert np.all(spec.magnitudes >= 0)
    assert spec.frame_hop_s == pytest.approx(0.020)
    assert spec.window_s == pytest.approx(0.032)


def test_spectrogram_frame_matches_direct_fft():
    x = np.random.default_rng(2).standard_normal(48000)
    spec = dsp.stft_spectrogram(RawSignal(x, 16000), 3).magnitudes
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(512) / 512)
    k = 40  # interior frame, centred on sample 40 * 320
    frame = x[k * 320 - 256 : k * 320 + 256]
    np.testing.assert_allclose(spec[k], np.abs(np.fft.rfft(frame * w)), rtol=1e-9, atol=1e-9)


def test_spectrogram_rejects_wrong_length_or_rate():
    with pytest.raises(ValueError):
        dsp.stft_spectrogram(RawSignal(np.zeros(47999), 16000), 3)
    with pytest.raises(ValueError):
        dsp.stft_spectrogram(RawSignal(np.zeros(48000), 8000), 3)


def test_trial_dims_rejects_unsupported():
    with pytest.raises(ValueError):
        dsp.trial_dims(6)


# -- full chain and ingestion -----------------------------------------------------------------


def test_preprocess_recording_shapes_and_normalization():
    rng = np.random.default_rng(3)
    eeg = RawSignal(rng.standard_normal((250 * 7, 10)) + 4.0, 250)
    a = RawSignal(rng.standard_normal(16000 * 7) * 0.1, 16000)
    b = RawSignal(rng.standard_normal(16000 * 7) * 0.1, 16000)
    x, sa, sb = dsp.preprocess_recording(eeg, a, b, 3)
    assert x.shape == (5, 192, 10) and sa.shape == (5, 151, 257) and sb.shape == sa.shape
    assert np.max(np.abs(x.mean(axis=1))) < 1e-5
    assert np.max(np.abs(x.var(axis=1) - 1)) < 1e-4


def test_preprocess_audio_resampled_from_44k():
    rng = np.random.default_rng(4)
    eeg = RawSignal(rng.standard_normal((64 * 4, 10)), 64)
    a = RawSignal(rng.standard_normal(44100 * 4) * 0.1, 44100)
    x, sa, sb = dsp.preprocess_recording(eeg, a, a, 2)
    assert x.shape == (3, 128, 10) and sa.shape == (3, 101, 257)


def test_preprocess_too_short_raises():
    s = RawSignal(np.zeros((64, 10)), 64)
    with pytest.raises(ValueError):
        dsp.preprocess_recording(s, RawSignal(np.zeros(16000), 16000), RawSignal(np.zeros(16000), 16000), 3)


def test_trial_record_validates_dims():
    dsp.TrialRecord(np.zeros((192, 10)), np.zeros((151, 257)), np.zeros((151, 257)), 1, 3)
    with pytest.raises(ValueError):
        dsp.TrialRecord(np.zeros((128, 10)), np.zeros((151, 257)), np.zeros((151, 257)), 1, 3)
    with pytest.raises(ValueError):
        dsp.TrialRecord(np.zeros((192, 10)), np.zeros((151, 257)), np.zeros((151, 257)), 2, 3)


def test_read_eeg_csv_selects_electrodes(tmp_path):
    names = list(dsp.ELECTRODES) + ["Oz"]
    data = np.arange(4 * len(names), dtype=float).reshape(4, len(names))
    path = tmp_path / "eeg.csv"
    path.write_text(",".join(reversed(names)) + "\n" + "\n".join(
        ",".join(str(v) for v in row[::-1]) for row in data))
    sig = dsp.read_eeg_csv(path, 64)
    np.testing.assert_array_equal(sig.samples, data[:, :10])
    with pytest.raises(ValueError):
        dsp.read_eeg_csv(path, 64, electrodes=("F7", "X1"))


def test_wav_round_trip(tmp_path):
    x = 0.5 * sine(440, 16000, 0.25)
    dsp.write_wav(tmp_path / "a.wav", x, 16000)
    back = dsp.read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 16000
    assert np.max(np.abs(back.samples[:, 0] - x)) <= 1 / 32768
