"""Signal conditioning for EEG and speech: filtering, resampling, trial
segmentation, per-trial normalization and magnitude spectrograms.

All functions are pure; they take and return :class:`RawSignal` or plain
arrays with time on axis 0.
"""

from __future__ import annotations

import csv
import wave
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps

EEG_RATE = 64
AUDIO_RATE = 16000
EEG_CUTOFF_HZ = 32.0
EEG_HIGHPASS_HZ = 1.0
AUDIO_CUTOFF_HZ = 8000.0
FILTER_ORDER = 4

STFT_WINDOW = 512  # 32 ms at 16 kHz
STFT_HOP = 320  # 32 ms window with 12 ms overlap
N_FREQ = STFT_WINDOW // 2 + 1

ELECTRODES = ("F7", "F3", "F4", "F8", "T7", "C3", "Cz", "C4", "T8", "Pz")
TRIAL_DURATIONS = (2, 3, 4, 5)


@dataclass(frozen=True)
class RawSignal:
    """Uniformly sampled multichannel signal, samples shaped (n_samples, n_channels)."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValueError(f"samples must be 1-D or 2-D, got shape {x.shape}")
        if x.shape[0] < 1:
            raise ValueError("signal needs at least one sample")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise ValueError("signal contains non-finite samples")
        object.__setattr__(self, "samples", x)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class Spectrogram:
    magnitudes: np.ndarray  # (n_frames, n_bins)
    frame_hop_s: float
    window_s: float


@dataclass(frozen=True)
class TrialRecord:
    """One sample: EEG (T_e, E), two spectrograms (T_s, 257) and the attended index."""

    eeg: np.ndarray
    spec_a: np.ndarray
    spec_b: np.ndarray
    label: int
    duration_s: int = 3

    def __post_init__(self):
        t_e, t_s = trial_dims(self.duration_s)
        if self.eeg.ndim != 2 or self.eeg.shape[0] != t_e:
            raise ValueError(f"EEG must be ({t_e}, E) for {self.duration_s} s, got {self.eeg.shape}")
        for name in ("spec_a", "spec_b"):
            if getattr(self, name).shape != (t_s, N_FREQ):
                raise ValueError(f"{name} must be ({t_s}, {N_FREQ}), got {getattr(self, name).shape}")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


def trial_dims(duration_s: int) -> tuple[int, int]:
    """(EEG samples, spectrogram frames) for a trial duration in seconds."""
    if duration_s not in TRIAL_DURATIONS:
        raise ValueError(f"trial duration must be one of {TRIAL_DURATIONS}, got {duration_s}")
    return EEG_RATE * duration_s, AUDIO_RATE * duration_s // STFT_HOP + 1


def _butter(sig: RawSignal, cutoff: float, btype: str) -> RawSignal:
    nyq = sig.sample_rate / 2
    if not 0 < cutoff < nyq:
        raise ValueError(f"cutoff {cutoff} Hz must lie in (0, {nyq}) Hz for fs={sig.sample_rate}")
    sos = sps.butter(FILTER_ORDER, cutoff, btype=btype, fs=sig.sample_rate, output="sos")
    x = sig.samples.astype(np.float64)
    # sosfiltfilt needs more samples than its default pad length
    padlen = min(3 * (2 * len(sos) + 1), x.shape[0] - 1)
    y = sps.sosfiltfilt(sos, x, axis=0, padlen=padlen)
    return RawSignal(y, sig.sample_rate)


def lowpass_filter(sig: RawSignal, cutoff: float) -> RawSignal:
    """Zero-phase 4th-order Butterworth low-pass (applied forward and backward)."""
    return _butter(sig, cutoff, "lowpass")


def highpass_filter(sig: RawSignal, cutoff: float) -> RawSignal:
    """Zero-phase 4th-order Butterworth high-pass (applied forward and backward)."""
    return _butter(sig, cutoff, "highpass")


def resample(sig: RawSignal, target_rate: int) -> RawSignal:
    """Polyphase rational resampling to ``target_rate``.

    The output has ``round(n * target_rate / sample_rate)`` samples. The
    polyphase FIR carries its own anti-alias low-pass at the target Nyquist;
    edges are padded by linear extrapolation so constants and slow trends
    survive without droop.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate > sig.sample_rate:
        raise ValueError(f"upsampling not supported ({sig.sample_rate} -> {target_rate} Hz)")
    n_out = int(round(sig.n_samples * target_rate / sig.sample_rate))
    if target_rate == sig.sample_rate:
        return sig
    ratio = Fraction(target_rate, sig.sample_rate)
    y = sps.resample_poly(
        sig.samples.astype(np.float64), ratio.numerator, ratio.denominator, axis=0, padtype="line"
    )
    if y.shape[0] >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.repeat(y[-1:], n_out - y.shape[0], axis=0)])
    return RawSignal(y, target_rate)


def segment_trials(sig: RawSignal, trial_len_s: float, hop_s: float = 1.0) -> list[np.ndarray]:
    """Cut overlapping fixed-length windows; returns views into ``sig.samples``."""
    length = int(round(trial_len_s * sig.sample_rate))
    hop = int(round(hop_s * sig.sample_rate))
    if length < 1 or hop < 1:
        raise ValueError("trial length and hop must each cover at least one sample")
    if sig.n_samples < length:
        return []
    count = (sig.n_samples - length) // hop + 1
    return [sig.samples[i * hop : i * hop + length] for i in range(count)]


def normalize_trial(eeg: np.ndarray) -> np.ndarray:
    """Per-column zero mean and unit population variance.

    Columns whose standard deviation is below 1e-8 (dead electrodes) come
    back as zeros.
    """
    x = np.asarray(eeg, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"expected (T>=2, E) matrix, got shape {x.shape}")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    dead = sd < 1e-8
    out = (x - mu) / np.where(dead, 1.0, sd)
    out[:, dead] = 0.0
    return out


def stft_magnitude(x: np.ndarray, n_fft: int = STFT_WINDOW, hop: int = STFT_HOP) -> np.ndarray:
    """|STFT| with a periodic Hann window and reflection-padded centred frames.

    Returns (1 + len(x) // hop, n_fft // 2 + 1).
    """
    x = np.asarray(x, dtype=np.float64)
    pad = n_fft // 2
    xp = np.pad(x, pad, mode="reflect")
    n_frames = 1 + len(x) // hop
    frames = np.lib.stride_tricks.sliding_window_view(xp, n_fft)[::hop][:n_frames]
    window = sps.get_window("hann", n_fft, fftbins=True)
    return np.abs(np.fft.rfft(frames * window, axis=1))


def stft_spectrogram(audio: RawSignal, trial_len_s: int) -> Spectrogram:
    """Magnitude spectrogram of one 16 kHz mono trial, shaped per the trial duration table."""
    if audio.sample_rate != AUDIO_RATE:
        raise ValueError(f"audio must be sampled at {AUDIO_RATE} Hz, got {audio.sample_rate}")
    if audio.n_channels != 1:
        raise ValueError("audio must be mono")
    expected = int(trial_len_s * AUDIO_RATE)
    if audio.n_samples != expected:
        raise ValueError(
            f"a {trial_len_s} s trial needs {expected} samples, got {audio.n_samples}"
        )
    mag = stft_magnitude(audio.samples[:, 0])
    return Spectrogram(mag, STFT_HOP / AUDIO_RATE, STFT_WINDOW / AUDIO_RATE)


# -- full chains ---------------------------------------------------------------


def condition_eeg(raw: RawSignal) -> RawSignal:
    """Low-pass at 32 Hz and bring to 64 Hz (already-64 Hz input passes through)."""
    if raw.sample_rate == EEG_RATE:
        return raw
    return resample(lowpass_filter(raw, EEG_CUTOFF_HZ), EEG_RATE)


def condition_audio(raw: RawSignal) -> RawSignal:
    """Low-pass at 8 kHz and bring to 16 kHz (already-16 kHz input passes through)."""
    if raw.sample_rate == AUDIO_RATE:
        return raw
    if raw.sample_rate < AUDIO_RATE:
        raise ValueError(f"audio rate {raw.sample_rate} Hz is below {AUDIO_RATE} Hz")
    return resample(lowpass_filter(raw, AUDIO_CUTOFF_HZ), AUDIO_RATE)


def eeg_trial(segment: np.ndarray) -> np.ndarray:
    """High-pass one 64 Hz EEG trial at 1 Hz, then z-score each electrode."""
    hp = highpass_filter(RawSignal(segment, EEG_RATE), EEG_HIGHPASS_HZ)
    return normalize_trial(hp.samples)


def preprocess_recording(
    eeg: RawSignal, audio_a: RawSignal, audio_b: RawSignal, duration_s: int, hop_s: float = 1.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Turn one synchronized recording into stacked trial inputs.

    Returns ``(eeg, spec_a, spec_b)`` with shapes (N, 64d, E), (N, 50d+1, 257)
    and (N, 50d+1, 257). The trial count is limited by the shortest stream.
    """
    trial_dims(duration_s)
    eeg64 = condition_eeg(eeg)
    a16, b16 = condition_audio(audio_a), condition_audio(audio_b)
    e_seg = segment_trials(eeg64, duration_s, hop_s)
    a_seg = segment_trials(a16, duration_s, hop_s)
    b_seg = segment_trials(b16, duration_s, hop_s)
    n = min(len(e_seg), len(a_seg), len(b_seg))
    if n == 0:
        raise ValueError(f"recording is shorter than one {duration_s} s trial")
    eeg_out = np.stack([eeg_trial(s) for s in e_seg[:n]]).astype(np.float32)
    spec_a = np.stack([stft_magnitude(s[:, 0]) for s in a_seg[:n]]).astype(np.float32)
    spec_b = np.stack([stft_magnitude(s[:, 0]) for s in b_seg[:n]]).astype(np.float32)
    return eeg_out, spec_a, spec_b


# -- ingestion -----------------------------------------------------------------


def read_eeg_csv(path, sample_rate: int, electrodes=ELECTRODES) -> RawSignal:
    """Read an EEG CSV (header row of electrode names, one row per sample).

    Only ``electrodes`` are kept, in that order; pass ``None`` to keep all.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header))
    if electrodes is None:
        return RawSignal(data, sample_rate)
    missing = [e for e in electrodes if e not in header]
    if missing:
        raise ValueError(f"{path}: missing electrode columns {missing}")
    cols = [header.index(e) for e in electrodes]
    return RawSignal(data[:, cols], sample_rate)


def read_wav(path) -> RawSignal:
    """Read 16-bit PCM mono WAV into floats in [-1, 1)."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return RawSignal(x, rate)


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    x = np.clip(np.asarray(samples, dtype=np.float64).ravel(), -1.0, 1.0 - 1 / 32768)
    pcm = np.round(x * 32768).astype("<i2")
    with wave.open(str(Path(path)), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())
