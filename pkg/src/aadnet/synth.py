"""Synthetic two-speaker recordings with TRF-driven EEG.

Each recording has two independent "speakers": broadband noise carriers
amplitude-modulated by slow random envelopes. The EEG is the attended
speaker's Hilbert envelope convolved with a strong temporal response
function plus the ignored speaker's envelope through a weaker one, spread
over the electrodes with fixed gains and buried in white noise.

Trials are cut from the continuous recordings with a one-second hop, so
neighbouring trials overlap exactly as real ones do and the split logic is
exercised for real. The label of a trial is which of the two spectrogram
slots holds the attended speaker; the slot order is drawn per trial so the
audio alone carries no information about the label.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .container import TrialWriter, write_manifest
from .dsp import (
    AUDIO_RATE,
    EEG_HIGHPASS_HZ,
    EEG_RATE,
    N_FREQ,
    RawSignal,
    condition_audio,
    eeg_trial,
    lowpass_filter,
    read_wav,
    resample,
    segment_trials,
    stft_magnitude,
    trial_dims,
)
from .splits import split_dataset

TRF_TAPS = 33  # 0..500 ms on the 64 Hz grid
TRF_LAGS_S = (0.1, 0.2)
ATTENDED_AMPS = (1.0, -1.0)
IGNORED_AMPS = (0.4, -0.4)

# front-to-back: frontal row, temporal/central row, parietal
DEFAULT_GAINS = (1.0, 1.0, 1.0, 1.0, 0.8, 0.8, 0.8, 0.8, 0.8, 0.6)


@dataclass(frozen=True)
class TrfKernel:
    taps: np.ndarray
    role: str
    rate: int = EEG_RATE

    @property
    def lags_s(self) -> np.ndarray:
        return np.arange(len(self.taps)) / self.rate


@dataclass(frozen=True)
class SynthConfig:
    n_trials: int = 1000
    duration_s: int = 3
    snr_db: float = -3.0
    gains: tuple = DEFAULT_GAINS
    seed: int = 0
    carrier: str = "noise"  # or "wav"
    wav_paths: tuple = ()
    n_recordings: int = 10
    attended_amps: tuple = ATTENDED_AMPS
    ignored_amps: tuple = IGNORED_AMPS
    trf_width_ms: float = 30.0
    modulation_hz: float = 8.0
    modulation_depth: float = 1.0

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        trial_dims(self.duration_s)
        if self.carrier not in ("noise", "wav"):
            raise ValueError(f"carrier must be 'noise' or 'wav', got {self.carrier!r}")
        if self.carrier == "wav" and len(self.wav_paths) != 2:
            raise ValueError("the wav carrier needs exactly two files, one per speaker")
        if self.n_recordings < 1:
            raise ValueError("n_recordings must be >= 1")
        if np.any(np.asarray(self.gains, dtype=float) == 0):
            raise ValueError("electrode gains must be nonzero")


# -- envelope and TRF ------------------------------------------------------------


def hilbert_envelope(audio: RawSignal, rate: int = EEG_RATE) -> RawSignal:
    """|analytic signal|, low-passed at rate/2 and resampled to ``rate`` (mono)."""
    if audio.n_channels != 1:
        raise ValueError("hilbert_envelope expects mono audio")
    env = np.abs(sps.hilbert(audio.samples[:, 0]))
    sig = RawSignal(env, audio.sample_rate)
    if audio.sample_rate > rate:
        sig = resample(lowpass_filter(sig, rate / 2), rate)
    return RawSignal(np.maximum(sig.samples, 0.0), sig.sample_rate)


def make_trf(role: str = "attended", peak_amp_100: float | None = None,
             peak_amp_200: float | None = None, width_ms: float = 30.0,
             rate: int = EEG_RATE, n_taps: int = TRF_TAPS) -> TrfKernel:
    """Two Gaussian bumps at 100 and 200 ms lags (sigma = ``width_ms``).

    Amplitudes default to (1, -1) for the attended role and (0.4, -0.4) for
    the ignored one.
    """
    defaults = {"attended": ATTENDED_AMPS, "ignored": IGNORED_AMPS}
    if role not in defaults:
        raise ValueError(f"role must be 'attended' or 'ignored', got {role!r}")
    a1 = defaults[role][0] if peak_amp_100 is None else peak_amp_100
    a2 = defaults[role][1] if peak_amp_200 is None else peak_amp_200
    if not (np.isfinite(a1) and np.isfinite(a2)):
        raise ValueError("TRF amplitudes must be finite")
    t = np.arange(n_taps) / rate
    sigma = width_ms / 1000.0
    taps = sum(a * np.exp(-0.5 * ((t - lag) / sigma) ** 2) for a, lag in zip((a1, a2), TRF_LAGS_S))
    return TrfKernel(np.asarray(taps, dtype=np.float64), role, rate)


def synthesize_eeg(env_a, env_b, label: int, trf_att: TrfKernel, trf_ign: TrfKernel,
                   cfg: SynthConfig | None = None, rng=None,
                   snr_db: float | None = None, gains=None) -> np.ndarray:
    """EEG (T, E) from two 64 Hz envelopes.

    source = env_att * trf_att + env_ign * trf_ign (linear convolution,
    truncated to T), where ``label`` 0 means ``env_a`` is attended. Each
    electrode gets gain_e * source plus white noise scaled to the realized
    signal power so the per-electrode SNR is exactly ``snr_db``
    (``inf`` disables the noise).
    """
    cfg = cfg or SynthConfig()
    snr_db = cfg.snr_db if snr_db is None else snr_db
    gains = np.asarray(cfg.gains if gains is None else gains, dtype=np.float64)
    a = np.asarray(getattr(env_a, "samples", env_a), dtype=np.float64).reshape(-1)
    b = np.asarray(getattr(env_b, "samples", env_b), dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"envelope lengths differ: {a.shape[0]} vs {b.shape[0]}")
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    att, ign = (a, b) if label == 0 else (b, a)
    n = a.shape[0]
    source = np.convolve(att, trf_att.taps)[:n] + np.convolve(ign, trf_ign.taps)[:n]
    clean = source[:, None] * gains[None, :]
    if np.isposinf(snr_db):
        return clean
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    noise = rng.standard_normal(clean.shape)
    p_sig = np.mean(clean**2, axis=0)
    p_noise = np.mean(noise**2, axis=0)
    scale = np.sqrt(p_sig / (10.0 ** (snr_db / 10.0)) / p_noise)
    return clean + noise * scale[None, :]


# -- carriers ----------------------------------------------------------------------


def modulated_noise(n_samples: int, rng, rate: int = AUDIO_RATE, mod_hz: float = 8.0,
                    depth: float = 1.0) -> np.ndarray:
    """Speech-band noise times a log-normal envelope band-limited below ``mod_hz``."""
    sos = sps.butter(4, (100.0, 4000.0), btype="bandpass", fs=rate, output="sos")
    carrier = sps.sosfiltfilt(sos, rng.standard_normal(n_samples))
    env_rate = 4 * EEG_RATE
    n_env = int(np.ceil(n_samples * env_rate / rate)) + 2
    lp = sps.butter(4, mod_hz, fs=env_rate, output="sos")
    z = sps.sosfiltfilt(lp, rng.standard_normal(n_env))
    z /= z.std() + 1e-12
    t_env = np.arange(n_env) / env_rate
    env = np.exp(depth * np.interp(np.arange(n_samples) / rate, t_env, z))
    x = carrier * env
    return 0.1 * x / (np.sqrt(np.mean(x**2)) + 1e-12)


def _wav_streams(cfg: SynthConfig, lengths_s) -> list[np.ndarray]:
    """Consecutive excerpts of the two speaker files, one pair per recording."""
    need = float(sum(lengths_s))
    out = []
    for path in cfg.wav_paths:
        audio = condition_audio(read_wav(path)).samples[:, 0]
        have = audio.shape[0] / AUDIO_RATE
        if have < need:
            raise ValueError(f"{path}: {have:.1f} s of audio, the dataset needs {need:.1f} s")
        out.append(audio)
    return out


# -- dataset -------------------------------------------------------------------------


def _trials_per_recording(n: int, r: int) -> list[int]:
    r = min(r, n)
    return [n // r + (1 if i < n % r else 0) for i in range(r)]


def balanced_labels(n: int, rng) -> np.ndarray:
    labels = np.zeros(n, dtype=np.int64)
    labels[n - n // 2:] = 1
    return rng.permutation(labels)


def synth_recording(cfg: SynthConfig, rec: int, n_trials: int, audio=None):
    """One continuous recording: (eeg64 [N, E], audio_1, audio_2), speaker 1 attended."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, rec]))
    length_s = n_trials + cfg.duration_s - 1
    n_audio = length_s * AUDIO_RATE
    if audio is None:
        s1 = modulated_noise(n_audio, rng, mod_hz=cfg.modulation_hz, depth=cfg.modulation_depth)
        s2 = modulated_noise(n_audio, rng, mod_hz=cfg.modulation_hz, depth=cfg.modulation_depth)
    else:
        s1, s2 = audio
    env1 = hilbert_envelope(RawSignal(s1, AUDIO_RATE))
    env2 = hilbert_envelope(RawSignal(s2, AUDIO_RATE))
    trf_att = make_trf("attended", *cfg.attended_amps, width_ms=cfg.trf_width_ms)
    trf_ign = make_trf("ignored", *cfg.ignored_amps, width_ms=cfg.trf_width_ms)
    eeg = synthesize_eeg(env1, env2, 0, trf_att, trf_ign, cfg, rng=rng)
    return eeg, s1, s2


def generate_dataset(cfg: SynthConfig, out_dir, name: str = "trials") -> dict:
    """Write ``<name>.aadtrl`` and ``<name>.manifest.jsonl`` under ``out_dir``.

    Returns paths and summary counts. Output bytes depend only on ``cfg``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d = cfg.duration_s
    eeg_T, spec_T = trial_dims(d)
    counts = _trials_per_recording(cfg.n_trials, cfg.n_recordings)
    labels = balanced_labels(cfg.n_trials, np.random.default_rng(np.random.SeedSequence([cfg.seed])))
    wav = _wav_streams(cfg, [k + d - 1 for k in counts]) if cfg.carrier == "wav" else None

    container = out_dir / f"{name}.aadtrl"
    manifest = []
    trial = 0
    offset_s = 0
    with TrialWriter(container, eeg_T, len(cfg.gains), spec_T, N_FREQ, d) as w:
        for rec, k in enumerate(counts):
            audio = None
            if wav is not None:
                lo, hi = offset_s * AUDIO_RATE, (offset_s + k + d - 1) * AUDIO_RATE
                audio = (wav[0][lo:hi], wav[1][lo:hi])
                offset_s += k + d - 1
            eeg, s1, s2 = synth_recording(cfg, rec, k, audio)
            e_seg = segment_trials(RawSignal(eeg, EEG_RATE), d)
            a_seg = segment_trials(RawSignal(s1, AUDIO_RATE), d)
            b_seg = segment_trials(RawSignal(s2, AUDIO_RATE), d)
            for j in range(k):
                lab = int(labels[trial])
                spec1 = stft_magnitude(a_seg[j][:, 0])
                spec2 = stft_magnitude(b_seg[j][:, 0])
                first, second = (spec1, spec2) if lab == 0 else (spec2, spec1)
                w.write(eeg_trial(e_seg[j]).astype(np.float32), first.astype(np.float32),
                        second.astype(np.float32), lab)
                start = j * EEG_RATE
                manifest.append({
                    "trial": trial,
                    "source": f"rec{rec:03d}",
                    "span": [start, start + eeg_T],
                    "label": lab,
                })
                trial += 1

    plan = split_dataset(manifest)
    hint = plan.assignment()
    for e in manifest:
        e["split"] = hint[e["trial"]]
    manifest_path = out_dir / f"{name}.manifest.jsonl"
    write_manifest(manifest, manifest_path)
    return {
        "container": str(container),
        "manifest": str(manifest_path),
        "n_trials": trial,
        "labels": {"0": int(np.sum(labels == 0)), "1": int(np.sum(labels == 1))},
        "splits": plan.counts(),
        "highpass_hz": EEG_HIGHPASS_HZ,
    }
