"""Synthetic speech-like utterances for demos and tests."""
from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

from .dsp import Waveform
from .features import MelConfig, extract_mel_spectrogram
from .models import FeatureSequence


def _resonator(freq: float, bandwidth: float, sr: int) -> tuple[np.ndarray, np.ndarray]:
    r = np.exp(-np.pi * bandwidth / sr)
    theta = 2 * np.pi * freq / sr
    a = np.array([1.0, -2 * r * np.cos(theta), r * r])
    return np.array([a.sum()]), a


def synthetic_utterance(seconds: float = 2.0, sample_rate: int = 16000, seed: int = 0,
                        frame_shift: int = 80) -> tuple[Waveform, FeatureSequence]:
    """Vowel-like voiced stretches with a gliding F0 and one fricative gap.

    Returns the waveform and frame-aligned features whose F0 column is the
    exact contour used to generate the audio.
    """
    rng = np.random.default_rng(seed)
    frames = int(round(seconds * sample_rate / frame_shift))
    T = frames * frame_shift
    t_frames = np.arange(frames) / frames
    f0 = 130.0 + 45.0 * np.sin(2 * np.pi * 0.8 * t_frames) + 8.0 * np.sin(2 * np.pi * 9 * t_frames)
    gap = slice(int(0.45 * frames), int(0.55 * frames))
    f0[gap] = 0.0
    f0_samples = np.repeat(f0, frame_shift)
    voiced = f0_samples > 0

    phase = 2 * np.pi * np.cumsum(f0_samples / sample_rate)
    source = np.zeros(T)
    for k in range(1, 40):
        harmonic_ok = k * f0_samples < 0.45 * sample_rate
        source += harmonic_ok * np.sin(k * phase) / k
    source *= voiced
    noise = rng.normal(0.0, 1.0, T)
    source += np.where(voiced, 0.02, 0.4) * noise

    out = np.zeros(T)
    half = T // 2
    for lo, hi, formants in ((0, half, ((700, 90), (1200, 110), (2600, 160))),
                             (half, T, ((350, 70), (2000, 120), (2800, 170)))):
        seg = source[lo:hi]
        y = np.zeros_like(seg)
        for f, bw in formants:
            b, a = _resonator(f, bw, sample_rate)
            y += lfilter(b, a, seg)
        out[lo:hi] = y
    env = np.minimum(1.0, np.minimum(np.arange(T), T - 1 - np.arange(T)) / 800.0)
    out *= env
    out *= 0.5 / np.max(np.abs(out))
    w = Waveform(out.astype(np.float32), sample_rate)
    mel = extract_mel_spectrogram(w, MelConfig(sample_rate=sample_rate), center=True)[:frames]
    return w, FeatureSequence(np.concatenate([f0[:, None], mel], axis=1),
                              1000.0 * frame_shift / sample_rate)
