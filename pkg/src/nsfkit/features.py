"""Log mel-spectrogram extraction and feature assembly."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dsp import StftConfig, Waveform, estimate_f0, frame_and_window
from .models import FeatureSequence

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MelConfig:
    dft_bins: int = 512
    frame_length: int = 320
    frame_shift: int = 80
    bands: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    floor: float = 1e-5
    sample_rate: int = 16000

    @property
    def stft(self) -> StftConfig:
        return StftConfig(self.dft_bins, self.frame_length, self.frame_shift)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """``bands x (K/2+1)`` triangular weights, peaks equally spaced on the mel scale."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.bands + 2))
    bins = np.arange(cfg.dft_bins // 2 + 1) * cfg.sample_rate / cfg.dft_bins
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lo) / (mid - lo)
    falling = (hi - bins) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def band_centres(cfg: MelConfig = MelConfig()) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.bands + 2))
    return edges[1:-1]


def extract_mel_spectrogram(w: Waveform, cfg: MelConfig = MelConfig(),
                            center: bool = False) -> np.ndarray:
    """``B x bands`` log mel amplitudes.

    Without ``center`` there are ``floor((T - M) / S) + 1`` frames. With
    ``center`` the signal is zero-padded by ``(M - S) / 2`` on both sides so
    that a waveform of ``B * S`` samples yields exactly ``B`` frames.
    """
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"expected {cfg.sample_rate} Hz audio, got {w.sample_rate}")
    x = np.asarray(w.samples, dtype=np.float64)
    if center:
        pad = (cfg.frame_length - cfg.frame_shift) // 2
        x = np.pad(x, (pad, cfg.frame_length - cfg.frame_shift - pad))
    frames = frame_and_window(x, cfg.stft)
    mag = np.abs(np.fft.rfft(frames, n=cfg.dft_bins, axis=-1))
    mel = mag @ mel_filterbank(cfg).T
    return np.log(np.maximum(mel, cfg.floor))


def extract_features(w: Waveform, cfg: MelConfig = MelConfig(),
                     f0: np.ndarray | None = None) -> FeatureSequence:
    """Frame-aligned F0 + mel features for a waveform (``B = T // shift``).

    Without an external F0 track the built-in autocorrelation estimator is
    used; it is adequate for tests and demos but not for production corpora.
    """
    spec = extract_mel_spectrogram(w, cfg, center=True)
    B = min(spec.shape[0], len(w.samples) // cfg.frame_shift)
    if B < 1:
        raise ValueError("waveform shorter than one feature frame")
    if f0 is None:
        log.warning("no external F0 given; using the built-in estimator")
        f0 = estimate_f0(w, cfg.frame_shift)
    f0 = np.asarray(f0, dtype=np.float64)
    B = min(B, f0.size)
    return FeatureSequence(np.concatenate([f0[:B, None], spec[:B]], axis=1),
                           1000.0 * cfg.frame_shift / cfg.sample_rate)
