"""Framing, Hann windowing, unnormalised DFT pair, upsampling and a pitch oracle.

Conventions: frame ``n`` (0-based) covers samples ``[n*shift, n*shift + M)``;
the DFT is the plain sum ``y_k = sum_m x_m exp(-2j*pi*k*m/K)`` and the
inverse is the plain sum with the opposite sign, so ``idft(dft(x)) == K * x``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StftConfig:
    dft_bins: int
    frame_length: int
    frame_shift: int

    def __post_init__(self):
        K, M, S = self.dft_bins, self.frame_length, self.frame_shift
        if K < 1 or K & (K - 1):
            raise ValueError(f"dft_bins must be a power of two, got {K}")
        if M < 2 or K < M:
            raise ValueError(f"need 2 <= frame_length <= dft_bins, got M={M} K={K}")
        if not 0 < S <= M:
            raise ValueError(f"need 0 < frame_shift <= frame_length, got {S}")

    def num_frames(self, length: int) -> int:
        return max(length - self.frame_length, 0) // self.frame_shift + 1

    def __str__(self):
        return f"{self.dft_bins}/{self.frame_length}/{self.frame_shift}"


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValueError("waveform must be a non-empty 1-d array")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def seconds(self) -> float:
        return self.samples.size / self.sample_rate


def hann(M: int) -> np.ndarray:
    """Symmetric Hann window, ``0.5 * (1 - cos(2*pi*m / (M-1)))``."""
    m = np.arange(M)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * m / (M - 1)))


def frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Unwindowed ``N x M`` frames; short inputs are zero-padded at the tail."""
    M, S = cfg.frame_length, cfg.frame_shift
    N = cfg.num_frames(x.size)
    need = (N - 1) * S + M
    if x.size < need:
        x = np.concatenate([x, np.zeros(need - x.size, dtype=x.dtype)])
    view = np.lib.stride_tricks.sliding_window_view(x[:need], M)
    return view[::S][:N]


def frame_and_window(w, cfg: StftConfig) -> np.ndarray:
    x = w.samples if isinstance(w, Waveform) else np.asarray(w)
    return frame_signal(x, cfg) * hann(cfg.frame_length)


def overlap_add(frames: np.ndarray, cfg: StftConfig, length: int) -> np.ndarray:
    """Adjoint of :func:`frame_signal`: scatter-add frames back to ``length``.

    Accumulation is done per frame offset in a fixed order, so the result is
    deterministic.
    """
    N, M = frames.shape
    S = cfg.frame_shift
    span = (N - 1) * S + M
    out = np.zeros(max(span, length), dtype=frames.dtype)
    if M % S == 0:
        blocks = out[: (N - 1 + M // S) * S].reshape(-1, S)
        for j in range(M // S):
            blocks[j:j + N] += frames[:, j * S:(j + 1) * S]
    else:
        for n in range(N):
            out[n * S:n * S + M] += frames[n]
    return out[:length]


def dft(frame: np.ndarray, K: int) -> np.ndarray:
    """Full ``K``-point spectrum of a real frame, zero-padded to ``K``.

    The upper half is mirrored from the lower so conjugate symmetry is exact.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] > K:
        raise ValueError(f"frame length {frame.shape[-1]} exceeds K={K}")
    half = np.fft.rfft(frame, n=K, axis=-1)
    half[..., 0] = half[..., 0].real
    half[..., -1] = half[..., -1].real
    return mirror_half_spectrum(half, K)


def mirror_half_spectrum(half: np.ndarray, K: int) -> np.ndarray:
    full = np.empty(half.shape[:-1] + (K,), dtype=np.complex128)
    full[..., :K // 2 + 1] = half
    full[..., K // 2 + 1:] = np.conj(half[..., 1:K // 2][..., ::-1])
    return full


def is_conjugate_symmetric(g: np.ndarray, tol: float = 1e-6) -> bool:
    g = np.asarray(g)
    K = g.shape[-1]
    scale = max(np.max(np.abs(g)), 1e-300)
    mirrored = np.conj(g[..., (K - np.arange(K)) % K])
    return bool(np.max(np.abs(g - mirrored)) <= tol * scale)


def idft(g: np.ndarray, return_imag: bool = False):
    """Unnormalised inverse DFT ``b_m = sum_k g_k exp(2j*pi*k*m/K)``.

    ``g`` must be conjugate symmetric; the real part is returned (and the
    discarded imaginary part if ``return_imag``).
    """
    g = np.asarray(g, dtype=np.complex128)
    if not is_conjugate_symmetric(g):
        raise ValueError("idft input is not conjugate symmetric")
    K = g.shape[-1]
    b = np.fft.ifft(g, axis=-1) * K
    return (b.real, b.imag) if return_imag else b.real


def upsample_replicate(frames: np.ndarray, factor: int) -> np.ndarray:
    if factor < 1:
        raise ValueError("upsampling factor must be >= 1")
    return np.repeat(np.asarray(frames), factor, axis=0)


def estimate_f0(w: Waveform, frame_shift: int, fmin: float = 60.0, fmax: float = 500.0,
                threshold: float = 0.3, window: int | None = None) -> np.ndarray:
    """Per-frame F0 by normalised autocorrelation; 0 marks unvoiced frames.

    One estimate per ``frame_shift`` samples, analysed on a window centred on
    the frame. Frames in the first half of the signal are compared with later
    samples, frames in the second half with earlier ones, and every lag is
    normalised over the samples where both pieces lie inside the signal, so
    windows that overhang either end are not biased towards short lags. A
    frame is voiced when its best normalised correlation peak exceeds
    ``threshold``. The smallest lag whose peak reaches 90% of the best one is
    chosen to avoid octave-down errors; the lag is refined by parabolic
    interpolation.
    """
    sr = w.sample_rate
    if sr < 8000:
        raise ValueError("estimate_f0 needs sample_rate >= 8000")
    x = np.asarray(w.samples, dtype=np.float64)
    lag_min = int(np.floor(sr / fmax))
    lag_max = int(np.ceil(sr / fmin))
    W = window or 2 * lag_max
    n_frames = max(x.size // frame_shift, 1)
    pad = W // 2 + lag_max
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad + W + lag_max)])
    inside = np.zeros(xp.size)
    inside[pad:pad + x.size] = 1.0
    lags = np.arange(lag_min, lag_max + 1)
    f0 = np.zeros(n_frames)
    for n in range(n_frames):
        centre = n * frame_shift + frame_shift // 2 + pad
        start = centre - W // 2
        seg = xp[start:start + W]
        if seg @ seg <= 1e-10 * W:
            continue
        backward = centre - pad >= x.size / 2
        lo = start - lag_max if backward else start
        view = np.lib.stride_tricks.sliding_window_view
        cand = view(xp[lo:lo + W + lag_max + 1], W)
        valid = view(inside[lo:lo + W + lag_max + 1], W)
        idx = lag_max - lags if backward else lags
        cand, valid = cand[idx], valid[idx]
        cross = cand @ seg
        e_seg = valid @ (seg * seg)
        e_cand = (cand * cand) @ inside[start:start + W]
        nccf = cross / np.sqrt(np.maximum(e_seg * e_cand, 1e-20))
        best = nccf.max()
        if best < threshold:
            continue
        peaks = np.flatnonzero((nccf[1:-1] >= nccf[:-2]) & (nccf[1:-1] >= nccf[2:])) + 1
        peaks = peaks[nccf[peaks] >= 0.9 * best]
        i = int(peaks[0]) if peaks.size else int(np.argmax(nccf))
        lag = float(lags[i])
        if 0 < i < lags.size - 1:
            a, b, c = nccf[i - 1], nccf[i], nccf[i + 1]
            denom = a - 2 * b + c
            if denom < 0:
                lag += 0.5 * (a - c) / denom
        f0[n] = sr / lag
    return f0
