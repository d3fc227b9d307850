"""Log spectral amplitude distance, its closed-form gradient, and the MSE baseline."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .dsp import StftConfig, Waveform, frame_signal, hann, mirror_half_spectrum, overlap_add

DEFAULT_STFT_CONFIGS = (
    StftConfig(512, 320, 80),
    StftConfig(128, 80, 40),
    StftConfig(2048, 1920, 640),
)
DEFAULT_ETA = 1e-5


@dataclass(frozen=True)
class MultiResLossConfig:
    configs: tuple[StftConfig, ...] = DEFAULT_STFT_CONFIGS
    eta: float = DEFAULT_ETA

    def __post_init__(self):
        object.__setattr__(self, "configs", tuple(self.configs))
        if not self.configs:
            raise ValueError("at least one STFT configuration is required")
        if not self.eta > 0:
            raise ValueError("eta must be positive")

    @classmethod
    def parse(cls, text: str, eta: float = DEFAULT_ETA) -> "MultiResLossConfig":
        """Parse ``"512/320/80, 128/80/40"`` style triples (K/M/shift)."""
        configs = []
        for item in text.replace(";", ",").split(","):
            item = item.strip()
            if item:
                K, M, S = (int(v) for v in item.split("/"))
                configs.append(StftConfig(K, M, S))
        return cls(tuple(configs), eta)

    def __str__(self):
        return ",".join(str(c) for c in self.configs)


def _samples(w) -> np.ndarray:
    x = w.samples if isinstance(w, Waveform) else w
    return np.asarray(x, dtype=np.float64)


def _pair(generated, natural) -> tuple[np.ndarray, np.ndarray]:
    g, n = _samples(generated), _samples(natural)
    if g.shape != n.shape or g.ndim != 1:
        raise ValueError(f"waveform length mismatch: {g.shape} vs {n.shape}")
    return g, n


def _half_spectra(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    frames = frame_signal(x, cfg) * hann(cfg.frame_length)
    return np.fft.rfft(frames, n=cfg.dft_bins, axis=-1)


def _bin_multiplicity(K: int) -> np.ndarray:
    # each interior rfft bin stands for itself and its mirror image
    mult = np.full(K // 2 + 1, 2.0)
    mult[0] = mult[-1] = 1.0
    return mult


def _log_ratio(generated, natural, cfg, eta):
    y_hat = _half_spectra(generated, cfg)
    y = _half_spectra(natural, cfg)
    p_hat = y_hat.real ** 2 + y_hat.imag ** 2
    p = y.real ** 2 + y.imag ** 2
    return y_hat, p_hat, np.log((p + eta) / (p_hat + eta))


def spectral_distance(generated, natural, cfg: StftConfig, eta: float = DEFAULT_ETA) -> float:
    """``1/(2NK) * sum_n sum_k log((|y|^2 + eta) / (|y_hat|^2 + eta))^2``."""
    g, n = _pair(generated, natural)
    _, _, r = _log_ratio(g, n, cfg, eta)
    N, K = r.shape[0], cfg.dft_bins
    return float((r ** 2 * _bin_multiplicity(K)).sum() / (2.0 * N * K))


def gradient_half_spectrum(generated, natural, cfg: StftConfig, eta: float = DEFAULT_ETA):
    """Per-frame ``dL/dRe(y_hat) + j dL/dIm(y_hat)`` on bins ``0..K/2``."""
    g, n = _pair(generated, natural)
    y_hat, p_hat, r = _log_ratio(g, n, cfg, eta)
    N, K = r.shape[0], cfg.dft_bins
    coef = -2.0 * r / (N * K * (p_hat + eta))
    out = coef * y_hat
    out[:, 0] = out[:, 0].real
    out[:, -1] = out[:, -1].real
    return out


def gradient_spectrum(generated, natural, cfg: StftConfig, eta: float = DEFAULT_ETA):
    """Full ``N x K`` gradient spectra; conjugate symmetric by construction."""
    return mirror_half_spectrum(gradient_half_spectrum(generated, natural, cfg, eta),
                                cfg.dft_bins)


def spectral_distance_backward(generated, natural, cfg: StftConfig,
                               eta: float = DEFAULT_ETA) -> np.ndarray:
    """Gradient of :func:`spectral_distance` w.r.t. every generated sample.

    The inverse DFT of the gradient spectrum gives the gradient w.r.t. the
    zero-padded windowed frame; entries past the frame length are dropped,
    the window is applied (framing is linear) and frames are overlap-added.
    """
    g, _ = _pair(generated, natural)
    half = gradient_half_spectrum(generated, natural, cfg, eta)
    K, M = cfg.dft_bins, cfg.frame_length
    b = np.fft.irfft(half, n=K, axis=-1) * K
    frame_grad = b[:, :M] * hann(M)
    return overlap_add(frame_grad, cfg, g.size)


def multi_res_loss(generated, natural, mcfg: MultiResLossConfig | None = None):
    """Sum of per-configuration distances and of their gradients."""
    mcfg = mcfg or MultiResLossConfig()
    g, n = _pair(generated, natural)
    total = 0.0
    grad = np.zeros_like(g)
    for cfg in mcfg.configs:
        total += spectral_distance(g, n, cfg, mcfg.eta)
        grad += spectral_distance_backward(g, n, cfg, mcfg.eta)
    return total, grad


def waveform_mse(generated, natural) -> float:
    g, n = _pair(generated, natural)
    return float(np.mean((n - g) ** 2))


# ---------------------------------------------------------------- graph ops

def spectral_loss_op(generated: ag.Tensor, natural: np.ndarray,
                     mcfg: MultiResLossConfig | None = None) -> ag.Tensor:
    """Multi-resolution distance as a scalar graph node over a ``(T,)`` input."""
    value, grad = multi_res_loss(generated.value, natural, mcfg)
    dtype = generated.value.dtype
    out = np.asarray(value, dtype=dtype)
    grad = grad.astype(dtype)
    return ag.custom(ag.OpKind.SPECTRAL_LOSS, out, (generated,), lambda g: (g * grad,))


def mse_op(generated: ag.Tensor, natural: np.ndarray) -> ag.Tensor:
    diff = generated.value.astype(np.float64) - np.asarray(natural, dtype=np.float64)
    if diff.ndim != 1:
        raise ValueError("mse expects 1-d waveforms of equal length")
    dtype = generated.value.dtype
    out = np.asarray(np.mean(diff ** 2), dtype=dtype)
    grad = (2.0 * diff / diff.size).astype(dtype)
    return ag.custom(ag.OpKind.MSE, out, (generated,), lambda g: (g * grad,))


def frame_window_op(x: ag.Tensor, cfg: StftConfig) -> ag.Tensor:
    """Framing plus Hann weighting of a ``(T,)`` node into ``N x M`` frames."""
    window = hann(cfg.frame_length).astype(x.value.dtype)
    T = x.shape[0]
    out = frame_signal(x.value, cfg) * window
    return ag.custom(ag.OpKind.FRAME_WINDOW, out, (x,),
                     lambda g: (overlap_add(g * window, cfg, T),))


@dataclass
class LossReport:
    total: float
    per_config: dict[str, float] = field(default_factory=dict)


def loss_report(generated, natural, mcfg: MultiResLossConfig | None = None) -> LossReport:
    mcfg = mcfg or MultiResLossConfig()
    parts = {str(c): spectral_distance(generated, natural, c, mcfg.eta) for c in mcfg.configs}
    return LossReport(sum(parts.values()), parts)
