"""Sine-based excitation built from a per-sample F0 track."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autograd as ag

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SourceConfig:
    sigma: float = 0.003
    alpha: float = 0.1
    num_harmonics: int = 7
    sample_rate: int = 16000
    seed: int = 0

    def __post_init__(self):
        if not (self.sigma > 0 and self.alpha > 0):
            raise ValueError("sigma and alpha must be positive")
        if self.num_harmonics < 0:
            raise ValueError("num_harmonics must be >= 0")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def check_f0_range(self, f_max: float) -> None:
        """Warn when the top overtone leaves fewer than four samples per period."""
        if (self.num_harmonics + 1) * f_max >= self.sample_rate / 4:
            log.warning("(H+1)*f_max = %.1f Hz reaches sample_rate/4 = %.1f Hz",
                        (self.num_harmonics + 1) * f_max, self.sample_rate / 4)


def harmonic_component(f0: np.ndarray, h: int, cfg: SourceConfig, phase: float,
                       rng: np.random.Generator | None, noise: bool = True) -> np.ndarray:
    """Excitation for overtone ``h`` (frequency ``(h+1) * f_t``).

    Voiced samples: ``alpha * sin(phase + cumulative instantaneous phase) + n_t``;
    unvoiced samples: ``alpha / (3 sigma) * n_t`` with ``n_t ~ N(0, sigma^2)``.
    The phase is accumulated in cycles, modulo 1, in float64. Overtone samples
    at or above Nyquist keep their noise but drop the sinusoid.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    nyquist = cfg.sample_rate / 2
    if np.any(f0 < 0) or np.any(f0 >= nyquist):
        raise ValueError(f"F0 values must lie in [0, {nyquist}) Hz")
    if not -np.pi <= phase <= np.pi:
        raise ValueError("initial phase must lie in [-pi, pi]")
    freq = (h + 1) * f0
    cycles = np.cumsum(np.mod(freq / cfg.sample_rate, 1.0))
    cycles = np.mod(cycles, 1.0)
    sine = cfg.alpha * np.sin(2.0 * np.pi * cycles + phase)
    sine[freq >= nyquist] = 0.0
    if noise:
        if rng is None:
            raise ValueError("an rng is required when noise is enabled")
        n = rng.normal(0.0, cfg.sigma, size=f0.size)
    else:
        n = np.zeros(f0.size)
    voiced = f0 > 0
    return np.where(voiced, sine + n, cfg.alpha / (3.0 * cfg.sigma) * n)


def harmonic_components(f0: np.ndarray, cfg: SourceConfig, rng: np.random.Generator,
                        noise: bool = True) -> np.ndarray:
    """``T x (H+1)`` matrix of all overtone excitations.

    Each overtone draws its own initial phase uniformly in ``[-pi, pi]`` and
    uses an independent child generator for its noise.
    """
    phases = rng.uniform(-np.pi, np.pi, size=cfg.num_harmonics + 1)
    streams = rng.spawn(cfg.num_harmonics + 1)
    cols = [harmonic_component(f0, h, cfg, float(phases[h]), streams[h], noise)
            for h in range(cfg.num_harmonics + 1)]
    return np.stack(cols, axis=1)


def mix_excitations(components, weights: ag.Tensor, bias: ag.Tensor) -> ag.Tensor:
    """``tanh(sum_h w_h e^<h> + w_b)`` as a graph node of shape ``(T, 1)``.

    ``weights`` is ``(H+1) x 1``, ``bias`` has shape ``(1,)``.
    """
    comps = components if isinstance(components, ag.Tensor) else ag.constant(components)
    return ag.tanh(ag.add(ag.matmul(comps, weights), bias))


def noise_excitation(length: int, cfg: SourceConfig, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. Gaussian noise with std ``alpha / 3``."""
    if length < 1:
        raise ValueError("length must be >= 1")
    return rng.normal(0.0, cfg.alpha / 3.0, size=length)
