"""Waveform generation and generation-speed measurement."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .dsp import Waveform
from .models import FeatureSequence, ModelConfig, NSFModel


@dataclass
class SynthResult:
    waveform: Waveform
    taps: dict[str, np.ndarray] = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def samples_per_second(self) -> float:
        return len(self.waveform.samples) / self.seconds if self.seconds > 0 else float("inf")

    def timing_report(self) -> str:
        n = len(self.waveform.samples)
        return (f"samples={n} seconds={self.seconds:.3f} "
                f"samples_per_second={self.samples_per_second:.0f}")


def synthesize(model: NSFModel, feat: FeatureSequence, seed: int = 0,
               dump_blocks: bool = False) -> SynthResult:
    """One graph-free forward pass producing ``B * upsample`` samples."""
    if feat.frames.shape[1] != 1 + model.cfg.spectral_dim:
        raise ValueError(f"features have {feat.frames.shape[1]} columns, model expects "
                         f"{1 + model.cfg.spectral_dim}")
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    with ag.no_grad():
        out = model.forward(feat, rng, taps=dump_blocks)
    seconds = time.perf_counter() - start
    samples = np.asarray(out.waveform.value, dtype=np.float32)
    return SynthResult(Waveform(samples, model.cfg.sample_rate), out.taps, seconds)


def random_features(frames: int, cfg: ModelConfig, seed: int = 0,
                    f0: float = 150.0) -> FeatureSequence:
    """Plausible synthetic features: voiced F0 with an unvoiced gap, noisy mel."""
    rng = np.random.default_rng(seed)
    f0_track = np.full(frames, f0)
    f0_track[frames // 3: frames // 3 + max(frames // 10, 1)] = 0.0
    mel = rng.normal(-4.0, 1.0, size=(frames, cfg.spectral_dim))
    return FeatureSequence(np.concatenate([f0_track[:, None], mel], axis=1))


@dataclass
class BenchResult:
    kind: str
    durations: list[float]
    seconds: list[float]
    slope: float
    intercept: float
    r_squared: float
    sample_rate: int = 16000

    @property
    def samples_per_second(self) -> float:
        """Throughput from the fitted slope (fixed overhead excluded)."""
        return self.sample_rate / self.slope if self.slope > 0 else float("inf")

    def report(self) -> str:
        rows = [f"{self.kind}: duration_s,seconds"]
        rows += [f"{d:g},{t:.4f}" for d, t in zip(self.durations, self.seconds)]
        rows.append(f"slope={self.slope:.4f} s/s intercept={self.intercept:.4f} s "
                    f"r2={self.r_squared:.4f} samples_per_second={self.samples_per_second:.0f}")
        return "\n".join(rows)


def linear_fit(x, y) -> tuple[float, float, float]:
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def bench(model: NSFModel, durations=(1.0, 2.0, 4.0, 8.0), repeats: int = 3,
          seed: int = 0) -> BenchResult:
    """Best-of-``repeats`` synthesis time per duration and a least-squares line."""
    cfg = model.cfg
    frame_rate = cfg.sample_rate / cfg.upsample
    times = []
    for d in durations:
        feat = random_features(int(round(d * frame_rate)), cfg, seed)
        times.append(min(synthesize(model, feat, seed).seconds for _ in range(repeats)))
    slope, intercept, r2 = linear_fit(durations, times)
    return BenchResult(cfg.kind, list(durations), times, slope, intercept, r2, cfg.sample_rate)


def causality_check(model: NSFModel, frames: int = 60, at: int = 30, seed: int = 0,
                    tol: float = 0.0) -> bool:
    """Perturbing F0 from frame ``at`` on must leave earlier output samples untouched.

    The excitation depends on F0 only through a causal phase accumulation and
    the filter blocks are causal, so output before ``at * upsample`` cannot
    change. The zero-phase FIR merge of hn-NSF looks ahead by half its
    length, which is excluded. Spectral features (read bidirectionally) are
    held fixed.
    """
    feat = random_features(frames, model.cfg, seed)
    base = synthesize(model, feat, seed).waveform.samples
    frames2 = feat.frames.copy()
    frames2[at:, 0] = np.where(frames2[at:, 0] > 0, frames2[at:, 0] * 1.3, 180.0)
    pert = synthesize(model, FeatureSequence(frames2), seed).waveform.samples
    cut = at * model.cfg.upsample
    if model.bank is not None:
        cut -= max(len(c.taps) for c in model.bank.values()) // 2
    return bool(np.max(np.abs(base[:cut] - pert[:cut]), initial=0.0) <= tol)
