"""End-to-end finite-difference check of a whole (reduced) vocoder."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .gradcheck import CheckResult
from .loss import MultiResLossConfig, spectral_loss_op
from .models import FeatureSequence, ModelConfig, NSFModel


def toy_utterance(frames: int, cfg: ModelConfig, seed: int = 0) -> tuple[np.ndarray, FeatureSequence]:
    """Voiced harmonic target with an unvoiced stretch, plus matching features."""
    rng = np.random.default_rng(seed)
    f0 = np.full(frames, 140.0) + 20.0 * np.sin(np.linspace(0, np.pi, frames))
    f0[frames // 2: frames // 2 + max(frames // 5, 1)] = 0.0
    per_sample = np.repeat(f0, cfg.upsample)
    phase = 2 * np.pi * np.cumsum(per_sample / cfg.sample_rate)
    target = sum(0.3 / k * np.sin(k * phase) for k in range(1, 6)) * (per_sample > 0)
    target = target + 0.01 * rng.normal(size=per_sample.size)
    mel = rng.normal(-3.0, 1.0, size=(frames, cfg.spectral_dim))
    return target, FeatureSequence(np.concatenate([f0[:, None], mel], axis=1))


@dataclass
class ModelGradReport(CheckResult):
    per_parameter: dict[str, float] = field(default_factory=dict)

    def worst(self, n: int = 5) -> list[tuple[str, float]]:
        return sorted(self.per_parameter.items(), key=lambda kv: -kv[1])[:n]


def check_model_gradients(kind: str = "hn-NSF", blocks: int = 2, stages: int = 5,
                          frames: int = 10, seed: int = 0, eps: float = 1e-5,
                          elements: int = 2, tolerance: float = 1e-3,
                          checkpoint: str = "none") -> ModelGradReport:
    """Per parameter tensor: a random directional derivative and the entries
    with the largest analytic gradient, each against central differences.
    """
    rng = np.random.default_rng(seed)
    with ag.double_precision():
        cfg = replace(ModelConfig(kind=kind, seed=seed, checkpoint=checkpoint),
                      blocks=blocks, stages_per_block=stages)
        model = NSFModel(cfg)
        target, feat = toy_utterance(frames, cfg, seed)
        mcfg = MultiResLossConfig()

        def loss() -> ag.Tensor:
            out = model.forward(feat, np.random.default_rng(seed + 1)).waveform
            return spectral_loss_op(out, target, mcfg)

        def value() -> float:
            with ag.no_grad():
                return float(loss().value)

        model.zero_grad()
        ag.backward(loss())
        report = ModelGradReport(f"{kind} end-to-end", 0.0, tolerance)
        for name, p in model.named_parameters():
            analytic = p.grad.copy()
            flat = p.value.reshape(-1)
            errs = []
            direction = rng.normal(size=flat.size)
            direction /= np.linalg.norm(direction)
            base = flat.copy()
            flat[:] = base + eps * direction
            up = value()
            flat[:] = base - eps * direction
            down = value()
            flat[:] = base
            numeric = (up - down) / (2 * eps)
            a = float(analytic.reshape(-1) @ direction)
            errs.append(abs(a - numeric) / max(abs(numeric), 1e-8))
            for idx in np.argsort(-np.abs(analytic.reshape(-1)))[:elements]:
                orig = flat[idx]
                flat[idx] = orig + eps
                up = value()
                flat[idx] = orig - eps
                down = value()
                flat[idx] = orig
                numeric = (up - down) / (2 * eps)
                a = float(analytic.reshape(-1)[idx])
                errs.append(abs(a - numeric) / max(abs(numeric), 1e-8))
            report.per_parameter[name] = max(errs)
        report.error = max(report.per_parameter.values())
    return report
