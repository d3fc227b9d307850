"""Dataset manifests, Adam, segmentation, early stopping and the training loop."""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import autograd as ag
from .audio_io import read_features, read_wav
from .dsp import Waveform
from .loss import MultiResLossConfig, loss_report, spectral_loss_op
from .models import FeatureSequence, ModelConfig, NSFModel

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 1
    max_segment_seconds: float = 3.0
    patience: int = 5
    shuffle_seed: int = 0         # segment order and excitation noise during training
    max_epochs: int = 100
    grad_clip: float = 5.0           # global L2 norm; 0 disables clipping
    validation_seed: int = 1234

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.eps > 0 and self.max_segment_seconds > 0):
            raise ValueError("learning_rate, eps and max_segment_seconds must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.batch_size != 1:
            raise ValueError("only batch_size = 1 is supported")
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be >= 1")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0")


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    skipped: int = 0


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, cfg: TrainConfig) -> tuple[Mapping[str, np.ndarray], AdamState]:
    """Bias-corrected Adam, updating ``params`` arrays in place.

    A non-finite gradient anywhere skips the whole step (state untouched).
    """
    for name, g in grads.items():
        if params[name].shape != np.shape(g):
            raise ValueError(f"{name}: gradient shape {np.shape(g)} != {params[name].shape}")
    bad = [n for n, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        state.skipped += 1
        log.warning("non-finite gradient in %s; Adam step skipped", ", ".join(bad[:5]))
        return params, state
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        p = params[name]
        p -= update.astype(p.dtype)
    return params, state


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm > 0 and norm > max_norm and math.isfinite(norm):
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------- data

def align(w: Waveform, feat: FeatureSequence, upsample: int = 80) -> tuple[Waveform, FeatureSequence]:
    """Trim waveform and features to the shorter of ``T`` and ``B * upsample``."""
    T, B = len(w.samples), len(feat)
    if abs(T - B * upsample) > upsample:
        raise ValueError(f"waveform ({T} samples) and features ({B} frames) "
                         f"differ by more than one frame")
    keep = min(B, T // upsample)
    if keep < 1:
        raise ValueError("utterance shorter than one frame")
    if keep != B or keep * upsample != T:
        log.info("trimming utterance: T=%d B=%d -> B=%d", T, B, keep)
    return (Waveform(w.samples[:keep * upsample], w.sample_rate),
            FeatureSequence(feat.frames[:keep], feat.frame_shift_ms))


def segment(w: Waveform, feat: FeatureSequence, max_s: float,
            upsample: int = 80) -> list[tuple[Waveform, FeatureSequence]]:
    """Cut an aligned pair into pieces of at most ``max_s`` seconds at frame boundaries."""
    w, feat = align(w, feat, upsample)
    per = max(int(max_s * w.sample_rate) // upsample, 1)
    out = []
    for start in range(0, len(feat), per):
        stop = min(start + per, len(feat))
        out.append((Waveform(w.samples[start * upsample:stop * upsample], w.sample_rate),
                    FeatureSequence(feat.frames[start:stop], feat.frame_shift_ms)))
    return out


@dataclass(frozen=True)
class ManifestEntry:
    split: str
    wav: str
    features: str | None     # None: extract on load


@dataclass
class DatasetManifest:
    """Text format, one utterance per line: ``split wav_path features_path|-``."""

    entries: list[ManifestEntry]

    @classmethod
    def read(cls, path: str | os.PathLike) -> "DatasetManifest":
        base = os.path.dirname(os.fspath(path))
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.split("#", 1)[0].split()
                if not parts:
                    continue
                if len(parts) not in (2, 3):
                    raise ValueError(f"{path}:{lineno}: expected 'split wav [features|-]'")
                split, wav = parts[0], parts[1]
                feats = parts[2] if len(parts) == 3 and parts[2] != "-" else None
                if split not in SPLITS:
                    raise ValueError(f"{path}:{lineno}: unknown split {split!r}")
                wav = os.path.join(base, wav)
                feats = os.path.join(base, feats) if feats else None
                entries.append(ManifestEntry(split, wav, feats))
        return cls(entries)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]


def load_entry(entry: ManifestEntry, cfg: ModelConfig) -> tuple[Waveform, FeatureSequence]:
    w = read_wav(entry.wav)
    if entry.features is None:
        from .features import extract_features
        feat = extract_features(w)
    else:
        frames = read_features(entry.features, 1 + cfg.spectral_dim)
        if frames.shape[0] == 0:
            raise ValueError(f"{entry.features}: no feature frames")
        feat = FeatureSequence(frames)
    return align(w, feat, cfg.upsample)


# ---------------------------------------------------------------- loop

class EarlyStopping:
    """Stop after ``patience`` consecutive epoch-to-epoch increases of validation loss."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.previous = math.inf
        self.increases = 0

    def update(self, epoch: int, value: float) -> tuple[bool, bool]:
        """Returns ``(improved, stop)``."""
        improved = value < self.best
        if improved:
            self.best, self.best_epoch = value, epoch
        self.increases = self.increases + 1 if value > self.previous else 0
        self.previous = value
        return improved, self.increases >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float
    checkpoint: str = ""


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must increase")
        self.records.append(rec)

    @staticmethod
    def format(rec: EpochRecord) -> str:
        return f"{rec.epoch},{rec.train_loss:.6f},{rec.val_loss:.6f},{rec.seconds:.2f}"

    def lines(self) -> list[str]:
        return [self.format(r) for r in self.records]

    def losses(self) -> list[tuple[float, float]]:
        return [(r.train_loss, r.val_loss) for r in self.records]


def loss_and_grads(model: NSFModel, w: Waveform, feat: FeatureSequence,
                   rng: np.random.Generator, loss_cfg: MultiResLossConfig) -> float:
    """One forward and backward pass; gradients land in the parameters' ``.grad``."""
    model.zero_grad()
    out = model.forward(feat, rng).waveform
    loss = spectral_loss_op(out, w.samples, loss_cfg)
    value = float(loss.value)
    if not math.isfinite(value):
        return value
    ag.backward(loss)
    return value


def train_step(model: NSFModel, w: Waveform, feat: FeatureSequence, rng: np.random.Generator,
               state: AdamState, cfg: TrainConfig, loss_cfg: MultiResLossConfig) -> float:
    value = loss_and_grads(model, w, feat, rng, loss_cfg)
    if not math.isfinite(value):
        report = loss_report(model.forward(feat, np.random.default_rng(0)).waveform.value,
                             w.samples, loss_cfg)
        raise TrainingError(f"non-finite training loss {value} (step {state.step}, "
                            f"T={len(w.samples)}, per-config {report.per_config})")
    named = dict(model.named_parameters())
    grads = {n: p.grad for n, p in named.items()}
    clip_global_norm(grads, cfg.grad_clip)
    adam_step({n: p.value for n, p in named.items()}, grads, state, cfg)
    return value


def evaluate(model: NSFModel, pairs: Sequence[tuple[Waveform, FeatureSequence]],
             loss_cfg: MultiResLossConfig, seed: int) -> float:
    """Mean multi-resolution loss with a fixed excitation seed and no graph."""
    total = 0.0
    with ag.no_grad():
        for i, (w, feat) in enumerate(pairs):
            rng = np.random.default_rng([seed, i])
            out = model.forward(feat, rng).waveform.value
            total += loss_report(out, w.samples, loss_cfg).total
    return total / max(len(pairs), 1)


Pairs = Sequence[tuple[Waveform, FeatureSequence]]


def train(data: "DatasetManifest | Mapping[str, Pairs]", model_cfg: ModelConfig,
          cfg: TrainConfig = TrainConfig(), loss_cfg: MultiResLossConfig | None = None,
          out_dir: str | os.PathLike | None = None,
          val_loss_fn: Callable[[int, NSFModel], float] | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> tuple[NSFModel, TrainLog]:
    """Train until early stopping or ``max_epochs``; returns the best-validation model.

    ``data`` is a manifest or a mapping ``{"train": pairs, "validation": pairs}``.
    ``val_loss_fn`` replaces the validation measurement (used for testing the
    stopping rule). With ``out_dir`` the best checkpoint is written to
    ``best.ckpt`` and the epoch log to ``train.log``.
    """
    from .checkpoint import load_state_bytes, model_to_bytes, save_checkpoint

    loss_cfg = loss_cfg or MultiResLossConfig()
    if isinstance(data, DatasetManifest):
        splits = {s: [load_entry(e, model_cfg) for e in data.split(s)]
                  for s in ("train", "validation")}
    else:
        splits = {s: [align(w, f, model_cfg.upsample) for w, f in data.get(s, ())]
                  for s in ("train", "validation")}
    for s in ("train", "validation"):
        if not splits[s]:
            raise TrainingError(f"empty {s} split")
    segments = [seg for w, f in splits["train"]
                for seg in segment(w, f, cfg.max_segment_seconds, model_cfg.upsample)]
    val_pairs = splits["validation"]

    model = NSFModel(model_cfg)
    state = AdamState()
    rng = np.random.default_rng(cfg.shuffle_seed)
    stopper = EarlyStopping(cfg.patience)
    tlog = TrainLog()
    best_blob = model_to_bytes(model)
    log_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "train.log"), "w", encoding="utf-8")
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            start = time.perf_counter()
            order = rng.permutation(len(segments))
            losses = [train_step(model, *segments[i], rng, state, cfg, loss_cfg) for i in order]
            train_loss = float(np.mean(losses))
            val = (val_loss_fn(epoch, model) if val_loss_fn is not None
                   else evaluate(model, val_pairs, loss_cfg, cfg.validation_seed))
            if not math.isfinite(val):
                raise TrainingError(f"non-finite validation loss at epoch {epoch}")
            improved, stop = stopper.update(epoch, val)
            ckpt = ""
            if improved:
                best_blob = model_to_bytes(model, {"epoch": epoch})
                ckpt = f"epoch{epoch}"
                if out_dir is not None:
                    save_checkpoint(model, os.path.join(out_dir, "best.ckpt"), {"epoch": epoch})
            rec = EpochRecord(epoch, train_loss, val, time.perf_counter() - start, ckpt)
            tlog.append(rec)
            if log_fh is not None:
                log_fh.write(TrainLog.format(rec) + "\n")
                log_fh.flush()
            if on_epoch is not None:
                on_epoch(rec)
            if stop:
                tlog.stopped_early = True
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    tlog.best_epoch = stopper.best_epoch
    load_state_bytes(model, best_blob)
    return model, tlog


def fit_steps(model: NSFModel, pairs: Iterable[tuple[Waveform, FeatureSequence]], steps: int,
              cfg: TrainConfig = TrainConfig(), loss_cfg: MultiResLossConfig | None = None,
              state: AdamState | None = None) -> list[float]:
    """Run ``steps`` Adam updates cycling over ``pairs``; returns per-step losses."""
    loss_cfg = loss_cfg or MultiResLossConfig()
    state = state or AdamState()
    pairs = list(pairs)
    rng = np.random.default_rng(cfg.shuffle_seed)
    return [train_step(model, *pairs[k % len(pairs)], rng, state, cfg, loss_cfg)
            for k in range(steps)]
