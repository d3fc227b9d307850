import logging
import os
from dataclasses import replace

import numpy as np
import pytest

from nsfkit.audio_io import write_features, write_wav
from nsfkit.dsp import Waveform
from nsfkit.loss import MultiResLossConfig
from nsfkit.modelcheck import toy_utterance
from nsfkit.models import FeatureSequence, ModelConfig
from nsfkit.train import (AdamState, DatasetManifest, EarlyStopping, EpochRecord, TrainConfig,
                          TrainLog, TrainingError, adam_step, align, clip_global_norm, segment, train)

TINY = replace(ModelConfig(kind="s-NSF").reduced(blocks=1, stages=2),
               residual_width=8, cond_conv_width=7, skip_width=8, lstm_width=8)
FAST_LOSS = MultiResLossConfig.parse("128/80/40")


def _pair(frames, seed=0):
    target, feat = toy_utterance(frames, TINY, seed)
    return Waveform(target.astype(np.float32), 16000), feat


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps) == (3e-4, 0.9, 0.999, 1e-8)
    assert (cfg.batch_size, cfg.max_segment_seconds, cfg.patience) == (1, 3.0, 5)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=2)


def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), TrainConfig())
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_moves_by_learning_rate():
    p = {"w": np.array([0.0, 0.0])}
    state = AdamState()
    adam_step(p, {"w": np.array([0.5, -4.0])}, state, TrainConfig())
    np.testing.assert_allclose(p["w"], [-3e-4, 3e-4], rtol=1e-6)
    assert state.step == 1


def test_adam_minimises_quadratic():
    p = {"x": np.array([0.0])}
    state, cfg = AdamState(), TrainConfig(learning_rate=0.05)
    for _ in range(2000):
        adam_step(p, {"x": 2 * (p["x"] - 3.0)}, state, cfg)
    assert p["x"][0] == pytest.approx(3.0, abs=1e-3)


def test_adam_skips_non_finite_step(caplog):
    p = {"a": np.array([1.0]), "b": np.array([2.0])}
    state = AdamState()
    with caplog.at_level(logging.WARNING):
        adam_step(p, {"a": np.array([np.nan]), "b": np.array([1.0])}, state, TrainConfig())
    assert (p["a"][0], p["b"][0]) == (1.0, 2.0)
    assert state.skipped == 1 and state.step == 0
    assert "skipped" in caplog.text


def test_clip_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_global_norm(g, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose([g["a"][0], g["b"][0]], [0.6, 0.8])


def _utt(seconds):
    frames = int(seconds * 200)
    return (Waveform(np.zeros(frames * 80, dtype=np.float32), 16000),
            FeatureSequence(np.zeros((frames, 81))))


def test_segmentation():
    assert [len(f) for _, f in segment(*_utt(2.0), 3.0)] == [400]
    pieces = segment(*_utt(7.0), 3.0)
    assert [len(w.samples) / 16000 for w, _ in pieces] == [3.0, 3.0, 1.0]
    assert [len(f) for _, f in pieces] == [600, 600, 200]


def test_align_trims_and_rejects():
    w, f = _utt(1.0)
    w2, f2 = align(Waveform(np.zeros(16050, np.float32), 16000), f)
    assert len(w2.samples) == 16000 and len(f2) == 200
    with pytest.raises(ValueError):
        align(Waveform(np.zeros(16200, np.float32), 16000), f)


def test_early_stopping_rule():
    stop = EarlyStopping(5)
    results = [stop.update(e, float(e)) for e in range(1, 7)]
    assert [s for _, s in results] == [False] * 5 + [True]
    assert stop.best_epoch == 1
    stop = EarlyStopping(2)
    for e, v in enumerate([3.0, 4.0, 2.0, 5.0], 1):
        assert not stop.update(e, v)[1]
    assert stop.best_epoch == 3


def test_train_log_format():
    log = TrainLog()
    log.append(EpochRecord(1, 2.5, 3.25, 0.5))
    assert log.lines() == ["1,2.500000,3.250000,0.50"]
    with pytest.raises(ValueError):
        log.append(EpochRecord(1, 0, 0, 0))


def _data():
    return {"train": [_pair(6, 0), _pair(5, 1)], "validation": [_pair(4, 2)]}


def test_training_stops_on_rising_validation(tmp_path):
    model, log = train(_data(), TINY, TrainConfig(max_epochs=20), FAST_LOSS,
                       out_dir=tmp_path, val_loss_fn=lambda e, m: float(e))
    assert len(log.records) == 6 and log.stopped_early and log.best_epoch == 1
    assert (tmp_path / "best.ckpt").exists()
    lines = (tmp_path / "train.log").read_text().splitlines()
    assert len(lines) == 6 and lines[0].startswith("1,")


def test_training_is_deterministic():
    cfg = TrainConfig(max_epochs=2, learning_rate=1e-3)
    _, a = train(_data(), TINY, cfg, FAST_LOSS)
    _, b = train(_data(), TINY, cfg, FAST_LOSS)
    assert a.losses() == b.losses()


def test_training_reduces_loss():
    cfg = TrainConfig(max_epochs=15, learning_rate=3e-3, patience=15)
    _, log = train(_data(), TINY, cfg, FAST_LOSS)
    train_losses = [t for t, _ in log.losses()]
    assert min(train_losses[-3:]) < train_losses[0]


def test_empty_split_rejected():
    with pytest.raises(TrainingError, match="validation"):
        train({"train": [_pair(4)], "validation": []}, TINY)


def test_manifest_training(tmp_path):
    for i, (split, frames) in enumerate([("train", 6), ("validation", 4)]):
        w, feat = _pair(frames, i)
        write_wav(w, tmp_path / f"u{i}.wav")
        write_features(feat.frames, tmp_path / f"u{i}.f32")
    (tmp_path / "list.txt").write_text(
        "# split wav features\ntrain u0.wav u0.f32\nvalidation u1.wav u1.f32\n")
    manifest = DatasetManifest.read(tmp_path / "list.txt")
    assert [e.split for e in manifest.entries] == ["train", "validation"]
    assert manifest.entries[0].wav == os.path.join(str(tmp_path), "u0.wav")
    _, log = train(manifest, TINY, TrainConfig(max_epochs=1), FAST_LOSS)
    assert len(log.records) == 1


def test_manifest_errors(tmp_path):
    (tmp_path / "bad.txt").write_text("dev a.wav\n")
    with pytest.raises(ValueError, match="unknown split"):
        DatasetManifest.read(tmp_path / "bad.txt")
    (tmp_path / "bad2.txt").write_text("train\n")
    with pytest.raises(ValueError):
        DatasetManifest.read(tmp_path / "bad2.txt")
