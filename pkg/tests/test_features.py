import logging

import numpy as np
import pytest

from nsfkit.dsp import Waveform
from nsfkit.features import (MelConfig, band_centres, extract_features,
                             extract_mel_spectrogram, hz_to_mel, mel_filterbank, mel_to_hz)
from nsfkit.toydata import synthetic_utterance


def test_mel_scale_roundtrip():
    f = np.array([0.0, 100.0, 1000.0, 8000.0])
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)
    assert hz_to_mel(1000.0) == pytest.approx(1000.0, rel=2e-3)


def test_filterbank_shape_and_peaks():
    fb = mel_filterbank(MelConfig())
    assert fb.shape == (80, 257)
    assert np.all(fb >= 0) and np.all(fb.max(axis=1) > 0)
    assert not fb.flags.writeable


def test_silence_gives_floor():
    mel = extract_mel_spectrogram(Waveform(np.zeros(3200), 16000))
    np.testing.assert_array_equal(mel, np.log(1e-5))


def test_frame_count():
    w = Waveform(np.zeros(3200), 16000)
    assert extract_mel_spectrogram(w).shape == ((3200 - 320) // 80 + 1, 80)
    assert extract_mel_spectrogram(w, center=True).shape == (40, 80)


def test_sine_peaks_in_nearest_band():
    t = np.arange(8000) / 16000
    mel = extract_mel_spectrogram(Waveform(np.sin(2 * np.pi * 1000 * t), 16000))
    band = int(np.argmax(mel.mean(axis=0)))
    assert band == int(np.argmin(np.abs(band_centres() - 1000.0)))


def test_wrong_rate_rejected():
    with pytest.raises(ValueError):
        extract_mel_spectrogram(Waveform(np.zeros(3200), 8000))


def test_features_with_external_f0():
    w, feat = synthetic_utterance(seconds=0.5)
    out = extract_features(w, f0=feat.f0)
    assert out.frames.shape == (100, 81)
    np.testing.assert_array_equal(out.f0, feat.f0)
    np.testing.assert_allclose(out.spectral, feat.spectral)


def test_features_fall_back_to_estimator(caplog):
    w, feat = synthetic_utterance(seconds=0.5)
    with caplog.at_level(logging.WARNING):
        out = extract_features(w)
    assert "estimator" in caplog.text
    voiced = (out.f0 > 0) & (feat.f0 > 0)
    assert voiced.sum() >= 40
    assert np.median(np.abs(out.f0[voiced] / feat.f0[voiced] - 1)) <= 0.02
