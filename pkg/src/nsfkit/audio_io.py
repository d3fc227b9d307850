"""16-bit PCM WAV files and raw float32 feature files."""
from __future__ import annotations

import os
import wave

import numpy as np

from .dsp import Waveform


def read_wav(path: str | os.PathLike) -> Waveform:
    """Mono 16-bit PCM only; samples scaled by 1/32768."""
    try:
        with wave.open(os.fspath(path), "rb") as fh:
            channels, width, rate, frames = (fh.getnchannels(), fh.getsampwidth(),
                                             fh.getframerate(), fh.getnframes())
            if channels != 1:
                raise ValueError(f"{path}: fmt chunk declares {channels} channels, need mono")
            if width != 2:
                raise ValueError(f"{path}: fmt chunk declares {8 * width}-bit samples, need 16-bit")
            raw = fh.readframes(frames)
    except wave.Error as exc:
        raise ValueError(f"{path}: unsupported RIFF/WAVE content ({exc}); "
                         "expected fmt chunk with PCM encoding") from exc
    except EOFError as exc:
        raise ValueError(f"{path}: truncated RIFF header or data chunk") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return Waveform(samples, rate)


def write_wav(w: Waveform, path: str | os.PathLike) -> None:
    """Write 16-bit mono PCM, saturating outside [-1, 1)."""
    pcm = np.clip(np.round(np.asarray(w.samples, dtype=np.float64) * 32768.0), -32768, 32767)
    with wave.open(os.fspath(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate))
        fh.writeframes(pcm.astype("<i2").tobytes())


def write_features(frames: np.ndarray, path: str | os.PathLike) -> None:
    """Frame-major little-endian float32; for 81 dims column 0 is F0."""
    np.ascontiguousarray(frames, dtype="<f4").tofile(os.fspath(path))


def read_features(path: str | os.PathLike, dims: int) -> np.ndarray:
    size = os.path.getsize(path)
    if dims < 1 or size % (4 * dims):
        raise ValueError(f"{path}: size {size} is not a multiple of 4 * {dims}")
    data = np.fromfile(os.fspath(path), dtype="<f4")
    return data.reshape(-1, dims)
