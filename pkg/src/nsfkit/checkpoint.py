"""Binary checkpoint: versioned header plus named little-endian float32 tensors.

Layout::

    b"NSFCKPT\\0"  uint32 version  uint32 header_len  header (UTF-8 JSON)
    uint32 count
    repeated: uint16 name_len, name, uint8 ndim, ndim * uint32 dims, float32 data

All integers are little-endian. The JSON header holds the model config and the
FIR filter specifications; the filter taps are stored as ``fir.<name>`` tensors.
"""
from __future__ import annotations

import io
import json
import os
import struct
from collections import OrderedDict
from dataclasses import asdict

import numpy as np

from .fir import FirCoefficients, FirSpec
from .models import ModelConfig, NSFModel

MAGIC = b"NSFCKPT\0"
VERSION = 1


def write_tensors(fh, header: dict, tensors: "OrderedDict[str, np.ndarray]") -> None:
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, len(blob)))
    fh.write(blob)
    fh.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        key = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        fh.write(struct.pack("<H", len(key)))
        fh.write(key)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def _read(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated checkpoint file")
    return data


def read_tensors(fh) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    if fh.read(len(MAGIC)) != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", _read(fh, 8))
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(_read(fh, hlen).decode("utf-8"))
    (count,) = struct.unpack("<I", _read(fh, 4))
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (klen,) = struct.unpack("<H", _read(fh, 2))
        name = _read(fh, klen).decode("utf-8")
        (ndim,) = struct.unpack("<B", _read(fh, 1))
        shape = struct.unpack(f"<{ndim}I", _read(fh, 4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(_read(fh, 4 * n), dtype="<f4")
        tensors[name] = data.reshape(shape).copy()
    return header, tensors


def model_to_bytes(model: NSFModel, extra: dict | None = None) -> bytes:
    header = {"model": model.cfg.to_dict(), "extra": extra or {}}
    tensors = model.state_dict()
    if model.bank is not None:
        header["fir"] = {name: asdict(c.spec) for name, c in model.bank.items() if c.spec}
        for name, c in model.bank.items():
            tensors[f"fir.{name}"] = c.taps
    buf = io.BytesIO()
    write_tensors(buf, header, tensors)
    return buf.getvalue()


def save_checkpoint(model: NSFModel, path: str | os.PathLike, extra: dict | None = None) -> None:
    data = model_to_bytes(model, extra)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[NSFModel, dict]:
    with open(path, "rb") as fh:
        header, tensors = read_tensors(fh)
    cfg = ModelConfig.from_dict(header["model"])
    bank = None
    fir_names = [n for n in tensors if n.startswith("fir.")]
    if fir_names:
        specs = header.get("fir", {})
        bank = {}
        for key in fir_names:
            name = key[len("fir."):]
            spec = None
            if name in specs:
                s = specs[name]
                spec = FirSpec(s["name"], tuple(s["passband"]), tuple(s["stopband"]),
                               s["sample_rate"], s["max_ripple_db"], s["min_attenuation_db"])
            bank[name] = FirCoefficients(tensors.pop(key).astype(np.float64), spec)
    model = NSFModel(cfg, bank=bank)
    model.load_state_dict(tensors)
    return model, header.get("extra", {})


def load_state_bytes(model: NSFModel, blob: bytes) -> dict:
    """Restore parameters saved by :func:`model_to_bytes` into ``model``."""
    header, tensors = read_tensors(io.BytesIO(blob))
    for key in [k for k in tensors if k.startswith("fir.")]:
        del tensors[key]
    model.load_state_dict(tensors)
    return header.get("extra", {})
