"""Flat ``key = value`` experiment configuration files.

Keys are the field names of :class:`ModelConfig` and :class:`TrainConfig`, plus
``loss_configs`` (comma separated ``K/M/S`` triples) and ``eta``. ``#`` starts
a comment. The thread count for numeric kernels comes from ``NSF_NUM_THREADS``.
"""
from __future__ import annotations

import contextlib
import os
from dataclasses import dataclass, field, fields

from .loss import DEFAULT_ETA, MultiResLossConfig
from .models import ModelConfig
from .train import TrainConfig

THREADS_ENV = "NSF_NUM_THREADS"


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: MultiResLossConfig = field(default_factory=MultiResLossConfig)


def _coerce(default, text: str):
    if isinstance(default, bool):
        low = text.lower()
        if low not in ("1", "0", "true", "false", "yes", "no"):
            raise ValueError(f"not a boolean: {text!r}")
        return low in ("1", "true", "yes")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_config_text(text: str) -> ExperimentConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value

    groups = {"model": (ModelConfig, {}), "train": (TrainConfig, {})}
    eta = float(raw.pop("eta", DEFAULT_ETA))
    loss_text = raw.pop("loss_configs", None)
    for key, value in raw.items():
        for cls, kwargs in groups.values():
            names = {f.name for f in fields(cls)}
            if key in names:
                kwargs[key] = _coerce(getattr(cls(), key), value)
                break
        else:
            raise ValueError(f"unknown config key {key!r}")
    loss = MultiResLossConfig.parse(loss_text, eta) if loss_text else MultiResLossConfig(eta=eta)
    return ExperimentConfig(ModelConfig(**groups["model"][1]),
                            TrainConfig(**groups["train"][1]), loss)


def load_config(path: str | os.PathLike | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def format_config(cfg: ExperimentConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg.model, f.name)}" for f in fields(cfg.model)]
    lines += [f"{f.name} = {getattr(cfg.train, f.name)}" for f in fields(cfg.train)]
    lines.append(f"loss_configs = {cfg.loss}")
    lines.append(f"eta = {cfg.loss.eta!r}")
    return "\n".join(lines) + "\n"


def thread_limit():
    """Context limiting BLAS threads to ``$NSF_NUM_THREADS`` when it is set."""
    value = os.environ.get(THREADS_ENV)
    if not value:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    n = int(value)
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1")
    return threadpool_limits(limits=n)
