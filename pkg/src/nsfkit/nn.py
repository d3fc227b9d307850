"""Parameter containers and the small set of layers the vocoders need."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    """Ordered registry of named parameters and child modules."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self._children: OrderedDict[str, Module] = OrderedDict()

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        p = ag.parameter(value, name=name)
        self._params[name] = p
        return p

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, child in self._children.items():
            yield from child.named_modules(prefix + name + ".")

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.value.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} "
                           f"unexpected={sorted(unexpected)}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.value = value.astype(p.value.dtype)
            p.zero_grad()

    def to_dtype(self, dtype) -> None:
        for p in self.parameters():
            p.value = p.value.astype(dtype)
            p.zero_grad()

    def fill_zero(self) -> None:
        for p in self.parameters():
            p.value[...] = 0.0


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(ag.get_dtype())


class Linear(Module):
    """Feed-forward layer ``x @ W + b`` on ``T x in`` inputs."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = self.add_param("weight", uniform_init(rng, (n_in, n_out), n_in))
        self.bias = (self.add_param("bias", np.zeros(n_out, dtype=ag.get_dtype()))
                     if bias else None)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.matmul(x, self.weight, self.bias)


class DilatedConv(Module):
    def __init__(self, n_in: int, n_out: int, kernel: int, dilation: int,
                 rng: np.random.Generator, causal: bool = True):
        super().__init__()
        self.dilation = dilation
        self.causal = causal
        self.weight = self.add_param(
            "weight", uniform_init(rng, (kernel, n_in, n_out), kernel * n_in))
        self.bias = self.add_param("bias", np.zeros(n_out, dtype=ag.get_dtype()))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv1d(x, self.weight, self.bias, self.dilation, self.causal)


class LSTMLayer(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, reverse: bool = False):
        super().__init__()
        self.reverse = reverse
        self.w_in = self.add_param("w_in", uniform_init(rng, (n_in, 4 * hidden), n_in))
        self.w_rec = self.add_param("w_rec", uniform_init(rng, (hidden, 4 * hidden), hidden))
        self.bias = self.add_param("bias", np.zeros(4 * hidden, dtype=ag.get_dtype()))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.lstm(x, self.w_in, self.w_rec, self.bias, reverse=self.reverse)


class BiLSTM(Module):
    """Forward and backward LSTMs, outputs concatenated (``2 * hidden`` wide)."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.fwd = self.add_module("fwd", LSTMLayer(n_in, hidden, rng))
        self.bwd = self.add_module("bwd", LSTMLayer(n_in, hidden, rng, reverse=True))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.concat([self.fwd(x), self.bwd(x)], axis=1)
