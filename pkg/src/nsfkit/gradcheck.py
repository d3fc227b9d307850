"""Finite-difference checks for every graph operation (run in double precision)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import OpKind, Tensor
from .dsp import StftConfig
from .fir import design_bank, fir_op, merge_branches
from .loss import MultiResLossConfig, frame_window_op, mse_op, spectral_loss_op

OP_TOLERANCE = 1e-5
SPECTRAL_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.error <= self.tolerance

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: max rel err {self.error:.2e} (tol {self.tolerance:.0e})"


def _project(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Random linear functional turning any node into a scalar."""
    return ag.sum_all(ag.mul(out, rng.normal(size=out.shape)))


def _case(rng: np.random.Generator, kind: str):
    n = rng.normal
    if kind == "tanh":
        x = ag.variable(n(size=(5, 3)))
        return (lambda: _project(ag.tanh(x), rng_fixed(1))), [x]
    if kind == "sigmoid":
        x = ag.variable(n(size=(5, 3)))
        return (lambda: _project(ag.sigmoid(x), rng_fixed(2))), [x]
    if kind == "exp":
        x = ag.variable(n(size=(4, 2)))
        return (lambda: _project(ag.exp(x), rng_fixed(3))), [x]
    if kind == "add":
        a, b = ag.variable(n(size=(6, 4))), ag.variable(n(size=(4,)))
        return (lambda: _project(ag.add(a, b), rng_fixed(4))), [a, b]
    if kind == "multiply":
        a, b = ag.variable(n(size=(6, 4))), ag.variable(n(size=(6, 1)))
        return (lambda: _project(ag.mul(a, b), rng_fixed(5))), [a, b]
    if kind == "matmul":
        x, w, b = ag.variable(n(size=(7, 3))), ag.variable(n(size=(3, 5))), ag.variable(n(size=5))
        return (lambda: _project(ag.matmul(x, w, b), rng_fixed(6))), [x, w, b]
    if kind == "conv1d":
        x = ag.variable(n(size=(20, 3)))
        w, b = ag.variable(n(size=(3, 3, 4))), ag.variable(n(size=4))
        d = int(rng.integers(1, 5))
        causal = bool(rng.integers(0, 2))
        return (lambda: _project(ag.conv1d(x, w, b, d, causal), rng_fixed(7))), [x, w, b]
    if kind == "lstm":
        x = ag.variable(n(size=(6, 3)))
        w_in, w_rec = ag.variable(0.5 * n(size=(3, 8))), ag.variable(0.5 * n(size=(2, 8)))
        bias = ag.variable(0.5 * n(size=8))
        rev = bool(rng.integers(0, 2))
        return (lambda: _project(ag.lstm(x, w_in, w_rec, bias, rev), rng_fixed(8))), \
            [x, w_in, w_rec, bias]
    if kind == "concat":
        a, b = ag.variable(n(size=(4, 2))), ag.variable(n(size=(4, 3)))
        return (lambda: _project(ag.concat([a, b], axis=1), rng_fixed(9))), [a, b]
    if kind == "slice":
        x = ag.variable(n(size=(4, 6)))
        return (lambda: _project(ag.slice_cols(x, 1, 4), rng_fixed(10))), [x]
    if kind == "repeat":
        x = ag.variable(n(size=(3, 2)))
        return (lambda: _project(ag.repeat_rows(x, 4), rng_fixed(11))), [x]
    if kind == "reshape":
        x = ag.variable(n(size=(3, 4)))
        return (lambda: _project(ag.reshape(x, (12,)), rng_fixed(12))), [x]
    if kind == "sum":
        x = ag.variable(n(size=(3, 4)))
        return (lambda: ag.sum_all(ag.tanh(x))), [x]
    if kind == "frame-window":
        x = ag.variable(n(size=50))
        cfg = StftConfig(16, 12, 5)
        return (lambda: _project(frame_window_op(x, cfg), rng_fixed(13))), [x]
    if kind == "fir":
        x = ag.variable(n(size=40))
        taps = rng.normal(size=int(rng.integers(3, 12)))
        return (lambda: _project(fir_op(x, taps), rng_fixed(14))), [x]
    if kind == "mse":
        x = ag.variable(n(size=30))
        target = n(size=30)
        return (lambda: mse_op(x, target)), [x]
    if kind == "checkpoint":
        x, w = ag.variable(n(size=(5, 3))), ag.variable(n(size=(3, 3)))
        fn = lambda t: ag.tanh(ag.matmul(t, w))  # noqa: E731
        return (lambda: _project(ag.checkpoint(fn, [x], [w]), rng_fixed(15))), [x, w]
    raise KeyError(kind)


def rng_fixed(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


OP_CASES: dict[str, OpKind] = {
    "tanh": OpKind.TANH, "sigmoid": OpKind.SIGMOID, "exp": OpKind.EXP, "add": OpKind.ADD,
    "multiply": OpKind.MULTIPLY, "matmul": OpKind.MATMUL, "conv1d": OpKind.CONV1D,
    "lstm": OpKind.LSTM, "concat": OpKind.CONCAT, "slice": OpKind.SLICE,
    "repeat": OpKind.REPEAT, "reshape": OpKind.RESHAPE, "sum": OpKind.SUM,
    "frame-window": OpKind.FRAME_WINDOW, "fir": OpKind.FIR, "mse": OpKind.MSE,
    "checkpoint": OpKind.CHECKPOINT, "spectral-loss": OpKind.SPECTRAL_LOSS,
}


def spectral_fd_gradient(generated, natural, cfg: StftConfig, eta: float = 1e-5,
                         eps: float = 1e-6) -> np.ndarray:
    """Central differences of the spectral distance in extended precision.

    Spectra come from a direct-summation DFT in ``np.longdouble``, and only
    the frames containing the perturbed sample are re-evaluated, so neither
    float64 round-off nor the unchanged frames pollute tiny gradient entries.
    """
    ld = np.longdouble
    x = np.asarray(generated, dtype=ld)
    y = np.asarray(natural, dtype=ld)
    T, K, M, S = x.size, cfg.dft_bins, cfg.frame_length, cfg.frame_shift
    N = cfg.num_frames(T)
    m = np.arange(M)
    window = ld(0.5) - ld(0.5) * np.cos(2 * np.pi * m.astype(ld) / ld(M - 1))
    angle = -2 * np.pi * np.outer(m, np.arange(K)).astype(ld) / ld(K)
    basis = np.cos(angle) + 1j * np.sin(angle)          # M x K, complex extended

    def frames(v):
        out = np.zeros((N, M), dtype=ld)
        for n in range(N):
            seg = v[n * S:n * S + M]
            out[n, :seg.size] = seg
        return out * window

    X = frames(x) @ basis
    P_nat = np.abs(frames(y) @ basis) ** 2 + ld(eta)
    scale = ld(1) / (2 * N * K)

    def frame_loss(n, spec):
        return scale * np.sum(np.log(P_nat[n] / (np.abs(spec) ** 2 + ld(eta))) ** 2)

    grad = np.zeros(T, dtype=ld)
    e = ld(eps)
    for k in range(T):
        for n in range(max(0, (k - M) // S), min(N, k // S + 1)):
            mm = k - n * S
            if not 0 <= mm < M:
                continue
            step = e * window[mm] * basis[mm]
            grad[k] += (frame_loss(n, X[n] + step) - frame_loss(n, X[n] - step)) / (2 * e)
    return grad.astype(np.float64)


def relative_error(analytic, numeric) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)))


def check_spectral(instances: int = 100, seed: int = 0, length: int = 400,
                   cfg: StftConfig = StftConfig(128, 80, 40)) -> CheckResult:
    """Graph node gradient of the spectral loss against :func:`spectral_fd_gradient`."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    mcfg = MultiResLossConfig((cfg,))
    with ag.double_precision():
        for _ in range(instances):
            x = ag.variable(rng.normal(size=length))
            target = rng.normal(size=length)
            ag.backward(spectral_loss_op(x, target, mcfg))
            worst = max(worst, relative_error(x.grad, spectral_fd_gradient(
                x.value, target, cfg, mcfg.eta)))
    return CheckResult("spectral-loss", worst, SPECTRAL_TOLERANCE)


def check_op(kind: str, instances: int = 100, seed: int = 0) -> CheckResult:
    """Worst error of one op over ``instances`` random small graphs."""
    if kind == "spectral-loss":
        return check_spectral(instances, seed)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with ag.double_precision():
        for _ in range(instances):
            loss_fn, wrt = _case(rng, kind)
            worst = max(worst, ag.grad_check(loss_fn, wrt))
    return CheckResult(kind, worst, OP_TOLERANCE)


def check_merge(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    bank = design_bank()
    with ag.double_precision():
        h, n = ag.variable(rng.normal(size=60)), ag.variable(rng.normal(size=60))
        flags = np.arange(60) % 17 < 9
        err = ag.grad_check(lambda: _project(merge_branches(h, n, flags, bank), rng_fixed(16)),
                            [h, n])
    return CheckResult("merge-branches", err, OP_TOLERANCE)


def run_suite(instances: int = 100, seed: int = 0,
              progress: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    results = []
    for kind in OP_CASES:
        res = check_op(kind, instances, seed)
        results.append(res)
        if progress:
            progress(res)
    res = check_merge(seed)
    results.append(res)
    if progress:
        progress(res)
    return results
