"""Equiripple low/high-pass FIR bank that merges the harmonic and noise branches."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from . import autograd as ag

MAX_ORDER = 64


@dataclass(frozen=True)
class FirSpec:
    name: str
    passband: tuple[float, float]
    stopband: tuple[float, float]
    sample_rate: float = 16000.0
    max_ripple_db: float = 5.0
    min_attenuation_db: float = 40.0

    def __post_init__(self):
        nyq = self.sample_rate / 2
        for lo, hi in (self.passband, self.stopband):
            if not 0 <= lo < hi <= nyq:
                raise ValueError(f"{self.name}: band ({lo}, {hi}) outside [0, {nyq}]")
        p, s = self.passband, self.stopband
        if not (p[1] <= s[0] or s[1] <= p[0]):
            raise ValueError(f"{self.name}: passband and stopband overlap")

    @property
    def highpass(self) -> bool:
        return self.passband[0] > self.stopband[0]

    @property
    def transition(self) -> float:
        if self.highpass:
            return self.passband[0] - self.stopband[1]
        return self.stopband[0] - self.passband[1]

    @property
    def pass_deviation(self) -> float:
        # linear deviation d with 20*log10((1+d)/(1-d)) == max_ripple_db
        r = 10 ** (self.max_ripple_db / 20)
        return (r - 1.0) / (r + 1.0)

    @property
    def stop_deviation(self) -> float:
        return 10 ** (-self.min_attenuation_db / 20)


@dataclass(frozen=True)
class FirCoefficients:
    taps: np.ndarray
    spec: FirSpec | None = None

    @property
    def order(self) -> int:
        return self.taps.size - 1


def voiced_unvoiced_specs(sample_rate: float = 16000.0) -> dict[str, FirSpec]:
    """The four filters: LP/HP for voiced and for unvoiced regions."""
    nyq = sample_rate / 2
    return {
        "lp_voiced": FirSpec("lp_voiced", (0, 5000), (7000, nyq), sample_rate),
        "hp_voiced": FirSpec("hp_voiced", (7000, nyq), (0, 5000), sample_rate),
        "lp_unvoiced": FirSpec("lp_unvoiced", (0, 1000), (3000, nyq), sample_rate),
        "hp_unvoiced": FirSpec("hp_unvoiced", (3000, nyq), (0, 1000), sample_rate),
    }


def herrmann_order(spec: FirSpec) -> int:
    """Herrmann-Rabiner-Chan estimate of the equiripple filter order."""
    dp = math.log10(max(spec.pass_deviation, spec.stop_deviation))
    ds = math.log10(min(spec.pass_deviation, spec.stop_deviation))
    d_inf = ((0.005309 * dp ** 2 + 0.07114 * dp - 0.4761) * ds
             - (0.00266 * dp ** 2 + 0.5941 * dp + 0.4278))
    f = 11.01217 + 0.51244 * (dp - ds)
    width = spec.transition / spec.sample_rate
    return max(int(math.ceil(d_inf / width - f * width)), 2)


def frequency_response(c, grid: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude in dB on ``grid`` points of ``[0, pi]`` by direct summation.

    Returns ``(omega, db)``; exact nulls give ``-inf``.
    """
    if grid < 2:
        raise ValueError("grid must have at least two points")
    taps = np.asarray(c.taps if isinstance(c, FirCoefficients) else c, dtype=np.float64)
    omega = np.linspace(0.0, np.pi, grid)
    n = np.arange(taps.size)
    H = np.exp(-1j * np.outer(omega, n)) @ taps
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(np.abs(H))
    return omega, db


def measure(c: FirCoefficients, spec: FirSpec, grid: int = 4096) -> dict[str, float]:
    """Worst passband deviation and worst stopband gain, both in dB."""
    omega, db = frequency_response(c, grid)
    hz = omega / np.pi * spec.sample_rate / 2
    inside = lambda band: (hz >= band[0]) & (hz <= band[1])  # noqa: E731
    return {
        "pass_deviation_db": float(np.max(np.abs(db[inside(spec.passband)]))),
        "peak_ripple_db": float(np.ptp(db[inside(spec.passband)])),
        "stop_max_db": float(np.max(db[inside(spec.stopband)])),
    }


def meets(c: FirCoefficients, spec: FirSpec, grid: int = 4096) -> bool:
    m = measure(c, spec, grid)
    return (m["pass_deviation_db"] <= spec.max_ripple_db
            and m["peak_ripple_db"] <= spec.max_ripple_db
            and m["stop_max_db"] <= -spec.min_attenuation_db)


def design_equiripple(spec: FirSpec, max_order: int = MAX_ORDER) -> FirCoefficients:
    """Parks-McClellan design with the smallest even order that meets ``spec``.

    Starts from the Herrmann estimate and increases the order by 2 (odd tap
    counts, symmetric type-I filters, valid for both low- and high-pass).
    """
    order = herrmann_order(spec)
    order += order % 2
    bands = sorted([spec.passband, spec.stopband])
    edges = [bands[0][0], bands[0][1], bands[1][0], bands[1][1]]
    desired = [0.0, 1.0] if spec.highpass else [1.0, 0.0]
    wp, ws = 1.0 / spec.pass_deviation, 1.0 / spec.stop_deviation
    weight = [ws, wp] if spec.highpass else [wp, ws]
    while order <= max_order:
        try:
            taps = signal.remez(order + 1, edges, desired, weight=weight,
                                fs=spec.sample_rate, maxiter=100)
        except ValueError:
            taps = None
        if taps is not None:
            taps = 0.5 * (taps + taps[::-1])
            coef = FirCoefficients(taps, spec)
            if meets(coef, spec):
                return coef
        order += 2
    raise ValueError(f"{spec.name}: specification not met up to order {max_order}")


def design_bank(sample_rate: float = 16000.0) -> dict[str, FirCoefficients]:
    return {name: design_equiripple(spec)
            for name, spec in voiced_unvoiced_specs(sample_rate).items()}


def apply_fir(x: np.ndarray, c) -> np.ndarray:
    """Causal filtering then an ``order/2`` advance, trimmed to ``len(x)``."""
    taps = np.asarray(c.taps if isinstance(c, FirCoefficients) else c)
    delay = (taps.size - 1) // 2
    y = np.convolve(np.asarray(x), taps)
    return y[delay:delay + len(x)]


def _fir_adjoint(g: np.ndarray, taps: np.ndarray) -> np.ndarray:
    delay = (taps.size - 1) // 2
    T = g.size
    full = np.zeros(T + taps.size - 1, dtype=g.dtype)
    full[delay:delay + T] = g
    return np.correlate(full, taps, mode="valid")


def fir_op(x: ag.Tensor, c) -> ag.Tensor:
    """Fixed (non-trainable) FIR filter on a ``(T,)`` node."""
    taps = np.asarray(c.taps if isinstance(c, FirCoefficients) else c).astype(x.value.dtype)
    out = apply_fir(x.value, taps)
    return ag.custom(ag.OpKind.FIR, out, (x,), lambda g: (_fir_adjoint(g, taps),))


def voicing_flags(f0: np.ndarray) -> np.ndarray:
    return np.asarray(f0) > 0


def merge_branches(harmonic, noise, flags: np.ndarray, bank: dict[str, FirCoefficients]):
    """Select ``LP_v(h) + HP_v(n)`` on voiced samples, else ``LP_u(h) + HP_u(n)``.

    Accepts plain arrays or graph nodes (returns the same kind).
    """
    graph = isinstance(harmonic, ag.Tensor)
    if graph:
        if harmonic.shape != noise.shape:
            raise ValueError(f"branch length mismatch: {harmonic.shape} vs {noise.shape}")
        mask = np.asarray(flags, dtype=harmonic.value.dtype)
        voiced = ag.add(fir_op(harmonic, bank["lp_voiced"]), fir_op(noise, bank["hp_voiced"]))
        unvoiced = ag.add(fir_op(harmonic, bank["lp_unvoiced"]), fir_op(noise, bank["hp_unvoiced"]))
        return ag.add(ag.mul(voiced, mask), ag.mul(unvoiced, 1.0 - mask))
    harmonic, noise = np.asarray(harmonic), np.asarray(noise)
    if harmonic.shape != noise.shape:
        raise ValueError(f"branch length mismatch: {harmonic.shape} vs {noise.shape}")
    voiced = apply_fir(harmonic, bank["lp_voiced"]) + apply_fir(noise, bank["hp_voiced"])
    unvoiced = apply_fir(harmonic, bank["lp_unvoiced"]) + apply_fir(noise, bank["hp_unvoiced"])
    return np.where(np.asarray(flags, dtype=bool), voiced, unvoiced)
