"""Condition module, filter blocks and the three NSF vocoder assemblies."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .fir import FirCoefficients, apply_fir, design_bank, merge_branches, voicing_flags
from .nn import BiLSTM, DilatedConv, Linear, Module, uniform_init
from .source import SourceConfig, harmonic_components, mix_excitations, noise_excitation

KINDS = ("b-NSF", "s-NSF", "hn-NSF")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "hn-NSF"
    blocks: int = 5
    stages_per_block: int = 10
    noise_stages: int = 0            # 0 -> stages_per_block // 2
    residual_width: int = 64
    skip_width: int = 128
    kernel: int = 3
    harmonics: int = 7
    spectral_dim: int = 80
    lstm_width: int = 64             # both directions together
    cond_conv_width: int = 63
    upsample: int = 80               # samples per feature frame
    sample_rate: int = 16000
    sigma: float = 0.003
    alpha: float = 0.1
    f0_scale: float = 100.0          # F0 column divided by this inside the blocks
    checkpoint: str = "none"         # "none" | "stage" | "block": recompute to save memory
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.lstm_width % 2:
            raise ValueError("lstm_width must be even (split over two directions)")
        if self.cond_conv_width + 1 != self.residual_width:
            raise ValueError("cond_conv_width + 1 (F0) must equal residual_width")
        if self.checkpoint not in ("none", "stage", "block"):
            raise ValueError(f"unknown checkpoint mode {self.checkpoint!r}")

    @property
    def noise_block_stages(self) -> int:
        return self.noise_stages or max(self.stages_per_block // 2, 1)

    def source_config(self) -> SourceConfig:
        return SourceConfig(self.sigma, self.alpha, self.harmonics, self.sample_rate, self.seed)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k not in names:
                continue
            default = getattr(cls, k)
            kwargs[k] = type(default)(v) if not isinstance(default, str) else str(v)
        return cls(**kwargs)

    def reduced(self, blocks: int = 2, stages: int = 5) -> "ModelConfig":
        return replace(self, blocks=blocks, stages_per_block=stages)


@dataclass
class FeatureSequence:
    """``B x (1 + D)`` frames: column 0 is F0 in Hz (0 = unvoiced)."""

    frames: np.ndarray
    frame_shift_ms: float = 5.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError("features must be a non-empty B x (1 + D) matrix")
        if np.any(self.frames[:, 0] < 0):
            raise ValueError("F0 must be non-negative")

    @property
    def f0(self) -> np.ndarray:
        return self.frames[:, 0]

    @property
    def spectral(self) -> np.ndarray:
        return self.frames[:, 1:]

    def __len__(self):
        return self.frames.shape[0]


class ConditionModule(Module):
    """Bi-LSTM and width-3 CONV over spectral frames, F0 appended, then upsampled."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.blstm = self.add_module("blstm", BiLSTM(cfg.spectral_dim, cfg.lstm_width // 2, rng))
        self.conv = self.add_module(
            "conv", DilatedConv(cfg.lstm_width, cfg.cond_conv_width, 3, 1, rng, causal=False))

    def __call__(self, feat: FeatureSequence) -> tuple[Tensor, np.ndarray]:
        if feat.spectral.shape[1] != self.cfg.spectral_dim:
            raise ValueError(f"expected {self.cfg.spectral_dim} spectral dims, "
                             f"got {feat.spectral.shape[1]}")
        hidden = ag.tanh(self.conv(self.blstm(ag.constant(feat.spectral))))
        frames = ag.concat([hidden, ag.constant(feat.f0[:, None])], axis=1)
        c = ag.repeat_rows(frames, self.cfg.upsample)
        return c, np.repeat(feat.f0, self.cfg.upsample)


class _FilterBlock(Module):
    """Shared stage loop: stages may be recomputed during backward to save memory."""

    width: int
    skip_width: int

    def _stage(self, k: int, x: Tensor, cond: Tensor) -> tuple[Tensor, Tensor]:
        raise NotImplementedError

    def _stage_params(self, k: int) -> list[Tensor]:
        raise NotImplementedError

    def _head(self, v_in: Tensor, skip_sum: Tensor) -> Tensor:
        raise NotImplementedError

    def _run(self, v_in: Tensor, c: Tensor, per_stage: bool) -> Tensor:
        x = ag.tanh(self.expand(v_in))
        cond = self.cond(c)
        skip_sum = None
        R, S = self.width, self.skip_width
        for k in range(self.stages):
            if per_stage and ag.grad_enabled():
                if skip_sum is None:
                    skip_sum = ag.constant(np.zeros((x.shape[0], S), dtype=x.value.dtype))

                def packed_stage(x, cond, ss, k=k):
                    x_next, skip = self._stage(k, x, cond)
                    return ag.concat([x_next, ag.add(ss, skip)], axis=1)

                packed = ag.checkpoint(packed_stage, [x, cond, skip_sum], self._stage_params(k))
                x = ag.slice_cols(packed, 0, R)
                skip_sum = ag.slice_cols(packed, R, R + S)
            else:
                x, skip = self._stage(k, x, cond)
                skip_sum = skip if skip_sum is None else ag.add(skip_sum, skip)
        return self._head(v_in, skip_sum)

    def __call__(self, v_in: Tensor, c: Tensor, mode: str = "none") -> Tensor:
        if mode == "block" and ag.grad_enabled():
            return ag.checkpoint(lambda v, cc: self._run(v, cc, per_stage=True),
                                 [v_in, c], self.parameters())
        return self._run(v_in, c, per_stage=(mode == "stage"))


class SimplifiedBlock(_FilterBlock):
    """Dilated CONV stack with residual links; ``v_out = v_in + a``."""

    def __init__(self, cfg: ModelConfig, stages: int, rng: np.random.Generator):
        super().__init__()
        R, S = cfg.residual_width, cfg.skip_width
        self.width, self.skip_width, self.stages = R, S, stages
        self.expand = self.add_module("expand", Linear(1, R, rng))
        self.cond = self.add_module("cond", Linear(R, R, rng))
        self.convs = [self.add_module(f"conv{k}", DilatedConv(R, R, cfg.kernel, 2 ** k, rng))
                      for k in range(stages)]
        self.skips = [self.add_module(f"skip{k}", Linear(R, S, rng)) for k in range(stages)]
        self.out = self.add_module("out", Linear(S, 1, rng))

    def _stage(self, k, x, cond):
        h = ag.tanh(ag.add(self.convs[k](x), cond))
        return ag.add(x, h), ag.tanh(self.skips[k](h))

    def _stage_params(self, k):
        return self.convs[k].parameters() + self.skips[k].parameters()

    def _head(self, v_in, skip_sum):
        return ag.add(v_in, ag.tanh(self.out(skip_sum)))


class BaselineBlock(_FilterBlock):
    """Gated dilated CONV stack; ``v_out = v_in * exp(b~) + a``."""

    def __init__(self, cfg: ModelConfig, stages: int, rng: np.random.Generator):
        super().__init__()
        R, S = cfg.residual_width, cfg.skip_width
        self.width, self.skip_width, self.stages = R, S, stages
        self.expand = self.add_module("expand", Linear(1, R, rng))
        self.cond = self.add_module("cond", Linear(R, 2 * R, rng))
        self.convs = [self.add_module(f"conv{k}", DilatedConv(R, 2 * R, cfg.kernel, 2 ** k, rng))
                      for k in range(stages)]
        self.residuals = [self.add_module(f"res{k}", Linear(R, R, rng)) for k in range(stages)]
        self.skips = [self.add_module(f"skip{k}", Linear(R, S, rng)) for k in range(stages)]
        self.out = self.add_module("out", Linear(S, 2, rng))

    def _stage(self, k, x, cond):
        R = self.width
        pre = ag.add(self.convs[k](x), cond)
        gate = ag.mul(ag.tanh(ag.slice_cols(pre, 0, R)),
                      ag.sigmoid(ag.slice_cols(pre, R, 2 * R)))
        x_next = ag.add(x, ag.tanh(self.residuals[k](gate)))
        return x_next, ag.tanh(self.skips[k](gate))

    def _stage_params(self, k):
        return (self.convs[k].parameters() + self.residuals[k].parameters()
                + self.skips[k].parameters())

    def _head(self, v_in, skip_sum):
        ab = ag.tanh(self.out(skip_sum))
        a = ag.slice_cols(ab, 0, 1)
        scale = ag.exp(ag.slice_cols(ab, 1, 2))
        return ag.add(ag.mul(v_in, scale), a)


@dataclass
class ModelOutput:
    waveform: Tensor
    taps: dict[str, np.ndarray] = field(default_factory=dict)


class NSFModel(Module):
    def __init__(self, cfg: ModelConfig, bank: dict[str, FirCoefficients] | None = None):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        H = cfg.harmonics
        self.condition = self.add_module("condition", ConditionModule(cfg, rng))
        self.mix_weight = self.add_param("mix.weight", uniform_init(rng, (H + 1, 1), H + 1))
        self.mix_bias = self.add_param("mix.bias", np.zeros(1, dtype=ag.get_dtype()))
        block = BaselineBlock if cfg.kind == "b-NSF" else SimplifiedBlock
        self.blocks = [self.add_module(f"block{i}", block(cfg, cfg.stages_per_block, rng))
                       for i in range(cfg.blocks)]
        self.noise_blocks = []
        self.bank = None
        if cfg.kind == "hn-NSF":
            self.noise_blocks = [self.add_module(
                "noise_block0", SimplifiedBlock(cfg, cfg.noise_block_stages, rng))]
            self.bank = bank if bank is not None else design_bank(cfg.sample_rate)
        col_scale = np.ones(cfg.residual_width)
        col_scale[-1] = 1.0 / cfg.f0_scale
        self._cond_scale = col_scale

    @property
    def filter_blocks(self) -> list[Module]:
        return self.blocks + self.noise_blocks

    def forward(self, feat: FeatureSequence, rng: np.random.Generator,
                taps: bool = False) -> ModelOutput:
        """Condition -> source -> filter blocks (-> FIR merge for hn-NSF)."""
        c, f0 = self.condition(feat)
        c = ag.mul(c, self._cond_scale.astype(c.value.dtype))
        T = f0.size
        src_cfg = self.cfg.source_config()
        comps = harmonic_components(f0, src_cfg, rng)
        v = mix_excitations(comps, self.mix_weight, self.mix_bias)
        dumped = {}
        if taps:
            dumped["excitation"] = v.value[:, 0].copy()
        for i, blk in enumerate(self.blocks):
            v = blk(v, c, self.cfg.checkpoint)
            if taps:
                dumped[f"block{i}"] = v.value[:, 0].copy()
        harmonic = ag.reshape(v, (T,))
        if self.cfg.kind != "hn-NSF":
            out = harmonic
        else:
            n = ag.constant(noise_excitation(T, src_cfg, rng)[:, None])
            if taps:
                dumped["noise_excitation"] = n.value[:, 0].copy()
            for blk in self.noise_blocks:
                n = blk(n, c, self.cfg.checkpoint)
            noise = ag.reshape(n, (T,))
            flags = voicing_flags(f0)
            out = merge_branches(harmonic, noise, flags, self.bank)
            if taps:
                dumped["harmonic_filtered"] = np.where(
                    flags, apply_fir(harmonic.value, self.bank["lp_voiced"]),
                    apply_fir(harmonic.value, self.bank["lp_unvoiced"]))
                dumped["noise_filtered"] = np.where(
                    flags, apply_fir(noise.value, self.bank["hp_voiced"]),
                    apply_fir(noise.value, self.bank["hp_unvoiced"]))
        if taps:
            dumped["output"] = out.value.copy()
        return ModelOutput(out, dumped)


def build_model(kind: str, config: ModelConfig | None = None, **overrides) -> NSFModel:
    cfg = replace(config or ModelConfig(), kind=kind, **overrides)
    return NSFModel(cfg)


def model_forward(model: NSFModel, feat: FeatureSequence, rng: np.random.Generator,
                  taps: bool = False) -> ModelOutput:
    return model.forward(feat, rng, taps)


def parameter_table(model: Module) -> list[tuple[str, tuple[int, ...], int]]:
    return [(name, p.shape, int(p.value.size)) for name, p in model.named_parameters()]


def count_parameters(model: Module) -> int:
    return sum(n for _, _, n in parameter_table(model))
