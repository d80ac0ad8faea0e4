"""Wavegram / ResWavegram feature extraction from raw waveforms.

Pipeline: stride-5 stem convolution, three pooled blocks with channel plan
(c1, c2, c3), then the channel axis is split into ``cg`` contiguous groups so
the [B, c3, T] output becomes a [B, cg, T, c3/cg] time-frequency map.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import BatchNorm, Conv1d, MaxPool1d, Module, ReLU

PRESETS = {
    "S": (64, 64, 64),
    "M": (64, 128, 128),
    "L": (64, 128, 256),
}
VARIANTS = ("wavegram", "reswavegram")

STEM_KERNEL = 11
STEM_PADDING = 5
STEM_STRIDE = 5
POOL = 4
# total downsampling from samples to frames: stem stride times three pools
HOP = STEM_STRIDE * POOL ** 3


@dataclass(frozen=True)
class FrontendConfig:
    c1: int = 64
    c2: int = 128
    c3: int = 128
    cg: int = 1
    variant: str = "reswavegram"
    stem_out: int = 64
    input_len: int = 128000

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if min(self.c1, self.c2, self.c3, self.cg, self.stem_out) < 1:
            raise ConfigError("channel counts and cg must be positive")
        if self.c3 % self.cg:
            raise ConfigError(f"c3={self.c3} is not divisible by cg={self.cg}")
        if self.input_len % HOP:
            raise ConfigError(
                f"input_len={self.input_len} is not divisible by {HOP} (stride 5 x pool 4^3)"
            )

    @classmethod
    def preset(cls, name: str, **kwargs) -> "FrontendConfig":
        try:
            c1, c2, c3 = PRESETS[name.upper()]
        except KeyError:
            raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
        return cls(c1=c1, c2=c2, c3=c3, **kwargs)

    @property
    def frames(self) -> int:
        return self.input_len // HOP

    @property
    def freq_bins(self) -> int:
        return self.c3 // self.cg

    def to_dict(self) -> dict:
        return asdict(self)


class Stem(Module):
    """Conv1D(k=11, stride 5, pad 5) -> BN -> ReLU."""

    def __init__(self, cout=64, dtype=T.DTYPE):
        super().__init__()
        self.conv = self.add("conv", Conv1d(1, cout, STEM_KERNEL, STEM_STRIDE, STEM_PADDING, dtype=dtype))
        self.bn = self.add("bn", BatchNorm(cout, dtype))
        self.act = ReLU()

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != 1:
            raise ValueError(f"stem expects a [B,1,L] waveform batch, got {x.shape}")
        return self.act(self.bn(self.conv(x)))

    def backward(self, d_out):
        return self.conv.backward(self.bn.backward(self.act.backward(d_out)))


class Conv1dBlock(Module):
    """Conv(d=1) -> BN -> ReLU -> Conv(d=2) -> BN -> ReLU -> MaxPool(4)."""

    def __init__(self, cin, cout, dtype=T.DTYPE):
        super().__init__()
        self.conv1 = self.add("conv1", Conv1d(cin, cout, 3, padding=1, dilation=1, dtype=dtype))
        self.bn1 = self.add("bn1", BatchNorm(cout, dtype))
        self.conv2 = self.add("conv2", Conv1d(cout, cout, 3, padding=2, dilation=2, dtype=dtype))
        self.bn2 = self.add("bn2", BatchNorm(cout, dtype))
        self.act1, self.act2 = ReLU(), ReLU()
        self.pool = MaxPool1d(POOL)

    def forward(self, x):
        h = self.act1(self.bn1(self.conv1(x)))
        h = self.act2(self.bn2(self.conv2(h)))
        return self.pool(h)

    def backward(self, d_out):
        d = self.act2.backward(self.pool.backward(d_out))
        d = self.act1.backward(self.conv2.backward(self.bn2.backward(d)))
        return self.conv1.backward(self.bn1.backward(d))


class Conv1dResBlock(Module):
    """Conv1dBlock with a Conv(k=3, d=1) + BN residual path.

    The second ReLU is applied after the residual sum, then the max-pool.
    """

    def __init__(self, cin, cout, dtype=T.DTYPE):
        super().__init__()
        self.conv1 = self.add("conv1", Conv1d(cin, cout, 3, padding=1, dilation=1, dtype=dtype))
        self.bn1 = self.add("bn1", BatchNorm(cout, dtype))
        self.conv2 = self.add("conv2", Conv1d(cout, cout, 3, padding=2, dilation=2, dtype=dtype))
        self.bn2 = self.add("bn2", BatchNorm(cout, dtype))
        self.conv3 = self.add("conv3", Conv1d(cin, cout, 3, padding=1, dilation=1, dtype=dtype))
        self.bn3 = self.add("bn3", BatchNorm(cout, dtype))
        self.act1, self.act2 = ReLU(), ReLU()
        self.pool = MaxPool1d(POOL)

    def forward(self, x):
        main = self.bn2(self.conv2(self.act1(self.bn1(self.conv1(x)))))
        res = self.bn3(self.conv3(x))
        return self.pool(self.act2(main + res))

    def backward(self, d_out):
        d_sum = self.act2.backward(self.pool.backward(d_out))
        d_main = self.act1.backward(self.conv2.backward(self.bn2.backward(d_sum)))
        d_x = self.conv1.backward(self.bn1.backward(d_main))
        return d_x + self.conv3.backward(self.bn3.backward(d_sum))


def to_feature_map(h: np.ndarray, cg: int) -> np.ndarray:
    """[B, C, T] -> [B, cg, T, C/cg]; group g holds channels [g*F, (g+1)*F)."""
    B, C, frames = h.shape
    return h.reshape(B, cg, C // cg, frames).transpose(0, 1, 3, 2)


def from_feature_map(f: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_feature_map`."""
    B, cg, frames, F = f.shape
    return f.transpose(0, 1, 3, 2).reshape(B, cg * F, frames)


class Frontend(Module):
    def __init__(self, cfg: FrontendConfig, dtype=T.DTYPE):
        super().__init__()
        self.cfg = cfg
        block = Conv1dResBlock if cfg.variant == "reswavegram" else Conv1dBlock
        self.stem = self.add("stem", Stem(cfg.stem_out, dtype))
        chans = (cfg.stem_out, cfg.c1, cfg.c2, cfg.c3)
        self.blocks = [
            self.add(f"block{i + 1}", block(chans[i], chans[i + 1], dtype)) for i in range(3)
        ]

    def forward(self, x):
        if x.shape[-1] != self.cfg.input_len:
            raise ValueError(f"expected waveforms of length {self.cfg.input_len}, got {x.shape}")
        h = self.stem(x)
        for b in self.blocks:
            h = b(h)
        return np.ascontiguousarray(to_feature_map(h, self.cfg.cg))

    def backward(self, d_out):
        d = np.ascontiguousarray(from_feature_map(d_out))
        for b in reversed(self.blocks):
            d = b.backward(d)
        return self.stem.backward(d)


def extract(wave: np.ndarray, frontend: Frontend) -> np.ndarray:
    """Feature map [B, cg, T, F] for a [B, 1, input_len] waveform batch."""
    return frontend.forward(wave)
