"""Quarter-width Resnet34 over the feature map, with the skip-connected FC head."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import AdaptiveAvgPool, BatchNorm, Conv2d, Linear, Module, ReLU


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 1
    stage_channels: tuple[int, ...] = (16, 32, 64, 128)
    stage_blocks: tuple[int, ...] = (3, 4, 6, 3)
    embed_dim: int = 128
    n_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        object.__setattr__(self, "stage_blocks", tuple(self.stage_blocks))
        if len(self.stage_channels) != len(self.stage_blocks):
            raise ConfigError("stage_channels and stage_blocks must have the same length")
        if min(self.stage_channels + self.stage_blocks) < 1 or self.in_channels < 1:
            raise ConfigError("channel and block counts must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        d["stage_blocks"] = list(self.stage_blocks)
        return d


class BasicBlock(Module):
    """conv3x3 -> BN -> ReLU -> conv3x3 -> BN, plus shortcut, ReLU after the sum.

    The shortcut is the identity unless the stride or channel count changes,
    in which case it is a strided 1x1 conv + BN.
    """

    def __init__(self, cin, cout, stride=1, dtype=T.DTYPE):
        super().__init__()
        self.conv1 = self.add("conv1", Conv2d(cin, cout, 3, stride, 1, dtype))
        self.bn1 = self.add("bn1", BatchNorm(cout, dtype))
        self.conv2 = self.add("conv2", Conv2d(cout, cout, 3, 1, 1, dtype))
        self.bn2 = self.add("bn2", BatchNorm(cout, dtype))
        self.act1, self.act2 = ReLU(), ReLU()
        self.projection = stride != 1 or cin != cout
        if self.projection:
            self.sc_conv = self.add("shortcut_conv", Conv2d(cin, cout, 1, stride, 0, dtype))
            self.sc_bn = self.add("shortcut_bn", BatchNorm(cout, dtype))

    def forward(self, x):
        h = self.bn2(self.conv2(self.act1(self.bn1(self.conv1(x)))))
        sc = self.sc_bn(self.sc_conv(x)) if self.projection else x
        return self.act2(h + sc)

    def backward(self, d_out):
        d_sum = self.act2.backward(d_out)
        d = self.act1.backward(self.conv2.backward(self.bn2.backward(d_sum)))
        d_x = self.conv1.backward(self.bn1.backward(d))
        if self.projection:
            return d_x + self.sc_conv.backward(self.sc_bn.backward(d_sum))
        return d_x + d_sum


class Head(Module):
    """pooled h -> z = FC2(ReLU(FC1(h))) + h -> output linear (2 classes)."""

    def __init__(self, dim, n_classes=2, dtype=T.DTYPE):
        super().__init__()
        self.fc1 = self.add("fc1", Linear(dim, dim, dtype))
        self.fc2 = self.add("fc2", Linear(dim, dim, dtype))
        self.out = self.add("out", Linear(dim, n_classes, dtype))
        self.act = ReLU()

    def forward(self, h):
        self.embedding = self.fc2(self.act(self.fc1(h))) + h
        return self.out(self.embedding)

    def backward(self, d_out):
        d_z = self.out.backward(d_out)
        return self.fc1.backward(self.act.backward(self.fc2.backward(d_z))) + d_z


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, dtype=T.DTYPE):
        super().__init__()
        self.cfg = cfg
        c0 = cfg.stage_channels[0]
        self.conv = self.add("conv", Conv2d(cfg.in_channels, c0, 3, 1, 1, dtype))
        self.bn = self.add("bn", BatchNorm(c0, dtype))
        self.act = ReLU()
        self.blocks: list[BasicBlock] = []
        cin = c0
        for s, (cout, n) in enumerate(zip(cfg.stage_channels, cfg.stage_blocks)):
            for i in range(n):
                stride = 2 if (i == 0 and s > 0) else 1
                self.blocks.append(self.add(f"res{s + 1}.{i}", BasicBlock(cin, cout, stride, dtype)))
                cin = cout
        if cin != cfg.embed_dim:
            raise ConfigError(
                f"embed_dim={cfg.embed_dim} must equal the last stage width {cin} (pooling feeds FC2's skip)"
            )
        self.pool = AdaptiveAvgPool()
        self.head = self.add("head", Head(cfg.embed_dim, cfg.n_classes, dtype))
        self.stage_shapes: list[tuple[int, ...]] = []

    def forward(self, f):
        if f.ndim != 4 or f.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"backbone expects [B,{self.cfg.in_channels},T,F] input, got {f.shape}"
            )
        if min(f.shape[2:]) < 2 ** (len(self.cfg.stage_channels) - 1):
            raise ValueError(f"spatial dims {f.shape[2:]} too small for the strided stages")
        h = self.act(self.bn(self.conv(f)))
        shapes = [h.shape]
        ends = set(np.cumsum(self.cfg.stage_blocks) - 1)
        for i, b in enumerate(self.blocks):
            h = b(h)
            if i in ends:
                shapes.append(h.shape)
        self.stage_shapes = shapes
        return self.head(self.pool(h))

    def backward(self, d_out):
        d = self.pool.backward(self.head.backward(d_out))
        for b in reversed(self.blocks):
            d = b.backward(d)
        return self.conv.backward(self.bn.backward(self.act.backward(d)))


def parameter_count(cfg: BackboneConfig) -> int:
    """Trainable scalars in a backbone built from ``cfg``."""
    return Backbone(cfg).num_parameters()
