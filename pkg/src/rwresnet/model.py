"""The full RW-Resnet countermeasure: feature extractor followed by the backbone."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .backbone import Backbone, BackboneConfig
from .frontend import Frontend, FrontendConfig
from .nn import Module


class RWResNet(Module):
    def __init__(self, frontend: FrontendConfig, backbone: BackboneConfig | None = None, dtype=T.DTYPE):
        super().__init__()
        if backbone is None:
            backbone = BackboneConfig(in_channels=frontend.cg)
        if backbone.in_channels != frontend.cg:
            raise ValueError(
                f"backbone in_channels={backbone.in_channels} must equal frontend cg={frontend.cg}"
            )
        self.frontend_cfg = frontend
        self.backbone_cfg = backbone
        self.dtype = np.dtype(dtype)
        self.frontend = self.add("frontend", Frontend(frontend, dtype))
        self.backbone = self.add("backbone", Backbone(backbone, dtype))

    def forward(self, wave):
        return self.backbone(self.frontend(wave.astype(self.dtype, copy=False)))

    def backward(self, d_logits):
        return self.frontend.backward(self.backbone.backward(d_logits))

    def config(self) -> dict:
        return {
            "frontend": self.frontend_cfg.to_dict(),
            "backbone": self.backbone_cfg.to_dict(),
            "dtype": self.dtype.name,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "RWResNet":
        return cls(
            FrontendConfig(**cfg["frontend"]),
            BackboneConfig(**cfg["backbone"]),
            dtype=np.dtype(cfg.get("dtype", "float32")),
        )


def predict_logits(model: RWResNet, waves: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Eval-mode logits for a [N, L] or [N, 1, L] array of waveforms."""
    if waves.ndim == 2:
        waves = waves[:, None, :]
    was_training = model.training
    model.eval()
    try:
        out = [model.forward(waves[i:i + batch_size]) for i in range(0, len(waves), batch_size)]
    finally:
        model.train(was_training)
    if not out:
        return np.zeros((0, 2), dtype=model.dtype)
    return np.concatenate(out)
