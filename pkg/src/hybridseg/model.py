"""The full network: input fusion, both feature paths, and output fusion."""
from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .effunet import EffUNet
from .fusion import InputFusion
from .heads import ClassHead, FusePaths
from .nn import Module, ModuleList
from .tensor import Tensor
from .transformer import TransformerPath


class HybridSegNet(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.fusion = InputFusion()
        self.effunet = EffUNet(cfg)
        self.transformer = TransformerPath(cfg) if cfg.use_transformer else None
        self.fuse = FusePaths(cfg.feature_channels, cfg.num_classes)
        k = cfg.num_classes
        self.heads = ModuleList(
            ClassHead(k, cfg.head_n_a, cfg.head_n_f, cfg.head_heads, cfg.ff_multiplier,
                      cfg.head_layers, channel=i if cfg.head_split_channels else None)
            for i in range(k))

    @property
    def input_multiple(self) -> int:
        m = self.effunet.total_stride
        if self.transformer is not None:
            m = int(np.lcm(m, self.transformer.backbone.stride))
        return m

    def features(self, image: Tensor, dsm: Tensor) -> Tensor:
        fused = self.fusion(image, dsm)
        u_out = self.effunet(fused)
        t_out = self.transformer(fused) if self.transformer is not None else None
        return self.fuse(t_out, u_out)

    def class_head(self, features: Tensor, class_id: int) -> Tensor:
        """Log-probabilities of the binary head for one class."""
        if not isinstance(class_id, (int, np.integer)) or not 0 <= class_id < len(self.heads):
            raise ValueError(f"class_id must be in 0..{len(self.heads) - 1}, got {class_id!r}")
        return self.heads[int(class_id)](features)

    def forward(self, image: Tensor, dsm: Tensor) -> list[Tensor]:
        feats = self.features(image, dsm)
        return [head(feats) for head in self.heads]


def build_model(cfg: ModelConfig, seed: int) -> HybridSegNet:
    return HybridSegNet(cfg).init_params(seed)
