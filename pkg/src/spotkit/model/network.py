"""The end-to-end spotting network: backbone features, temporal head, softmax."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..core import ScoreSeq, SpotError
from .backbone import Backbone, BackboneConfig
from .heads import HeadConfig, build_head


def _init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.GRU):
            for name, p in m.named_parameters():
                if name.startswith("weight_hh"):
                    for gate in p.data.chunk(3, dim=0):
                        nn.init.orthogonal_(gate)
                elif name.startswith("weight_ih"):
                    nn.init.xavier_uniform_(p)
                else:
                    nn.init.zeros_(p)
        elif isinstance(m, nn.Linear):
            nn.init.zeros_(m.bias)


class SpotModel(nn.Module):
    def __init__(self, backbone: BackboneConfig, head: HeadConfig):
        super().__init__()
        self.backbone_config = backbone
        self.head_config = head
        self.backbone = Backbone(backbone)
        self.head = build_head(head, backbone.feature_dim)
        _init_weights(self)
        self.backbone.to(memory_format=torch.channels_last)

    @property
    def num_classes(self) -> int:
        return self.head_config.num_classes

    def features(self, frames: torch.Tensor) -> torch.Tensor:
        return self.backbone(frames)

    def head_logits(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-1] != self.backbone_config.feature_dim:
            raise SpotError(f"feature dimension {features.shape[-1]} does not match "
                            f"head input {self.backbone_config.feature_dim}")
        return self.head(features)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, L, C, H, W) frames to (B, L, K+1) logits."""
        return self.head_logits(self.features(frames))

    def num_parameters(self) -> tuple[int, int]:
        """(backbone, head) trainable parameter counts."""
        count = lambda m: sum(p.numel() for p in m.parameters())
        return count(self.backbone), count(self.head)


def to_input(frames: np.ndarray, like: nn.Module | None = None) -> torch.Tensor:
    """L x H x W x C array (float in [0,1], uint8, or flow) to a (1, L, C, H, W) tensor."""
    arr = np.asarray(frames)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    t = torch.from_numpy(np.ascontiguousarray(arr)).permute(0, 3, 1, 2).unsqueeze(0)
    dtype = next(like.parameters()).dtype if like is not None else torch.float32
    return t.to(dtype)


@torch.no_grad()
def predict_scores(model: SpotModel, frames: np.ndarray) -> ScoreSeq:
    """Per-frame class probabilities for one clip (L x H x W x C)."""
    was_training = model.training
    model.eval()
    try:
        logits = model(to_input(frames, model))[0]
    finally:
        model.train(was_training)
    return ScoreSeq(torch.softmax(logits.double(), dim=-1).numpy())
