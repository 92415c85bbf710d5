"""Temporal heads mapping per-frame features to per-frame (K+1)-way logits."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from ..core import SpotError

HEAD_KINDS = ("bigru", "bigru_deep3", "grustar", "linear")


@dataclass(frozen=True)
class HeadConfig:
    num_classes: int
    kind: str = "bigru"
    hidden: int | None = None           # None: match the feature dimension
    grustar_scales: tuple = (4, 16)

    def __post_init__(self):
        object.__setattr__(self, "grustar_scales", tuple(int(s) for s in self.grustar_scales))
        if self.kind not in HEAD_KINDS:
            raise SpotError(f"head kind must be one of {HEAD_KINDS}, got {self.kind!r}")
        if self.num_classes < 1:
            raise SpotError("num_classes must be >= 1")
        if self.hidden is not None and self.hidden <= 0:
            raise SpotError("hidden size must be > 0")
        scales = self.grustar_scales
        if self.kind == "grustar" and (any(s < 2 for s in scales) or list(scales) != sorted(set(scales))):
            raise SpotError(f"GRU* scales must be >= 2 and strictly increasing, got {list(scales)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grustar_scales"] = list(self.grustar_scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HeadConfig":
        return cls(**d)


class LinearHead(nn.Module):
    def __init__(self, dim: int, num_classes: int):
        super().__init__()
        self.fc = nn.Linear(dim, num_classes + 1)

    def forward(self, x):
        return self.fc(x)


class BiGRUHead(nn.Module):
    def __init__(self, dim: int, hidden: int, num_classes: int, layers: int = 1):
        super().__init__()
        self.gru = nn.GRU(dim, hidden, num_layers=layers, batch_first=True, bidirectional=True)
        self.fc = nn.Linear(2 * hidden, num_classes + 1)

    def forward(self, x):
        out, _ = self.gru(x)
        return self.fc(out)


class MultiScaleGRUHead(nn.Module):
    """A full-rate bidirectional GRU plus one GRU per coarser time scale.

    Each scale path: affine + ReLU per frame, max-pool over non-overlapping
    windows of ``S`` frames (``ceil(L / S)`` steps), its own bidirectional GRU,
    then repetition back to ``L`` rows. All paths are concatenated per frame.
    """

    def __init__(self, dim: int, hidden: int, num_classes: int, scales=(4, 16)):
        super().__init__()
        self.scales = tuple(scales)
        self.base = nn.GRU(dim, hidden, batch_first=True, bidirectional=True)
        self.proj = nn.ModuleList(nn.Linear(dim, hidden) for _ in self.scales)
        self.grus = nn.ModuleList(nn.GRU(hidden, hidden, batch_first=True, bidirectional=True) for _ in self.scales)
        self.fc = nn.Linear(2 * hidden * (1 + len(self.scales)), num_classes + 1)
        self.act = nn.ReLU()

    @staticmethod
    def pool(x: torch.Tensor, scale: int) -> torch.Tensor:
        """Max over non-overlapping windows of ``scale`` steps; (B, L, C) -> (B, ceil(L/S), C)."""
        b, l, c = x.shape
        steps = math.ceil(l / scale)
        pad = steps * scale - l
        if pad:
            x = torch.cat([x, x.new_full((b, pad, c), float("-inf"))], dim=1)
        return x.reshape(b, steps, scale, c).amax(dim=2)

    def forward(self, x):
        length = x.shape[1]
        paths = [self.base(x)[0]]
        for scale, proj, gru in zip(self.scales, self.proj, self.grus):
            coarse, _ = gru(self.pool(self.act(proj(x)), scale))
            paths.append(coarse.repeat_interleave(scale, dim=1)[:, :length])
        return self.fc(torch.cat(paths, dim=-1))


def build_head(config: HeadConfig, feature_dim: int) -> nn.Module:
    hidden = config.hidden or feature_dim
    if config.kind == "linear":
        return LinearHead(feature_dim, config.num_classes)
    if config.kind == "bigru":
        return BiGRUHead(feature_dim, hidden, config.num_classes)
    if config.kind == "bigru_deep3":
        return BiGRUHead(feature_dim, hidden, config.num_classes, layers=3)
    return MultiScaleGRUHead(feature_dim, hidden, config.num_classes, config.grustar_scales)
