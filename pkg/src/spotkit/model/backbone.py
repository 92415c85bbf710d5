"""Per-frame 2D CNN feature extractor with temporal shifts inside residual blocks.

The layout is a scaled-down RegNet-Y: a patchifying stem followed by stages of
bottleneck blocks (1x1, grouped 3x3, squeeze-excite, 1x1). Time is never pooled
or strided; the only cross-frame interaction is the channel shift at each block.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction

import torch
from torch import nn

from ..core import SpotError
from .shift import ChannelShift

SHIFT_MODES = ("gsm", "tsm", "none")
DEFAULT_STAGES = ((1, 32, 2), (2, 64, 2), (2, 128, 2), (1, 368, 2))


@dataclass(frozen=True)
class BackboneConfig:
    stages: tuple = DEFAULT_STAGES          # (block_count, channels, spatial_stride) per stage
    shift_mode: str = "gsm"
    shift_fraction: str = "1/4"
    stem_channels: int = 32
    stem_stride: int = 4
    group_width: int = 8
    modality: str = "rgb"                   # rgb: 3 channels in [0,1]; flow: 2 channels in pixels

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(tuple(int(v) for v in s) for s in self.stages))
        if self.shift_mode not in SHIFT_MODES:
            raise SpotError(f"shift_mode must be one of {SHIFT_MODES}, got {self.shift_mode!r}")
        if not 0 < Fraction(self.shift_fraction) <= 1:
            raise SpotError("shift_fraction must be in (0, 1]")
        if not self.stages:
            raise SpotError("backbone needs at least one stage")
        for blocks, channels, stride in self.stages:
            if blocks < 1 or channels < 4 or stride < 1:
                raise SpotError(f"bad stage {(blocks, channels, stride)}: need blocks >= 1, channels >= 4")
        if self.modality not in ("rgb", "flow"):
            raise SpotError(f"modality must be 'rgb' or 'flow', got {self.modality!r}")

    @property
    def feature_dim(self) -> int:
        return self.stages[-1][1]

    @property
    def in_channels(self) -> int:
        return 3 if self.modality == "rgb" else 2

    @property
    def total_stride(self) -> int:
        s = self.stem_stride
        for _, _, stride in self.stages:
            s *= stride
        return s

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [list(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**d)


class SqueezeExcite(nn.Module):
    def __init__(self, channels: int, reduced: int):
        super().__init__()
        self.fc1 = nn.Conv2d(channels, reduced, 1)
        self.fc2 = nn.Conv2d(reduced, channels, 1)
        self.act = nn.ReLU()

    def forward(self, x):
        s = x.mean((2, 3), keepdim=True)
        return x * torch.sigmoid(self.fc2(self.act(self.fc1(s))))


class ShiftBlock(nn.Module):
    """Bottleneck residual block; the temporal shift acts on the residual branch input."""

    def __init__(self, cin: int, cout: int, stride: int, config: BackboneConfig):
        super().__init__()
        self.shift = ChannelShift(cin, config.shift_mode, Fraction(config.shift_fraction))
        groups = cout // config.group_width if cout % config.group_width == 0 else 1
        self.branch = nn.Sequential(
            nn.Conv2d(cin, cout, 1, bias=False), nn.BatchNorm2d(cout), nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, stride, 1, groups=groups, bias=False), nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
            SqueezeExcite(cout, max(1, cin // 4)),
            nn.Conv2d(cout, cout, 1, bias=False), nn.BatchNorm2d(cout),
        )
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))
        else:
            self.skip = nn.Identity()
        self.out_act = nn.ReLU()

    def forward(self, x: torch.Tensor, clip_len: int) -> torch.Tensor:
        n, c, h, w = x.shape
        shifted = self.shift(x.reshape(n // clip_len, clip_len, c, h, w)).reshape(n, c, h, w)
        shifted = shifted.contiguous(memory_format=torch.channels_last)
        return self.out_act(self.branch(shifted) + self.skip(x))


class Backbone(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        self.stem = nn.Sequential(
            nn.Conv2d(config.in_channels, config.stem_channels, config.stem_stride, config.stem_stride, bias=False),
            nn.BatchNorm2d(config.stem_channels), nn.ReLU(inplace=True))
        blocks = []
        cin = config.stem_channels
        for count, channels, stride in config.stages:
            for i in range(count):
                blocks.append(ShiftBlock(cin, channels, stride if i == 0 else 1, config))
                cin = channels
        self.blocks = nn.ModuleList(blocks)
        # frames pushed through the network since construction; inference cost accounting
        self.frames_evaluated = 0

    @property
    def temporal_radius(self) -> int:
        """Frames of context each output row sees on either side."""
        return 0 if self.config.shift_mode == "none" else len(self.blocks)

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        if self.config.modality == "rgb":
            return (x - 0.45) / 0.25
        return x / 20.0

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, L, C, H, W) frames to (B, L, D) spatially pooled features."""
        if frames.ndim != 5 or frames.shape[2] != self.config.in_channels:
            raise SpotError(f"expected (batch, time, {self.config.in_channels}, H, W) input, got {tuple(frames.shape)}")
        b, l, c, h, w = frames.shape
        stride = self.config.total_stride
        if h % stride or w % stride:
            raise SpotError(f"frame size {h}x{w} is not a multiple of the backbone stride {stride}")
        self.frames_evaluated += b * l
        # channels-last convolutions are markedly faster on CPU
        x = self.normalize(frames).reshape(b * l, c, h, w).contiguous(memory_format=torch.channels_last)
        x = self.stem(x)
        for block in self.blocks:
            x = block(x, l)
        return x.mean((2, 3)).reshape(b, l, -1)
