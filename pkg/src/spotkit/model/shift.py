"""Temporal channel shifting: fixed (TSM) and gated (GSM)."""
from __future__ import annotations

import math
from fractions import Fraction

import torch
from torch import nn

from ..core import SpotError


def shift_channel_count(channels: int, fraction=Fraction(1, 4)) -> int:
    """Channels exchanged across time: ``channels * fraction`` rounded up to a
    multiple of 4, capped at ``channels``."""
    if channels < 1:
        raise SpotError(f"channel count must be >= 1, got {channels}")
    wanted = Fraction(channels) * Fraction(fraction).limit_denominator(10_000)
    return min(channels, 4 * math.ceil(wanted / 4))


def temporal_shift(x: torch.Tensor, dim: int = 0) -> torch.Tensor:
    """Shift the first half of the channels forward in time and the second half backward.

    ``x`` has time along ``dim`` and channels along ``dim + 1``. Frame t of the
    first half receives frame t-1, frame t of the second half receives frame t+1;
    values shifted in from outside the clip are zero.
    """
    channels = x.shape[dim + 1]
    if channels % 2:
        raise SpotError(f"temporal shift needs an even channel count, got {channels}")
    half = channels // 2
    fwd, bwd = x.narrow(dim + 1, 0, half), x.narrow(dim + 1, half, half)
    length = x.shape[dim]
    if length == 1:
        return torch.zeros_like(x)
    zero_fwd = torch.zeros_like(fwd.narrow(dim, 0, 1))
    zero_bwd = torch.zeros_like(bwd.narrow(dim, 0, 1))
    fwd = torch.cat([zero_fwd, fwd.narrow(dim, 0, length - 1)], dim=dim)
    bwd = torch.cat([bwd.narrow(dim, 1, length - 1), zero_bwd], dim=dim)
    return torch.cat([fwd, bwd], dim=dim + 1)


class GateShift(nn.Module):
    """Spatially gated temporal shift of a channel block.

    A 3x3 convolution produces one gate map per shift direction,
    ``g = tanh(conv(x))``; the gated part ``r = g * x`` is shifted and the rest
    stays in place: ``out = shift(r) + (x - r)``.
    """

    def __init__(self, channels: int):
        super().__init__()
        if channels % 2:
            raise SpotError(f"gate shift needs an even channel count, got {channels}")
        self.channels = channels
        self.gate = nn.Conv2d(channels, 2, kernel_size=3, padding=1)

    def gates(self, x: torch.Tensor) -> torch.Tensor:
        b, l, c, h, w = x.shape
        g = torch.tanh(self.gate(x.reshape(b * l, c, h, w))).reshape(b, l, 2, 1, h, w)
        g = g.expand(b, l, 2, c // 2, h, w)
        return g.reshape(b, l, c, h, w)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``x``: (batch, time, channels, H, W)."""
        r = self.gates(x) * x
        return temporal_shift(r, dim=1) + (x - r)


class ChannelShift(nn.Module):
    """Applies a shift to the leading ``count`` channels of a (B, L, C, H, W) tensor."""

    def __init__(self, channels: int, mode: str, fraction=Fraction(1, 4)):
        super().__init__()
        self.mode = mode
        self.count = shift_channel_count(channels, fraction) if mode != "none" else 0
        self.op = GateShift(self.count) if mode == "gsm" else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.mode == "none":
            return x
        part, rest = x[:, :, : self.count], x[:, :, self.count:]
        if self.mode == "gsm":
            part = self.op(part)
        else:
            part = temporal_shift(part, dim=1)
        return torch.cat([part, rest], dim=2)
