"""Convolutional stems and the multimodal patch sequence.

Feature grids are kept channels-first (B x C x Hs x Ws) as torch expects;
token matrices are B x L x C with row-major token order t = r * Ws + c.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

ACTIVATIONS = ("gelu", "none")


@dataclass(frozen=True)
class StemLayer:
    kernel: int
    channels: int
    stride: int = 1
    activation: str = "gelu"

    def __post_init__(self):
        if self.kernel < 1 or self.channels < 1 or self.stride < 1:
            raise ValueError(f"invalid stem layer {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")

    @classmethod
    def from_list(cls, item: Sequence) -> "StemLayer":
        return cls(int(item[0]), int(item[1]), int(item[2]), str(item[3]) if len(item) > 3 else "gelu")

    def to_list(self) -> list:
        return [self.kernel, self.channels, self.stride, self.activation]


def stem_stride(layers: Sequence[StemLayer]) -> int:
    return math.prod(layer.stride for layer in layers)


class ConvStem(nn.Sequential):
    """A short stack of strided convolutions with 'same'-style padding."""

    def __init__(self, in_channels: int, layers: Sequence[StemLayer]):
        if not layers:
            raise ValueError("stem needs at least one layer")
        modules = []
        channels = in_channels
        for layer in layers:
            modules.append(nn.Conv2d(channels, layer.channels, layer.kernel, layer.stride, padding=layer.kernel // 2))
            if layer.activation == "gelu":
                modules.append(nn.GELU())
            channels = layer.channels
        super().__init__(*modules)
        self.in_channels = in_channels
        self.out_channels = channels
        self.stride = stem_stride(layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_channels:
            raise ValueError(f"stem expects {self.in_channels} input channels, got {x.shape[1]}")
        return super().forward(x)


def extract_rgb_features(images: torch.Tensor, stem: ConvStem) -> torch.Tensor:
    return stem(images)


def extract_freq_features(xh: torch.Tensor, stem: ConvStem) -> torch.Tensor:
    return stem(xh)


def patchify(grid: torch.Tensor) -> torch.Tensor:
    """B x C x Hs x Ws -> B x (Hs*Ws) x C, row-major."""
    return grid.flatten(2).transpose(1, 2)


def unpatchify(tokens: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Inverse of :func:`patchify`."""
    b, length, c = tokens.shape
    if length != height * width:
        raise ValueError(f"{length} tokens cannot fill a {height}x{width} grid")
    return tokens.transpose(1, 2).reshape(b, c, height, width)


def sinusoidal_positions(length: int, width: int, dtype=torch.float32) -> torch.Tensor:
    """pos[t, 2j] = sin(t / 10000^(2j/C)), pos[t, 2j+1] = cos(same)."""
    if width % 2:
        raise ValueError(f"positional width must be even, got {width}")
    t = torch.arange(length, dtype=torch.float64)[:, None]
    freq = 10000.0 ** (torch.arange(0, width, 2, dtype=torch.float64) / width)
    pos = torch.empty(length, width, dtype=torch.float64)
    pos[:, 0::2] = torch.sin(t / freq)
    pos[:, 1::2] = torch.cos(t / freq)
    return pos.to(dtype)


def build_multimodal_embedding(gr: torch.Tensor, gf: torch.Tensor, positions: torch.Tensor | None = None) -> torch.Tensor:
    """Concatenate RGB and frequency tokens (in that order) and add positions."""
    if gr.shape != gf.shape:
        raise ValueError(f"RGB grid {tuple(gr.shape)} and frequency grid {tuple(gf.shape)} differ")
    tokens = torch.cat([patchify(gr), patchify(gf)], dim=1)
    if positions is None:
        positions = sinusoidal_positions(tokens.shape[1], tokens.shape[2], tokens.dtype)
    return tokens + positions.to(tokens.dtype)
