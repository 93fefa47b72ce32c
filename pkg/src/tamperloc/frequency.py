"""DCT round trip and high-pass filtering for the high-frequency companion image.

The numpy functions here are the reference path. ``HighFrequencyExtractor``
is the batched torch equivalent used inside the network; it applies the same
orthonormal DCT as two matrix products so both paths agree to float precision.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
import torch
from torch import nn

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class HighPassSpec:
    alpha: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains NaN or Inf")


def to_luminance(image: np.ndarray) -> np.ndarray:
    """BT.601 luma of an H x W x 3 image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {image.shape}")
    r, g, b = LUMA_WEIGHTS
    return r * image[..., 0] + g * image[..., 1] + b * image[..., 2]


def dct2(channel: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D type-II DCT of a single channel."""
    channel = np.asarray(channel, dtype=np.float64)
    if channel.ndim != 2 or min(channel.shape) < 1:
        raise ValueError(f"expected a non-empty 2-D grid, got shape {channel.shape}")
    _check_finite(channel)
    return scipy.fft.dctn(channel, type=2, norm="ortho")


def idct2(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct2`."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or min(coeffs.shape) < 1:
        raise ValueError(f"expected a non-empty 2-D grid, got shape {coeffs.shape}")
    _check_finite(coeffs)
    return scipy.fft.idctn(coeffs, type=2, norm="ortho")


def high_pass_mask(height: int, width: int, spec: HighPassSpec | float) -> np.ndarray:
    """Binary mask that zeroes coefficients with u + v < alpha * (H + W)."""
    if not isinstance(spec, HighPassSpec):
        spec = HighPassSpec(float(spec))
    if height < 1 or width < 1:
        raise ValueError("mask dimensions must be positive")
    u = np.arange(height)[:, None]
    v = np.arange(width)[None, :]
    return (u + v >= spec.alpha * (height + width)).astype(np.float64)


def extract_high_frequency(image: np.ndarray, spec: HighPassSpec | float = HighPassSpec()) -> np.ndarray:
    """High-frequency component of the image luminance, shape H x W x 1."""
    luma = to_luminance(image)
    _check_finite(luma)
    mask = high_pass_mask(*luma.shape, spec)
    return idct2(mask * dct2(luma))[..., None]


def dct_matrix(n: int, dtype=torch.float64) -> torch.Tensor:
    """Orthonormal DCT-II basis as an n x n matrix (rows are frequencies)."""
    k = torch.arange(n, dtype=torch.float64)[:, None]
    i = torch.arange(n, dtype=torch.float64)[None, :]
    basis = torch.cos(torch.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    basis[0] /= np.sqrt(2.0)
    return basis.to(dtype)


class HighFrequencyExtractor(nn.Module):
    """Batched torch version of :func:`extract_high_frequency`.

    Maps B x 3 x H x W images in [0, 1] to B x 1 x H x W high-frequency maps.
    """

    def __init__(self, height: int, width: int, alpha: float = 0.1):
        super().__init__()
        self.register_buffer("dct_h", dct_matrix(height, torch.float32), persistent=False)
        self.register_buffer("dct_w", dct_matrix(width, torch.float32), persistent=False)
        self.register_buffer(
            "mask", torch.from_numpy(high_pass_mask(height, width, alpha)).float(), persistent=False
        )
        self.register_buffer("luma", torch.tensor(LUMA_WEIGHTS).view(1, 3, 1, 1), persistent=False)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        luma = (images * self.luma).sum(dim=1, keepdim=True)
        coeffs = self.dct_h @ luma @ self.dct_w.T
        return self.dct_h.T @ (coeffs * self.mask) @ self.dct_w
