"""Tampering operations. Images are float H x W x 3 arrays in [0, 1]."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .degrade import DegradationSpec
from .regions import RegionSpec, inside_with_margin
from .solvers import diffusion_fill, poisson_blend

KINDS = ("pristine", "copy_move", "splice", "removal")


@dataclass
class TamperSample:
    image: np.ndarray
    mask: np.ndarray
    label: int
    kind: str
    degradations: list[DegradationSpec] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        tampered = bool(self.mask.any())
        if tampered != (self.kind != "pristine") or self.label != int(tampered):
            raise ValueError(f"inconsistent sample: kind={self.kind}, label={self.label}, mask pixels={self.mask.sum()}")


def _region_mask(region, shape) -> np.ndarray:
    if isinstance(region, RegionSpec):
        return region.rasterize(*shape)
    return np.asarray(region, dtype=bool)


def _shift(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    h, w = mask.shape
    out = np.zeros_like(mask)
    ys, xs = np.nonzero(mask)
    ys, xs = ys + dy, xs + dx
    if ys.min() < 0 or xs.min() < 0 or ys.max() >= h or xs.max() >= w:
        raise ValueError("translated region leaves the image")
    out[ys, xs] = True
    return out


def pristine(image: np.ndarray) -> TamperSample:
    return TamperSample(np.asarray(image, dtype=np.float64).copy(), np.zeros(image.shape[:2], np.uint8), 0, "pristine")


def copy_move(image: np.ndarray, region, offset: tuple[int, int], seed: int | None = None) -> TamperSample:
    """Copy the pixels under ``region`` to the same shape shifted by ``offset = (dx, dy)``."""
    image = np.asarray(image, dtype=np.float64)
    src = _region_mask(region, image.shape[:2])
    dx, dy = int(offset[0]), int(offset[1])
    dst = _shift(src, dy, dx)
    if (src & dst).any():
        raise ValueError("destination overlaps the source region")
    out = image.copy()
    ys, xs = np.nonzero(src)
    out[ys + dy, xs + dx] = image[ys, xs]
    return TamperSample(out, dst, 1, "copy_move")


def splice(src: np.ndarray, dst: np.ndarray, region, blend: bool = True, seed: int | None = None) -> TamperSample:
    """Paste ``src`` into ``dst`` under ``region``, optionally Poisson-blended."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape:
        raise ValueError(f"source {src.shape} and destination {dst.shape} differ in size")
    mask = _region_mask(region, dst.shape[:2])
    if blend:
        out = np.clip(poisson_blend(src, dst, mask), 0.0, 1.0)
    else:
        out = dst.copy()
        out[mask] = src[mask]
    return TamperSample(out, mask, 1, "splice")


def remove_and_inpaint(image: np.ndarray, region, seed: int | None = None) -> TamperSample:
    """Erase ``region`` and refill it by harmonic diffusion from its boundary."""
    image = np.asarray(image, dtype=np.float64)
    mask = _region_mask(region, image.shape[:2])
    out = diffusion_fill(image, mask)
    return TamperSample(out, mask, 1, "removal")


def random_offset(rng: np.random.Generator, mask: np.ndarray, margin: int = 1, max_tries: int = 200):
    """Pick (dx, dy) so the moved region stays inside the margin and misses the source."""
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    for _ in range(max_tries):
        dy = int(rng.integers(margin - ys.min(), h - margin - ys.max()))
        dx = int(rng.integers(margin - xs.min(), w - margin - xs.max()))
        if dy == 0 and dx == 0:
            continue
        moved = _shift(mask, dy, dx)
        if not (moved & mask).any() and inside_with_margin(moved, margin):
            return dx, dy
    return None
