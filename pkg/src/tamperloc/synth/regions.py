"""Parametric object-like regions (ellipses and star-shaped polygons)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from skimage.draw import ellipse as draw_ellipse, polygon as draw_polygon

MIN_AREA_FRACTION = 0.01
MAX_AREA_FRACTION = 0.3


@dataclass(frozen=True)
class RegionSpec:
    shape: str                     # "ellipse" or "polygon"
    center: tuple[float, float] = (0.0, 0.0)   # (row, col)
    axes: tuple[float, float] = (1.0, 1.0)     # (row radius, col radius), ellipse only
    rotation: float = 0.0
    vertices: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.shape not in ("ellipse", "polygon"):
            raise ValueError(f"unknown region shape {self.shape!r}")
        if self.shape == "polygon" and len(self.vertices) < 3:
            raise ValueError("polygon needs at least three vertices")

    def rasterize(self, height: int, width: int) -> np.ndarray:
        mask = np.zeros((height, width), dtype=bool)
        if self.shape == "ellipse":
            rr, cc = draw_ellipse(self.center[0], self.center[1], self.axes[0], self.axes[1],
                                  shape=(height, width), rotation=self.rotation)
        else:
            v = np.asarray(self.vertices, dtype=float)
            rr, cc = draw_polygon(v[:, 0], v[:, 1], shape=(height, width))
        mask[rr, cc] = True
        return mask

    def translated(self, dy: float, dx: float) -> "RegionSpec":
        return RegionSpec(self.shape, (self.center[0] + dy, self.center[1] + dx), self.axes, self.rotation,
                          tuple((y + dy, x + dx) for y, x in self.vertices))


def inside_with_margin(mask: np.ndarray, margin: int = 1) -> bool:
    """True if no masked pixel lies within ``margin`` pixels of the image border."""
    if margin <= 0:
        return True
    return not (mask[:margin].any() or mask[-margin:].any() or mask[:, :margin].any() or mask[:, -margin:].any())


def area_fraction(mask: np.ndarray) -> float:
    return float(mask.sum()) / mask.size


def validate_region(mask: np.ndarray, min_frac=MIN_AREA_FRACTION, max_frac=MAX_AREA_FRACTION, margin: int = 1):
    frac = area_fraction(mask)
    if not min_frac <= frac <= max_frac:
        raise ValueError(f"region covers {frac:.3f} of the image, outside [{min_frac}, {max_frac}]")
    if not inside_with_margin(mask, margin):
        raise ValueError("region touches the image border")


def random_region(rng: np.random.Generator, height: int, width: int, min_frac: float = 0.03,
                  max_frac: float = 0.2, margin: int = 1, max_tries: int = 200) -> RegionSpec:
    """Sample an ellipse or star polygon whose raster area lies in [min_frac, max_frac]."""
    lo, hi = max(min_frac, MIN_AREA_FRACTION), min(max_frac, MAX_AREA_FRACTION)
    for _ in range(max_tries):
        target = rng.uniform(lo, hi) * height * width
        aspect = np.exp(rng.uniform(np.log(0.5), np.log(2.0)))
        if rng.random() < 0.5:
            ry = np.sqrt(target * aspect / np.pi)
            rx = target / (np.pi * ry)
            ext = max(ry, rx) + margin + 1
            if 2 * ext >= min(height, width):
                continue
            cy = rng.uniform(ext, height - ext)
            cx = rng.uniform(ext, width - ext)
            region = RegionSpec("ellipse", (cy, cx), (ry, rx), rng.uniform(-np.pi, np.pi))
        else:
            k = int(rng.integers(5, 9))
            angles = np.sort(rng.uniform(0, 2 * np.pi, k))
            radii = rng.uniform(0.6, 1.0, k)
            # polygon area for unit scale, then rescale to the target area
            xs, ys = radii * np.cos(angles) * np.sqrt(aspect), radii * np.sin(angles) / np.sqrt(aspect)
            unit_area = 0.5 * abs(np.dot(xs, np.roll(ys, 1)) - np.dot(ys, np.roll(xs, 1)))
            if unit_area <= 1e-6:
                continue
            scale = np.sqrt(target / unit_area)
            ys, xs = ys * scale, xs * scale
            ext_y, ext_x = np.abs(ys).max() + margin + 1, np.abs(xs).max() + margin + 1
            if 2 * ext_y >= height or 2 * ext_x >= width:
                continue
            cy = rng.uniform(ext_y, height - ext_y)
            cx = rng.uniform(ext_x, width - ext_x)
            region = RegionSpec("polygon", (cy, cx), vertices=tuple(zip((ys + cy).tolist(), (xs + cx).tolist())))
        mask = region.rasterize(height, width)
        try:
            validate_region(mask, MIN_AREA_FRACTION, MAX_AREA_FRACTION, margin)
        except ValueError:
            continue
        return region
    raise RuntimeError(f"could not place a region in a {height}x{width} image")
