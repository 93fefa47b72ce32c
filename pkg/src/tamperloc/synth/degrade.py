"""Post-tampering quality degradations: additive Gaussian noise and JPEG round trips."""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class DegradationSpec:
    kind: str      # "gaussian_noise" (sigma on the 0-255 scale) or "jpeg" (quality)
    value: float

    def __post_init__(self):
        if self.kind == "gaussian_noise":
            if not self.value >= 0:
                raise ValueError(f"noise sigma must be >= 0, got {self.value}")
        elif self.kind == "jpeg":
            if not 1 <= self.value <= 100 or int(self.value) != self.value:
                raise ValueError(f"JPEG quality must be an integer in [1, 100], got {self.value}")
        else:
            raise ValueError(f"unknown degradation {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value}


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    """Baseline JPEG encode/decode through PIL; returns float in [0, 1]."""
    buf = io.BytesIO()
    arr = to_uint8(image)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode).save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    return np.asarray(Image.open(buf).convert(mode), dtype=np.float64) / 255.0


def gaussian_noise(image: np.ndarray, sigma: float, seed: int | None = None) -> np.ndarray:
    """Add N(0, (sigma/255)^2) noise and clip to [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if sigma == 0:
        return image.copy()
    rng = np.random.default_rng(seed)
    return np.clip(image + rng.normal(0.0, sigma / 255.0, image.shape), 0.0, 1.0)


def degrade(image: np.ndarray, spec: DegradationSpec, seed: int | None = None) -> np.ndarray:
    if spec.kind == "gaussian_noise":
        return gaussian_noise(image, spec.value, seed)
    return jpeg_roundtrip(image, int(spec.value))
