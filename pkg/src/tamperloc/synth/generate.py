"""Write a synthetic tampering corpus (images/, masks/, manifest.jsonl) from source photos."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..data import ManifestRecord, write_gray, write_manifest, write_rgb
from .degrade import DegradationSpec, degrade, to_uint8
from .manipulations import KINDS, TamperSample, copy_move, pristine, random_offset, remove_and_inpaint, splice
from .regions import random_region

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class SynthConfig:
    n: int = 100
    size: int = 32
    mix: dict = field(default_factory=lambda: {k: 0.25 for k in KINDS})
    degrade_prob: float = 0.3
    noise_sigma: tuple = (1.0, 3.0)
    jpeg_quality: tuple = (85, 100)
    blend_prob: float = 1.0
    min_area: float = 0.1
    max_area: float = 0.3
    crop_scale: tuple = (0.15, 0.5)

    def __post_init__(self):
        unknown = set(self.mix) - set(KINDS)
        if unknown:
            raise ValueError(f"unknown kinds in mix: {sorted(unknown)}")
        if any(v < 0 for v in self.mix.values()) or sum(self.mix.values()) <= 0:
            raise ValueError("mix weights must be non-negative and not all zero")
        if self.n < 1:
            raise ValueError("n must be positive")


def kind_counts(n: int, mix: dict) -> dict:
    """Largest-remainder apportionment of n samples over the mix weights."""
    total = sum(mix.get(k, 0.0) for k in KINDS)
    exact = {k: n * mix.get(k, 0.0) / total for k in KINDS}
    counts = {k: int(np.floor(v)) for k, v in exact.items()}
    short = n - sum(counts.values())
    for k in sorted(KINDS, key=lambda k: (-(exact[k] - counts[k]), KINDS.index(k)))[:short]:
        counts[k] += 1
    return counts


def load_sources(directory) -> list[np.ndarray]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"source directory {directory} does not exist")
    sources = []
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        try:
            with Image.open(path) as im:
                sources.append(np.asarray(im.convert("RGB")))
        except OSError as exc:
            log.warning("skipping unreadable source %s: %s", path, exc)
    return sources


def random_crop(rng: np.random.Generator, source: np.ndarray, size: int, scale: tuple) -> np.ndarray:
    h, w = source.shape[:2]
    side = int(rng.uniform(*scale) * min(h, w))
    side = max(min(side, min(h, w)), size)
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    crop = Image.fromarray(source[top:top + side, left:left + side])
    return np.asarray(crop.resize((size, size), Image.LANCZOS), dtype=np.float64) / 255.0


def make_sample(kind: str, sources: list, cfg: SynthConfig, seed: int) -> TamperSample:
    rng = np.random.default_rng(seed)
    size = cfg.size
    image = random_crop(rng, sources[rng.integers(len(sources))], size, cfg.crop_scale)
    if kind == "pristine":
        sample = pristine(image)
    elif kind == "copy_move":
        while True:
            region = random_region(rng, size, size, cfg.min_area, min(cfg.max_area, 0.15))
            offset = random_offset(rng, region.rasterize(size, size))
            if offset is not None:
                break
        sample = copy_move(image, region, offset)
    elif kind == "splice":
        donor = random_crop(rng, sources[rng.integers(len(sources))], size, cfg.crop_scale)
        region = random_region(rng, size, size, cfg.min_area, cfg.max_area)
        sample = splice(donor, image, region, blend=bool(rng.random() < cfg.blend_prob))
    else:
        region = random_region(rng, size, size, cfg.min_area, cfg.max_area)
        sample = remove_and_inpaint(image, region)
    sample.image = to_uint8(sample.image).astype(np.float64) / 255.0
    if rng.random() < cfg.degrade_prob:
        if rng.random() < 0.5:
            spec = DegradationSpec("gaussian_noise", round(float(rng.uniform(*cfg.noise_sigma)), 3))
        else:
            spec = DegradationSpec("jpeg", int(rng.integers(cfg.jpeg_quality[0], cfg.jpeg_quality[1] + 1)))
        sample.image = degrade(sample.image, spec, seed)
        sample.degradations.append(spec)
    return sample


def generate_dataset(sources_dir, out_dir, cfg: SynthConfig = SynthConfig(), seed: int = 0) -> Path:
    """Generate ``cfg.n`` samples; sample i uses seed ``seed + i``. Returns the manifest path."""
    sources = load_sources(sources_dir)
    if not sources:
        raise ValueError(f"no readable source images in {sources_dir}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    counts = kind_counts(cfg.n, cfg.mix)
    kinds = [k for k in KINDS for _ in range(counts[k])]
    order = np.random.default_rng(seed).permutation(len(kinds))
    records = []
    for i, j in enumerate(order):
        kind = kinds[j]
        sample_seed = seed + i
        sample = make_sample(kind, sources, cfg, sample_seed)
        name = f"{i:05d}.png"
        write_rgb(out / "images" / name, to_uint8(sample.image))
        write_gray(out / "masks" / name, sample.mask.astype(np.uint8) * 255)
        records.append(ManifestRecord(f"images/{name}", f"masks/{name}", sample.label, sample.kind,
                                      tuple(d.to_dict() for d in sample.degradations), sample_seed))
    if not records:
        raise ValueError("generation produced no samples")
    return write_manifest(out / "manifest.jsonl", records)
