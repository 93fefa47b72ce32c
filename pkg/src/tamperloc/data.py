"""Manifest records, PNG I/O and an in-memory torch dataset."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ManifestRecord:
    image_path: str
    mask_path: str
    label: int
    kind: str
    degradations: tuple = field(default_factory=tuple)
    seed: int = 0

    def to_json(self) -> str:
        d = {
            "image_path": self.image_path, "mask_path": self.mask_path, "label": self.label,
            "kind": self.kind, "degradations": [dict(x) for x in self.degradations], "seed": self.seed,
        }
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRecord":
        return cls(d["image_path"], d["mask_path"], int(d["label"]), d["kind"],
                   tuple(d.get("degradations", ())), int(d.get("seed", 0)))


def write_manifest(path, records) -> Path:
    path = Path(path)
    path.write_text("".join(r.to_json() + "\n" for r in records))
    return path


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(ManifestRecord.from_dict(json.loads(line)))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed manifest record ({exc})") from exc
    return records


def read_rgb(path, size: int | None = None) -> np.ndarray:
    """Load an image as float H x W x 3 in [0, 1], optionally resized (bilinear) to size x size."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        if size is not None and im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float32) / 255.0


def read_mask(path, size: int | None = None) -> np.ndarray:
    """Load a mask PNG as a {0, 1} float array; resizing uses nearest neighbour."""
    with Image.open(path) as im:
        im = im.convert("L")
        if size is not None and im.size != (size, size):
            im = im.resize((size, size), Image.NEAREST)
        return (np.asarray(im) > 127).astype(np.float32)


def write_rgb(path, image: np.ndarray) -> None:
    arr = image if image.dtype == np.uint8 else np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path, format="PNG")


def write_gray(path, values: np.ndarray) -> None:
    arr = values if values.dtype == np.uint8 else np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "L").save(path, format="PNG")


def to_tensor(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))


class ManifestDataset(torch.utils.data.Dataset):
    """Loads every record into memory; desk-scale corpora are small."""

    def __init__(self, manifest, size: int, skip_unreadable: bool = True):
        manifest = Path(manifest)
        root = manifest.parent
        self.records = []
        self.skipped = 0
        images, masks = [], []
        for rec in read_manifest(manifest):
            try:
                images.append(to_tensor(read_rgb(root / rec.image_path, size)))
                masks.append(torch.from_numpy(read_mask(root / rec.mask_path, size))[None])
            except OSError as exc:
                if not skip_unreadable:
                    raise
                log.warning("skipping unreadable sample %s: %s", rec.image_path, exc)
                self.skipped += 1
                continue
            self.records.append(rec)
        if not self.records:
            raise ValueError(f"no readable samples in {manifest}")
        self.images = torch.stack(images)
        self.masks = torch.stack(masks)
        self.labels = torch.tensor([float(r.label) for r in self.records])

    def __len__(self):
        return len(self.records)

    def __getitem__(self, idx):
        return self.images[idx], self.masks[idx], self.labels[idx]
