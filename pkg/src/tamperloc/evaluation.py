"""Metric reports, the distortion robustness grid and affinity-map export."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

from .data import ManifestDataset, to_tensor, write_gray
from .metrics import auc, eer_threshold, f1_at_threshold, has_both_classes
from .model import TamperNet
from .synth.degrade import gaussian_noise, jpeg_roundtrip
from .training import CHECKPOINT_VERSION, load_checkpoint, model_from_checkpoint

log = logging.getLogger(__name__)


# --- predictors -----------------------------------------------------------

class NetPredictor:
    def __init__(self, model: TamperNet, batch_size: int = 64):
        self.model = model.eval()
        self.batch_size = batch_size
        self.image_size = model.config.image_size

    @torch.no_grad()
    def predict(self, images: torch.Tensor, masks=None, labels=None):
        scores, maps = [], []
        for start in range(0, len(images), self.batch_size):
            out = self.model(images[start:start + self.batch_size])
            scores.append(out.score.double())
            maps.append(out.mask[:, 0].double())
        return torch.cat(scores).numpy(), torch.cat(maps).numpy()


class OraclePredictor:
    """Emits the ground truth it is handed; a reference point for the harness."""

    image_size = None

    def predict(self, images, masks=None, labels=None):
        if masks is None or labels is None:
            raise ValueError("the oracle needs ground truth")
        return np.asarray(labels, dtype=np.float64), np.asarray(masks, dtype=np.float64).reshape(len(images), *images.shape[-2:])


class ConstantPredictor:
    image_size = None

    def __init__(self, value: float = 0.5):
        self.value = float(value)

    def predict(self, images, masks=None, labels=None):
        b, _, h, w = images.shape
        return np.full(b, self.value), np.full((b, h, w), self.value)


def write_reference_checkpoint(path, kind: str = "oracle", value: float = 0.5, image_size: int = 32) -> Path:
    """Checkpoint for a non-learned predictor ("oracle" or "constant")."""
    if kind not in ("oracle", "constant"):
        raise ValueError(f"unknown reference predictor {kind!r}")
    state = {"format_version": CHECKPOINT_VERSION, "kind": kind, "value": float(value), "image_size": int(image_size)}
    torch.save(state, path)
    return Path(path)


def load_predictor(path, batch_size: int = 64):
    state = load_checkpoint(path)
    kind = state.get("kind", "model")
    if kind == "model":
        return NetPredictor(model_from_checkpoint(state), batch_size)
    if kind == "oracle":
        p = OraclePredictor()
    elif kind == "constant":
        p = ConstantPredictor(state["value"])
    else:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    p.image_size = state.get("image_size", 32)
    return p


# --- metric report --------------------------------------------------------

@dataclass
class MetricReport:
    pixel_auc: float
    image_auc: float
    pixel_f1: float
    image_f1: float
    eer_threshold: float
    n_images: int
    n_pixels: int
    n_skipped: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _mean(values) -> float:
    return math.fsum(values) / len(values) if values else float("nan")


def compute_report(scores, pred_masks, labels, masks, pixel_mode: str = "per_image", n_skipped: int = 0) -> MetricReport:
    """Image metrics over ``scores``; pixel metrics over the soft masks.

    ``per_image`` averages AUC and EER-F1 over images whose ground truth holds
    both classes; ``pooled`` treats all pixels as one population.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    pred_masks = np.asarray(pred_masks, dtype=np.float64).reshape(len(scores), -1)
    masks = np.asarray(masks).reshape(len(scores), -1).astype(int)

    if has_both_classes(labels):
        image_auc = auc(scores, labels)
        threshold = eer_threshold(scores, labels)
        image_f1 = f1_at_threshold(scores, labels, threshold)
    else:
        image_auc = image_f1 = threshold = float("nan")

    if pixel_mode == "per_image":
        keep = [i for i in range(len(masks)) if has_both_classes(masks[i])]
        aucs = [auc(pred_masks[i], masks[i]) for i in keep]
        f1s = [f1_at_threshold(pred_masks[i], masks[i], eer_threshold(pred_masks[i], masks[i])) for i in keep]
        pixel_auc, pixel_f1 = _mean(aucs), _mean(f1s)
        n_pixels = sum(masks[i].size for i in keep)
    elif pixel_mode == "pooled":
        flat_p, flat_m = pred_masks.ravel(), masks.ravel()
        if has_both_classes(flat_m):
            pixel_auc = auc(flat_p, flat_m)
            pixel_f1 = f1_at_threshold(flat_p, flat_m, eer_threshold(flat_p, flat_m))
        else:
            pixel_auc = pixel_f1 = float("nan")
        n_pixels = flat_m.size
    else:
        raise ValueError(f"unknown pixel mode {pixel_mode!r}")
    return MetricReport(pixel_auc, image_auc, pixel_f1, image_f1, threshold, len(scores), int(n_pixels), n_skipped)


def load_eval_set(manifest, image_size: int) -> ManifestDataset:
    ds = ManifestDataset(manifest, image_size)
    # canonical order so reports do not depend on manifest order
    order = sorted(range(len(ds)), key=lambda i: ds.records[i].image_path)
    ds.records = [ds.records[i] for i in order]
    ds.images, ds.masks, ds.labels = ds.images[order], ds.masks[order], ds.labels[order]
    return ds


def evaluate(predictor, manifest, pixel_mode: str = "per_image") -> MetricReport:
    ds = load_eval_set(manifest, predictor.image_size or 32)
    scores, maps = predictor.predict(ds.images, ds.masks[:, 0].numpy(), ds.labels.numpy())
    return compute_report(scores, maps, ds.labels.numpy(), ds.masks.numpy(), pixel_mode, ds.skipped)


# --- robustness -----------------------------------------------------------

@dataclass(frozen=True)
class Distortion:
    kind: str      # identity | resize | blur | noise | jpeg
    param: float = 0.0

    @property
    def label(self) -> str:
        p = self.param
        return {
            "identity": "no distortion",
            "resize": f"Resize ({p:g}x)",
            "blur": f"GaussianBlur (k={int(p)})",
            "noise": f"GaussianNoise (sigma={p:g})",
            "jpeg": f"JPEGCompress (q={int(p)})",
        }[self.kind]


DISTORTION_GRID = (
    Distortion("identity"),
    Distortion("resize", 0.78), Distortion("resize", 0.25),
    Distortion("blur", 3), Distortion("blur", 15),
    Distortion("noise", 3), Distortion("noise", 15),
    Distortion("jpeg", 100), Distortion("jpeg", 50),
)


def _resize(arr: np.ndarray, size: tuple[int, int], resample) -> np.ndarray:
    h, w = size
    if arr.ndim == 2:
        im = Image.fromarray(arr.astype(np.float32), "F")
        return np.asarray(im.resize((w, h), resample), dtype=np.float64)
    return np.stack([_resize(arr[..., c], size, resample) for c in range(arr.shape[2])], axis=-1)


def apply_distortion(image: np.ndarray, mask: np.ndarray, d: Distortion, seed: int = 0):
    """Distort an H x W x 3 image (and, for resizing, its mask); both come back at H x W."""
    h, w = mask.shape
    if d.kind == "identity":
        return image, mask
    if d.kind == "resize":
        small = (max(1, int(round(h * d.param))), max(1, int(round(w * d.param))))
        img = _resize(_resize(image, small, Image.BILINEAR), (h, w), Image.BILINEAR)
        msk = _resize(_resize(mask, small, Image.NEAREST), (h, w), Image.NEAREST)
        return np.clip(img, 0, 1).astype(image.dtype), msk.astype(mask.dtype)
    if d.kind == "blur":
        k = int(d.param)
        if k % 2 == 0:
            raise ValueError("blur kernel must be odd")
        img = gaussian_filter(image.astype(np.float64), sigma=(k / 6, k / 6, 0), radius=(k // 2, k // 2, 0), mode="mirror")
        return img.astype(image.dtype), mask
    if d.kind == "noise":
        return gaussian_noise(image, d.param, seed).astype(image.dtype), mask
    if d.kind == "jpeg":
        return jpeg_roundtrip(image, int(d.param)).astype(image.dtype), mask
    raise ValueError(f"unknown distortion {d.kind!r}")


def robustness_suite(predictor, manifest, grid=DISTORTION_GRID, seed: int = 0, pixel_mode: str = "per_image"):
    """Pixel (and image) AUC under each distortion; the identity row comes first."""
    grid = list(grid)
    if grid[0].kind != "identity":
        grid = [Distortion("identity")] + [d for d in grid if d.kind != "identity"]
    ds = load_eval_set(manifest, predictor.image_size or 32)
    base_images = ds.images.numpy().transpose(0, 2, 3, 1)
    base_masks = ds.masks[:, 0].numpy()
    labels = ds.labels.numpy()
    rows = []
    for d in grid:
        pairs = [apply_distortion(base_images[i], base_masks[i], d, seed + i) for i in range(len(ds))]
        images = torch.stack([to_tensor(np.ascontiguousarray(p[0], dtype=np.float32)) for p in pairs])
        masks = np.stack([p[1] for p in pairs])
        scores, maps = predictor.predict(images, masks, labels)
        report = compute_report(scores, maps, labels, masks, pixel_mode, ds.skipped)
        rows.append({"distortion": d.label, "kind": d.kind, "param": d.param,
                     "pixel_auc": report.pixel_auc, "image_auc": report.image_auc})
    return rows


def format_robustness(rows) -> str:
    lines = ["distortion\tpixel_auc\timage_auc"]
    lines += [f"{r['distortion']}\t{r['pixel_auc']:.6f}\t{r['image_auc']:.6f}" for r in rows]
    return "\n".join(lines) + "\n"


# --- visualisation --------------------------------------------------------

def affinity_maps(model: TamperNet, image: torch.Tensor) -> np.ndarray:
    """First-layer affinity averaged over heads, RGB half only: N x Hs x Ws."""
    model.eval()
    with torch.no_grad():
        out = model(image[None] if image.ndim == 3 else image[:1])
    s = model.config.grid_size
    a = out.affinities[0][0].mean(dim=0)[:, :s * s]
    return a.reshape(-1, s, s).double().numpy()


def normalize_to_uint8(values: np.ndarray) -> np.ndarray:
    """Min-max to [0, 255]; a constant map becomes all zeros."""
    lo, hi = values.min(), values.max()
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.clip(np.rint((values - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)


def export_affinity_maps(model: TamperNet, image: torch.Tensor, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for n, amap in enumerate(affinity_maps(model, image)):
        path = out_dir / f"prototype_{n:02d}.png"
        write_gray(path, normalize_to_uint8(amap))
        paths.append(path)
    return paths
