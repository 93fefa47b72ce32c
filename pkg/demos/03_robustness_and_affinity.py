"""Stress a trained checkpoint with the distortion grid and look at its prototypes.

Run demos/02_train_tiny.py first (or pass any checkpoint and manifest).

    python3 demos/03_robustness_and_affinity.py [checkpoint] [manifest]
"""
import sys
from pathlib import Path

from tamperloc.data import ManifestDataset
from tamperloc.evaluation import export_affinity_maps, format_robustness, load_predictor, robustness_suite

ckpt = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/train/run/checkpoint.pt")
manifest = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out/train/test/manifest.jsonl")
out = Path("demo_out/robustness")
out.mkdir(parents=True, exist_ok=True)

predictor = load_predictor(ckpt)
rows = robustness_suite(predictor, manifest)
print(format_robustness(rows), end="")

# Each prototype's first-layer attention over the RGB tokens of one tampered image.
data = ManifestDataset(manifest, predictor.image_size)
idx = next(i for i, r in enumerate(data.records) if r.label)
paths = export_affinity_maps(predictor.model, data.images[idx], out / "affinity")
print(f"{data.records[idx].kind} sample {data.records[idx].image_path}: wrote {len(paths)} maps to {out / 'affinity'}")
