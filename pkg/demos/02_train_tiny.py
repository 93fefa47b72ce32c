"""Train the desk-scale model on a synthetic corpus and score a held-out split.

Everything runs on CPU. The default sizes (200 train, 60 test, 40 epochs)
take a few minutes. Pass larger numbers to get closer to the acceptance setup
(500 / 100 and the preset's epoch count).

    python3 demos/02_train_tiny.py [n_train] [n_test] [epochs]
"""
import dataclasses
import sys
import time
from pathlib import Path

from tamperloc.config import preset
from tamperloc.data import ManifestDataset
from tamperloc.evaluation import NetPredictor, evaluate
from tamperloc.model import TamperNet
from tamperloc.synth import generate_dataset, write_builtin_sources
from tamperloc.training import Trainer, fit

n_train, n_test, epochs = (int(a) for a in (sys.argv[1:] + ["200", "60", "40"][len(sys.argv) - 1:]))
out = Path("demo_out/train")
cfg = preset(tiny=True)

sources = write_builtin_sources(out / "sources")
train_manifest = generate_dataset(sources, out / "train", dataclasses.replace(cfg.synth, n=n_train), seed=0)
# disjoint sample seeds for the held-out split
test_manifest = generate_dataset(sources, out / "test", dataclasses.replace(cfg.synth, n=n_test), seed=100_000)

trainer = Trainer(TamperNet(cfg.model), dataclasses.replace(cfg.train, epochs=epochs))
data = ManifestDataset(train_manifest, cfg.model.image_size)
start = time.perf_counter()


def progress(tr, record):
    if record["epoch"] % 10 == 0 or record["epoch"] == epochs:
        print(f"epoch {record['epoch']:3d}  cls {record['loss_cls']:.3f}  seg {record['loss_seg']:.3f}  "
              f"{time.perf_counter() - start:.0f}s")


fit(trainer, data, out_dir=out / "run", callback=progress)

report = evaluate(NetPredictor(trainer.model), test_manifest)
print(report.to_json())
print(f"checkpoint: {out / 'run' / 'checkpoint.pt'}")
