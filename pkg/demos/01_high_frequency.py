"""Where does the high-frequency residual live?

Splices and inpainted regions tend to disturb fine texture, so the model gets
a second input stream: the luminance with its low DCT band removed. This
script shows that stream for a tampered sample and how its energy falls off
as the cut-off grows.

    python3 demos/01_high_frequency.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from tamperloc.data import write_gray, write_rgb
from tamperloc.evaluation import normalize_to_uint8
from tamperloc.frequency import extract_high_frequency
from tamperloc.synth import SynthConfig, write_builtin_sources
from tamperloc.synth.degrade import to_uint8
from tamperloc.synth.generate import load_sources, make_sample

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/hfe")
out.mkdir(parents=True, exist_ok=True)

sources = load_sources(write_builtin_sources(out / "sources"))
cfg = SynthConfig(size=128, degrade_prob=0.0)
sample = make_sample("removal", sources, cfg, seed=7)

write_rgb(out / "tampered.png", to_uint8(sample.image))
write_gray(out / "mask.png", sample.mask * 255)

# The inpainted blob is smooth, so it shows up as a hole in the residual.
xh = extract_high_frequency(sample.image, 0.1)[..., 0]
write_gray(out / "high_freq.png", normalize_to_uint8(np.abs(xh)))

inside = np.abs(xh[sample.mask > 0]).mean()
outside = np.abs(xh[sample.mask == 0]).mean()
print(f"mean |residual| inside the removed region {inside:.4f}, elsewhere {outside:.4f}")

print("alpha  residual energy")
for alpha in (0.0, 0.05, 0.1, 0.2, 0.4, 0.8):
    energy = float(np.sum(extract_high_frequency(sample.image, alpha).astype(np.float64) ** 2))
    print(f"{alpha:5.2f}  {energy:10.3f}")
print(f"wrote {out}")
