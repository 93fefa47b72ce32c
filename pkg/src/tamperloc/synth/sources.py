"""Bundled natural photographs usable as tampering sources without any download."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

SAMPLE_IMAGES = ("astronaut", "chelsea", "coffee", "rocket", "immunohistochemistry")


def write_builtin_sources(directory) -> Path:
    """Export scikit-image's bundled colour photographs as PNGs into ``directory``."""
    import skimage.data

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in SAMPLE_IMAGES:
        path = directory / f"{name}.png"
        if path.exists():
            continue
        Image.fromarray(np.asarray(getattr(skimage.data, name)())[..., :3]).save(path)
    return directory
