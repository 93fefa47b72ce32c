import numpy as np
import pytest
import torch

from tamperloc.synth import SynthConfig, generate_dataset, write_builtin_sources


class TensorData:
    """Minimal in-memory dataset with the (images, masks, labels) indexing the trainer expects."""

    def __init__(self, images, masks, labels):
        self.images, self.masks, self.labels = images, masks, labels

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, idx):
        return self.images[idx], self.masks[idx], self.labels[idx]


def random_batch(n=8, size=32, seed=0):
    rng = np.random.default_rng(seed)
    images = torch.from_numpy(rng.uniform(0, 1, (n, 3, size, size)).astype(np.float32))
    masks = torch.zeros(n, 1, size, size)
    labels = torch.zeros(n)
    for i in range(0, n, 2):
        top, left = rng.integers(2, size // 2, 2)
        masks[i, 0, top:top + size // 4, left:left + size // 4] = 1
        images[i, :, top:top + size // 4, left:left + size // 4] *= 0.5
        labels[i] = 1
    return TensorData(images, masks, labels)


@pytest.fixture(scope="session")
def sources_dir(tmp_path_factory):
    return write_builtin_sources(tmp_path_factory.mktemp("sources"))


@pytest.fixture(scope="session")
def small_manifest(tmp_path_factory, sources_dir):
    out = tmp_path_factory.mktemp("small")
    return generate_dataset(sources_dir, out, SynthConfig(n=16, size=32), seed=3)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
