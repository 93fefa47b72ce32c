import json

import pytest
import torch

from conftest import random_batch
from tamperloc.model import TINY_CONFIG, ModelFault, TamperNet, joint_loss
from tamperloc.training import TrainConfig, Trainer, fit, load_checkpoint, model_from_checkpoint


def test_loss_strictly_decreases_on_fixed_batch():
    data = random_batch(8)
    trainer = Trainer(TamperNet(TINY_CONFIG), TrainConfig(lr=1e-4, batch_size=8))
    losses = [sum(trainer.step(data.images, data.masks, data.labels)) for _ in range(5)]
    with torch.no_grad():
        out = trainer.model(data.images)
        losses.append(joint_loss(data.labels, out.score, data.masks, out.mask).item())
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_augment_applies_same_transform_to_image_and_mask():
    data = random_batch(8)
    trainer = Trainer(TamperNet(TINY_CONFIG), TrainConfig(shuffle_seed=1))
    images, masks = trainer.augment(data.images, data.masks)
    assert images.shape == data.images.shape and masks.shape == data.masks.shape
    for i in range(8):
        assert masks[i].sum() == data.masks[i].sum()
        # darkened pixels stay under the mask
        lum = images[i].mean(0)
        if data.labels[i]:
            assert masks[i, 0].bool().equal(_transform_like(data.masks[i, 0], masks[i, 0]).bool())


def _transform_like(src, target):
    for t in (False, True):
        x = src.T if t else src
        for fy in (False, True):
            for fx in (False, True):
                y = x.flip(0) if fy else x
                y = y.flip(1) if fx else y
                if torch.equal(y, target):
                    return y
    raise AssertionError("no square symmetry maps the mask")


def test_resume_matches_uninterrupted(tmp_path):
    data = random_batch(12, seed=1)
    cfg = TrainConfig(lr=1e-3, batch_size=4, lr_step=2, shuffle_seed=5, augment=True)
    straight = Trainer(TamperNet(TINY_CONFIG), cfg)
    fit(straight, data, 4)

    first = Trainer(TamperNet(TINY_CONFIG), cfg)
    fit(first, data, 2, out_dir=tmp_path)
    state = load_checkpoint(tmp_path / "checkpoint.pt")
    resumed = Trainer(TamperNet(TINY_CONFIG), cfg)
    resumed.load_state_dict(state)
    fit(resumed, data, 4, out_dir=tmp_path)

    for (n, a), (_, b) in zip(straight.model.named_parameters(), resumed.model.named_parameters()):
        assert torch.equal(a, b), n
    assert [r["epoch"] for r in resumed.history] == [1, 2, 3, 4]
    lines = [json.loads(l) for l in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert [l["epoch"] for l in lines] == [1, 2, 3, 4]
    assert lines[2]["lr"] == pytest.approx(1e-4)


def test_checkpoint_restores_model(tmp_path):
    trainer = Trainer(TamperNet(TINY_CONFIG), TrainConfig(lr=1e-3, batch_size=4))
    fit(trainer, random_batch(4), 1)
    path = trainer.save(tmp_path / "c.pt")
    model = model_from_checkpoint(load_checkpoint(path))
    x = torch.rand(1, 3, 32, 32)
    trainer.model.eval()
    assert torch.equal(model(x).mask, trainer.model(x).mask)


def test_bad_checkpoint(tmp_path):
    torch.save({"hello": 1}, tmp_path / "x.pt")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.pt")
    torch.save({"format_version": 99}, tmp_path / "y.pt")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "y.pt")


def test_non_finite_weights_raise():
    model = TamperNet(TINY_CONFIG)
    with torch.no_grad():
        model.prototypes[0, 0] = float("inf")
    data = random_batch(2)
    with pytest.raises(ModelFault):
        Trainer(model, TrainConfig()).step(data.images, data.masks, data.labels)
