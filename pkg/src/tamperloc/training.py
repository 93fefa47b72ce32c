"""Adam training loop with step decay, seeded shuffling and resumable checkpoints."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import torch

from .data import ManifestDataset
from .model import ModelConfig, ModelFault, TamperNet, loss_terms

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 24
    epochs: int = 90
    lr_step: int = 30
    lr_gamma: float = 0.1
    checkpoint_every: int = 1
    shuffle_seed: int = 0
    augment: bool = False


PAPER_TRAIN = TrainConfig()
TINY_TRAIN = TrainConfig(lr=3e-3, batch_size=16, epochs=150, lr_step=120, lr_gamma=0.1, augment=True)


class Trainer:
    """Holds model, optimizer, scheduler and shuffle generator so they checkpoint together."""

    def __init__(self, model: TamperNet, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        self.scheduler = torch.optim.lr_scheduler.StepLR(self.optimizer, cfg.lr_step, cfg.lr_gamma)
        self.generator = torch.Generator().manual_seed(cfg.shuffle_seed)
        self.epoch = 0
        self.history: list[dict] = []

    def step(self, images, masks, labels) -> tuple[float, float]:
        self.model.train()
        out = self.model(images)
        cls, seg = loss_terms(labels, out.score, masks, out.mask)
        loss = cls + self.model.config.seg_weight * seg
        self.optimizer.zero_grad()
        loss.backward()
        for name, p in self.model.named_parameters():
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise ModelFault(f"gradient:{name}")
        self.optimizer.step()
        return cls.item(), seg.item()

    def augment(self, images, masks):
        """Per-sample random horizontal/vertical flips and transposes (the 8 square symmetries)."""
        flips = torch.rand(3, images.shape[0], generator=self.generator) < 0.5
        both = torch.cat([images, masks], dim=1)
        for flag, op in zip(flips, (lambda x: x.flip(-1), lambda x: x.flip(-2), lambda x: x.transpose(-1, -2))):
            both = torch.where(flag.view(-1, 1, 1, 1), op(both), both)
        return both[:, :-1], both[:, -1:]

    def run_epoch(self, dataset) -> dict:
        n = len(dataset)
        order = torch.randperm(n, generator=self.generator)
        sums = [0.0, 0.0]
        lr = self.optimizer.param_groups[0]["lr"]
        for start in range(0, n, self.cfg.batch_size):
            idx = order[start:start + self.cfg.batch_size]
            images, masks, labels = dataset[idx]
            if self.cfg.augment:
                images, masks = self.augment(images, masks)
            cls, seg = self.step(images, masks, labels)
            sums[0] += cls * len(idx)
            sums[1] += seg * len(idx)
        self.scheduler.step()
        self.epoch += 1
        record = {"epoch": self.epoch, "loss_cls": sums[0] / n, "loss_seg": sums[1] / n, "lr": lr}
        self.history.append(record)
        return record

    def state_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "kind": "model",
            "model_config": self.model.config.to_dict(),
            "train_config": asdict(self.cfg),
            "model": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "scheduler": self.scheduler.state_dict(),
            "generator": self.generator.get_state(),
            "epoch": self.epoch,
            "history": self.history,
        }

    def load_state_dict(self, state: dict) -> None:
        self.model.load_state_dict(state["model"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.scheduler.load_state_dict(state["scheduler"])
        self.generator.set_state(state["generator"])
        self.epoch = state["epoch"]
        self.history = list(state["history"])

    def save(self, path) -> Path:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        torch.save(self.state_dict(), tmp)
        tmp.replace(path)
        return path


def load_checkpoint(path) -> dict:
    state = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(state, dict) or "format_version" not in state:
        raise ValueError(f"{path} is not a checkpoint")
    if state["format_version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {state['format_version']}")
    return state


def model_from_checkpoint(state: dict) -> TamperNet:
    model = TamperNet(ModelConfig.from_dict(state["model_config"]))
    model.load_state_dict(state["model"])
    model.eval()
    return model


def fit(trainer: Trainer, dataset, epochs: int | None = None, out_dir=None, callback=None) -> list[dict]:
    """Train until ``epochs`` (default: the config's) total epochs have run."""
    epochs = trainer.cfg.epochs if epochs is None else epochs
    metrics = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics = (out_dir / "metrics.jsonl").open("a")
    try:
        while trainer.epoch < epochs:
            record = trainer.run_epoch(dataset)
            log.info("epoch %d loss_cls %.4f loss_seg %.4f lr %.2e", record["epoch"], record["loss_cls"],
                     record["loss_seg"], record["lr"])
            if metrics is not None:
                metrics.write(json.dumps(record) + "\n")
                metrics.flush()
                if trainer.epoch % trainer.cfg.checkpoint_every == 0 or trainer.epoch == epochs:
                    trainer.save(out_dir / "checkpoint.pt")
            if callback is not None:
                callback(trainer, record)
    finally:
        if metrics is not None:
            metrics.close()
    return trainer.history


def train(manifest, model_cfg: ModelConfig, train_cfg: TrainConfig, out_dir, resume=None) -> Path:
    dataset = ManifestDataset(manifest, model_cfg.image_size)
    trainer = Trainer(TamperNet(model_cfg), train_cfg)
    if resume is not None:
        state = load_checkpoint(resume)
        if ModelConfig.from_dict(state["model_config"]) != model_cfg:
            raise ValueError("checkpoint was trained with a different model config")
        trainer.load_state_dict(state)
    fit(trainer, dataset, out_dir=out_dir)
    return Path(out_dir) / "checkpoint.pt"
