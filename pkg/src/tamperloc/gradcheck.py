"""Central finite-difference verification of autograd gradients, per parameter tensor."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn

from .model import TINY_CONFIG, ModelConfig, TamperNet, joint_loss
from .synth.regions import random_region

TOLERANCE = 1e-4


@dataclass
class GroupResult:
    name: str
    numel: int
    max_abs_error: float
    scale: float
    rel_error: float

    @property
    def passed(self) -> bool:
        return self.rel_error < TOLERANCE


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> tuple[float, float, float]:
    """max|a - n| / max(max|a|, max|n|); 0 when both gradients vanish."""
    err = (analytic - numeric).abs().max().item() if analytic.numel() else 0.0
    scale = max(analytic.abs().max().item(), numeric.abs().max().item()) if analytic.numel() else 0.0
    return err, scale, (err / scale if scale > 0 else err)


@torch.no_grad()
def numeric_gradient(fn: Callable[[], torch.Tensor], param: torch.Tensor, step: float = 1e-5) -> torch.Tensor:
    grad = torch.zeros_like(param)
    flat, gflat = param.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + step
        up = fn().item()
        flat[i] = orig - step
        down = fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def check_gradients(fn: Callable[[], torch.Tensor], params: dict[str, torch.Tensor], step: float = 1e-5,
                    corrupt: str | None = None) -> list[GroupResult]:
    """Compare autograd against central differences for each named tensor.

    ``corrupt`` names a group whose analytic gradient is deliberately
    perturbed, to exercise the failure path.
    """
    if corrupt is not None and corrupt not in params:
        raise KeyError(f"no parameter group named {corrupt!r}")
    for p in params.values():
        p.grad = None
    fn().backward()
    results = []
    for name, p in params.items():
        analytic = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        if name == corrupt:
            analytic = analytic * 1.5 + 1e-3
        numeric = numeric_gradient(fn, p.data, step)
        err, scale, rel = relative_error(analytic, numeric)
        results.append(GroupResult(name, p.numel(), err, scale, rel))
    return results


def gradcheck_inputs(config: ModelConfig, batch: int = 2, seed: int = 0):
    """A seeded batch with one tampered and one pristine image."""
    rng = np.random.default_rng(seed)
    size = config.image_size
    images = torch.from_numpy(rng.uniform(0, 1, (batch, 3, size, size)))
    masks = torch.zeros(batch, 1, size, size, dtype=torch.float64)
    labels = torch.zeros(batch, dtype=torch.float64)
    for b in range(0, batch, 2):
        region = random_region(rng, size, size, 0.05, 0.2).rasterize(size, size)
        masks[b, 0] = torch.from_numpy(region.astype(np.float64))
        labels[b] = 1.0
    return images, masks, labels


def model_gradcheck(config: ModelConfig = TINY_CONFIG, seed: int = 0, step: float = 1e-5,
                    corrupt: str | None = None) -> list[GroupResult]:
    """Finite-difference check of the joint loss w.r.t. every model parameter (float64)."""
    model = TamperNet(config).double()
    images, masks, labels = gradcheck_inputs(config, seed=seed)

    def loss():
        out = model(images)
        return joint_loss(labels, out.score, masks, out.mask, config.seg_weight)

    return check_gradients(loss, dict(model.named_parameters()), step, corrupt)


def format_results(results: list[GroupResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'group':<{width}}  {'numel':>6}  {'rel_error':>10}  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.numel:>6}  {r.rel_error:>10.3e}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)


def module_gradcheck(module: nn.Module, fn: Callable[[], torch.Tensor], step: float = 1e-5) -> list[GroupResult]:
    return check_gradients(fn, dict(module.named_parameters()), step)
