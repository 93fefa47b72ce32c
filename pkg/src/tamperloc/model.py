"""Full detection/localization network, its configuration and the joint loss."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import ConvStem, StemLayer, build_multimodal_embedding, sinusoidal_positions, stem_stride
from .decoder import PatchDecoderLayer, tokens_to_grid
from .encoder import ObjectEncoderLayer
from .frequency import HighFrequencyExtractor

BCE_EPS = 1e-7

DEFAULT_STEM = (
    StemLayer(3, 16, 2), StemLayer(3, 32, 2), StemLayer(3, 48, 2), StemLayer(3, 64, 2, "none"),
)
TINY_STEM = (StemLayer(3, 16, 1), StemLayer(3, 16, 2), StemLayer(3, 8, 2, "none"))


class ModelFault(RuntimeError):
    """Non-finite activations or gradients, tagged with the stage that produced them."""

    def __init__(self, stage: str):
        super().__init__(f"non-finite values produced at stage '{stage}'")
        self.stage = stage


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 256
    stem: tuple[StemLayer, ...] = DEFAULT_STEM
    num_objects: int = 16
    heads: int = 4
    depth: int = 8
    window: int = 3
    alpha: float = 0.1
    ff_dim: int = 128
    head_channels: int = 32
    seg_weight: float = 1.0
    use_hfe: bool = True
    use_bcim: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stem", tuple(
            s if isinstance(s, StemLayer) else StemLayer.from_list(s) for s in self.stem))
        if self.width % 2:
            raise ValueError("token width must be even for sinusoidal positions")
        if self.width % self.heads:
            raise ValueError(f"token width {self.width} not divisible by {self.heads} heads")
        ratio = self.stride
        if self.image_size % ratio or ratio & (ratio - 1):
            raise ValueError(f"stem stride {ratio} must be a power of two dividing image size {self.image_size}")
        if self.window % 2 == 0:
            raise ValueError("BCIM window must be odd")
        if self.num_objects < 1 or self.depth < 1:
            raise ValueError("need at least one prototype and one layer")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def width(self) -> int:
        return self.stem[-1].channels

    @property
    def stride(self) -> int:
        return stem_stride(self.stem)

    @property
    def grid_size(self) -> int:
        return self.image_size // self.stride

    @property
    def tokens_per_modality(self) -> int:
        return self.grid_size ** 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stem"] = [s.to_list() for s in self.stem]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def with_overrides(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


PAPER_CONFIG = ModelConfig()
TINY_CONFIG = ModelConfig(image_size=32, stem=TINY_STEM, num_objects=2, heads=1, depth=1, window=3,
                          ff_dim=32, head_channels=16)


class PredictionOutput(NamedTuple):
    score: torch.Tensor        # B, tamper probability
    mask: torch.Tensor         # B x 1 x H x W, per-pixel tamper probability
    affinities: list           # per encoder layer, B x h x N x 2L


class ClassificationHead(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.fc = nn.Linear(channels, 1)

    def forward(self, g_out: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.fc(g_out.mean(dim=(2, 3)))).squeeze(-1)


class LocalizationHead(nn.Module):
    """log2(stride) x (bilinear 2x upsample -> 3x3 conv -> GELU), then a 1-channel conv."""

    def __init__(self, in_channels: int, stride: int, channels: int = 32):
        super().__init__()
        stages = int(round(math.log2(stride)))
        if 2 ** stages != stride:
            raise ValueError(f"stride {stride} is not a power of two")
        self.convs = nn.ModuleList()
        c = in_channels
        for _ in range(stages):
            self.convs.append(nn.Conv2d(c, channels, 3, padding=1))
            c = channels
        self.out = nn.Conv2d(c, 1, 3, padding=1)

    def forward(self, g_out: torch.Tensor) -> torch.Tensor:
        x = g_out
        for conv in self.convs:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = F.gelu(conv(x))
        return torch.sigmoid(self.out(x))


class TamperNet(nn.Module):
    def __init__(self, config: ModelConfig = PAPER_CONFIG):
        super().__init__()
        self.config = config
        c = config.width
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.hfe = HighFrequencyExtractor(config.image_size, config.image_size, config.alpha)
            self.rgb_stem = ConvStem(3, config.stem)
            self.freq_stem = ConvStem(1, config.stem)
            # stands in for frequency tokens when the HFE branch is ablated
            self.freq_placeholder = nn.Parameter(torch.zeros(config.tokens_per_modality, c))
            self.prototypes = nn.Parameter(torch.randn(config.num_objects, c) * 0.02)
            self.encoders = nn.ModuleList(
                ObjectEncoderLayer(c, config.num_objects, config.heads, config.ff_dim) for _ in range(config.depth))
            self.decoders = nn.ModuleList(
                PatchDecoderLayer(c, config.heads, config.ff_dim, config.window, config.use_bcim)
                for _ in range(config.depth))
            self.cls_head = ClassificationHead(2 * c)
            self.loc_head = LocalizationHead(2 * c, config.stride, config.head_channels)
        self.register_buffer("positions", sinusoidal_positions(2 * config.tokens_per_modality, c), persistent=False)
        self.check_finite = True

    def _check(self, x: torch.Tensor, stage: str) -> None:
        if self.check_finite and not torch.isfinite(x).all():
            raise ModelFault(stage)

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if images.shape[-2:] != (cfg.image_size, cfg.image_size):
            raise ValueError(f"expected {cfg.image_size}x{cfg.image_size} input, got {tuple(images.shape[-2:])}")
        gr = self.rgb_stem(images)
        self._check(gr, "rgb_stem")
        if cfg.use_hfe:
            gf = self.freq_stem(self.hfe(images))
            self._check(gf, "freq_stem")
        else:
            b, _, h, w = gr.shape
            gf = self.freq_placeholder.T.reshape(1, -1, h, w).expand(b, -1, -1, -1)
        return build_multimodal_embedding(gr, gf, self.positions)

    def forward(self, images: torch.Tensor) -> PredictionOutput:
        s = self.config.grid_size
        p = self.embed(images)
        o = self.prototypes.unsqueeze(0).expand(p.shape[0], -1, -1)
        affinities = []
        for i, (enc, dec) in enumerate(zip(self.encoders, self.decoders)):
            o, a = enc(o, p)
            self._check(o, f"encoder{i}")
            p = dec(p, o, s, s)
            self._check(p, f"decoder{i}")
            affinities.append(a)
        g_out = tokens_to_grid(p, s, s)
        score = self.cls_head(g_out)
        mask = self.loc_head(g_out)
        self._check(mask, "localization_head")
        return PredictionOutput(score, mask, affinities)


def _bce(target: torch.Tensor, prob: torch.Tensor) -> torch.Tensor:
    prob = prob.clamp(BCE_EPS, 1 - BCE_EPS)
    return -(target * torch.log(prob) + (1 - target) * torch.log1p(-prob))


def loss_terms(labels: torch.Tensor, scores: torch.Tensor, masks: torch.Tensor, pred_masks: torch.Tensor):
    """Batch means of the classification BCE and the per-pixel mask BCE."""
    labels = torch.as_tensor(labels, dtype=scores.dtype)
    if not torch.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    if masks.shape != pred_masks.shape:
        raise ValueError(f"mask shape {tuple(masks.shape)} != prediction shape {tuple(pred_masks.shape)}")
    cls = _bce(labels, scores).mean()
    seg = _bce(masks, pred_masks).flatten(1).mean(dim=1).mean()
    return cls, seg


def joint_loss(labels, scores, masks, pred_masks, seg_weight: float = 1.0) -> torch.Tensor:
    cls, seg = loss_terms(labels, scores, masks, pred_masks)
    return cls + seg_weight * seg
