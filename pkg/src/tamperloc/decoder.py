"""Patch decoder: patches query the prototypes, then BCIM adds local self-similarity."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import patchify, unpatchify
from .encoder import merge_heads, split_heads


def refine_patches(p: torch.Tensor, p_norm: torch.Tensor, o_norm: torch.Tensor, w_q, w_k, w_v, w_mlp1, w_mlp2,
                   heads: int = 1) -> torch.Tensor:
    """Cross-attention from patches to prototypes followed by a residual MLP."""
    q = split_heads(p_norm @ w_q, heads)
    k = split_heads(o_norm @ w_k, heads)
    v = split_heads(o_norm @ w_v, heads)
    attn = (q @ k.transpose(-1, -2) / (q.shape[-1] ** 0.5)).softmax(dim=-1)
    p_hat = p + merge_heads(attn @ v)
    return p_hat + F.gelu(p_hat @ w_mlp1) @ w_mlp2


def _unit_vectors(grid: torch.Tensor) -> torch.Tensor:
    # zero vectors map to zero, so their cosine with anything is 0 with zero gradient
    sq = (grid * grid).sum(dim=1, keepdim=True)
    nonzero = sq > 0
    norm = torch.sqrt(torch.where(nonzero, sq, torch.ones_like(sq)))
    return torch.where(nonzero, grid / norm, torch.zeros_like(grid))


def local_cosine_similarity(grid: torch.Tensor, k: int = 3) -> torch.Tensor:
    """Mean cosine similarity of each cell with its k x k neighbourhood.

    ``grid`` is B x D x Hs x Ws; the result is B x 1 x Hs x Ws. Borders use
    edge replication and the window includes the centre cell.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"window size must be a positive odd integer, got {k}")
    unit = _unit_vectors(grid)
    r = k // 2
    b, d, h, w = grid.shape
    padded = F.pad(unit, (r, r, r, r), mode="replicate") if r else unit
    total = torch.zeros(b, 1, h, w, dtype=grid.dtype, device=grid.device)
    for dy in range(k):
        for dx in range(k):
            total = total + (unit * padded[:, :, dy:dy + h, dx:dx + w]).sum(dim=1, keepdim=True)
    return total / (k * k)


def tokens_to_grid(p: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """B x 2L x C -> B x 2C x Hs x Ws with RGB channels first, frequency second."""
    length = height * width
    if p.shape[1] != 2 * length:
        raise ValueError(f"sequence length {p.shape[1]} != 2 * {height} * {width}")
    return torch.cat([unpatchify(p[:, :length], height, width), unpatchify(p[:, length:], height, width)], dim=1)


def grid_to_tokens(grid: torch.Tensor) -> torch.Tensor:
    c = grid.shape[1] // 2
    return torch.cat([patchify(grid[:, :c]), patchify(grid[:, c:])], dim=1)


def bcim(p_bar: torch.Tensor, height: int, width: int, k: int = 3) -> torch.Tensor:
    grid = tokens_to_grid(p_bar, height, width)
    return grid_to_tokens(grid + local_cosine_similarity(grid, k))


class PatchDecoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int = 4, ff_dim: int | None = None, window: int = 3, use_bcim: bool = True):
        super().__init__()
        if dim % heads:
            raise ValueError(f"width {dim} is not divisible by {heads} heads")
        if window < 1 or window % 2 == 0:
            raise ValueError(f"window size must be a positive odd integer, got {window}")
        ff_dim = ff_dim or 2 * dim
        self.heads = heads
        self.window = window
        self.use_bcim = use_bcim
        self.norm_p = nn.LayerNorm(dim)
        self.norm_o = nn.LayerNorm(dim)
        self.w_q = nn.Parameter(torch.empty(dim, dim))
        self.w_k = nn.Parameter(torch.empty(dim, dim))
        self.w_v = nn.Parameter(torch.empty(dim, dim))
        self.w_mlp1 = nn.Parameter(torch.empty(dim, ff_dim))
        self.w_mlp2 = nn.Parameter(torch.empty(ff_dim, dim))
        self.reset_parameters()

    def reset_parameters(self):
        for w in (self.w_q, self.w_k, self.w_v, self.w_mlp1, self.w_mlp2):
            nn.init.xavier_uniform_(w)

    def refine(self, p: torch.Tensor, o: torch.Tensor) -> torch.Tensor:
        return refine_patches(p, self.norm_p(p), self.norm_o(o), self.w_q, self.w_k, self.w_v,
                              self.w_mlp1, self.w_mlp2, self.heads)

    def forward(self, p: torch.Tensor, o: torch.Tensor, height: int, width: int) -> torch.Tensor:
        p_bar = self.refine(p, o)
        if not self.use_bcim:
            return p_bar
        return bcim(p_bar, height, width, self.window)
