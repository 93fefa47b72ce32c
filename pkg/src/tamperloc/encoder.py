"""Object encoder: prototypes attend to patches, interact, then pass a feed-forward.

Shapes are batched: prototypes B x N x C, patches B x S x C (S = 2L).
Projection matrices act on the right (x @ W) and carry no bias.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    b, n, c = x.shape
    return x.view(b, n, heads, c // heads).transpose(1, 2)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    b, h, n, d = x.shape
    return x.transpose(1, 2).reshape(b, n, h * d)


def compute_affinity(o_norm: torch.Tensor, p_norm: torch.Tensor, w_q: torch.Tensor, w_k: torch.Tensor,
                     heads: int = 1) -> torch.Tensor:
    """Softmax object-patch affinity, B x h x N x S.

    Inputs are expected to be layer-normalized already. Each head scales its
    logits by 1/sqrt(C/h).
    """
    q = split_heads(o_norm @ w_q, heads)
    k = split_heads(p_norm @ w_k, heads)
    logits = q @ k.transpose(-1, -2) / (q.shape[-1] ** 0.5)
    return logits.softmax(dim=-1)


def update_objects(o: torch.Tensor, affinity: torch.Tensor, p_values: torch.Tensor, w_v: torch.Tensor) -> torch.Tensor:
    """Residual update o + A (p W_v), heads concatenated along channels."""
    heads = affinity.shape[1]
    v = split_heads(p_values @ w_v, heads)
    return o + merge_heads(affinity @ v)


def cross_object_interaction(o_hat: torch.Tensor, w_c: torch.Tensor) -> torch.Tensor:
    """o_hat + (o_hat^T W_c)^T, i.e. mixing along the object axis with W_c^T."""
    return o_hat + w_c.transpose(0, 1) @ o_hat


def object_feedforward(o_tilde: torch.Tensor, w_1: torch.Tensor, w_2: torch.Tensor) -> torch.Tensor:
    return o_tilde + F.gelu(o_tilde @ w_1) @ w_2


class ObjectEncoderLayer(nn.Module):
    def __init__(self, dim: int, num_objects: int, heads: int = 4, ff_dim: int | None = None):
        super().__init__()
        if dim % heads:
            raise ValueError(f"width {dim} is not divisible by {heads} heads")
        ff_dim = ff_dim or 2 * dim
        self.heads = heads
        self.norm_o = nn.LayerNorm(dim)
        self.norm_p = nn.LayerNorm(dim)
        self.w_q = nn.Parameter(torch.empty(dim, dim))
        self.w_k = nn.Parameter(torch.empty(dim, dim))
        self.w_v = nn.Parameter(torch.empty(dim, dim))
        self.w_c = nn.Parameter(torch.empty(num_objects, num_objects))
        self.w_ff1 = nn.Parameter(torch.empty(dim, ff_dim))
        self.w_ff2 = nn.Parameter(torch.empty(ff_dim, dim))
        self.reset_parameters()

    def reset_parameters(self):
        for w in (self.w_q, self.w_k, self.w_v, self.w_ff1, self.w_ff2):
            nn.init.xavier_uniform_(w)
        nn.init.normal_(self.w_c, std=0.02)

    def forward(self, o: torch.Tensor, p: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns the updated prototypes and the affinity (B x h x N x S)."""
        o_norm = self.norm_o(o)
        p_norm = self.norm_p(p)
        affinity = compute_affinity(o_norm, p_norm, self.w_q, self.w_k, self.heads)
        o_hat = update_objects(o, affinity, p_norm, self.w_v)
        o_tilde = cross_object_interaction(o_hat, self.w_c)
        return object_feedforward(o_tilde, self.w_ff1, self.w_ff2), affinity
