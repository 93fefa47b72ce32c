import numpy as np
import pytest
import torch

from tamperloc.backbone import patchify
from tamperloc.decoder import (
    PatchDecoderLayer, bcim, grid_to_tokens, local_cosine_similarity, refine_patches, tokens_to_grid,
)
from tamperloc.gradcheck import module_gradcheck


def local_sim_oracle(grid, k):
    """Explicit loops: mean cosine over the k x k window with clamped (replicated) indices."""
    d, h, w = grid.shape
    r = k // 2
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            a = grid[:, y, x]
            total = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    b = grid[:, min(max(y + dy, 0), h - 1), min(max(x + dx, 0), w - 1)]
                    na, nb = np.linalg.norm(a), np.linalg.norm(b)
                    total += 0.0 if na == 0 or nb == 0 else a @ b / (na * nb)
            out[y, x] = total / (k * k)
    return out


def test_refine_with_zero_weights_is_identity():
    p = torch.randn(1, 6, 4)
    z = torch.zeros(4, 4)
    out = refine_patches(p, p, torch.randn(1, 2, 4), torch.randn(4, 4), torch.randn(4, 4), z,
                         torch.randn(4, 8), torch.zeros(8, 4))
    assert torch.equal(out, p)


def test_refine_single_object_broadcasts_value():
    p = torch.randn(1, 5, 4, dtype=torch.float64)
    o = torch.randn(1, 1, 4, dtype=torch.float64)
    w_v = torch.randn(4, 4, dtype=torch.float64)
    out = refine_patches(p, torch.randn(1, 5, 4, dtype=torch.float64), o, torch.randn(4, 4, dtype=torch.float64),
                         torch.randn(4, 4, dtype=torch.float64), w_v, torch.randn(4, 6, dtype=torch.float64),
                         torch.zeros(6, 4, dtype=torch.float64))
    assert torch.allclose(out, p + o @ w_v, atol=1e-12)


def test_refine_matches_loop():
    rng = np.random.default_rng(0)
    p, pn = rng.normal(size=(2, 4, 4))
    on = rng.normal(size=(3, 4))
    wq, wk, wv = rng.normal(size=(3, 4, 4))
    w1, w2 = rng.normal(size=(4, 5)), rng.normal(size=(5, 4))
    t = lambda x: torch.from_numpy(x)
    got = refine_patches(t(p)[None], t(pn)[None], t(on)[None], t(wq), t(wk), t(wv), t(w1), t(w2), 2)[0].numpy()
    from math import erf, sqrt
    gelu = np.vectorize(lambda x: 0.5 * x * (1 + erf(x / sqrt(2))))
    q, k, v = pn @ wq, on @ wk, on @ wv
    for i in range(4):
        hat = p[i].copy()
        for h in range(2):
            sl = slice(2 * h, 2 * h + 2)
            logits = np.array([q[i, sl] @ k[j, sl] / np.sqrt(2) for j in range(3)])
            a = np.exp(logits - logits.max())
            a /= a.sum()
            hat[sl] += sum(a[j] * v[j, sl] for j in range(3))
        assert np.allclose(got[i], hat + gelu(hat @ w1) @ w2, atol=1e-10)


def test_uniform_grid_similarity_is_one():
    grid = torch.randn(1, 6, 1, 1).expand(1, 6, 5, 7).contiguous()
    assert torch.allclose(local_cosine_similarity(grid, 3), torch.ones(1, 1, 5, 7), atol=1e-6)
    p = patchify(grid[:, :3]), patchify(grid[:, 3:])
    tokens = torch.cat(p, dim=1)
    assert torch.allclose(bcim(tokens, 5, 7, 3), tokens + 1, atol=1e-6)


def test_window_one():
    grid = torch.randn(2, 4, 3, 3)
    grid[0, :, 1, 1] = 0
    sim = local_cosine_similarity(grid, 1)
    expected = torch.ones(2, 1, 3, 3)
    expected[0, 0, 1, 1] = 0
    assert torch.allclose(sim, expected, atol=1e-6)


def test_orthogonal_pair_uses_edge_replication():
    grid = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64).T.reshape(1, 2, 1, 2)
    sim = local_cosine_similarity(grid, 3)[0, 0].numpy()
    oracle = local_sim_oracle(grid[0].numpy(), 3)
    # each 3x3 replicated window holds 6 copies of the cell and 3 of the orthogonal one
    assert np.allclose(oracle, 2 / 3)
    assert np.allclose(sim, oracle, atol=1e-12)


def test_half_plane_seam():
    grid = torch.zeros(1, 2, 4, 6, dtype=torch.float64)
    grid[0, 0, :, :3] = 1
    grid[0, 1, :, 3:] = 1
    sim = local_cosine_similarity(grid, 3)[0, 0].numpy()
    assert np.allclose(sim, local_sim_oracle(grid[0].numpy(), 3))
    assert np.allclose(sim[:, [0, 1, 4, 5]], 1.0)
    assert np.allclose(sim[:, [2, 3]], 2 / 3)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_similarity_matches_oracle_random(k):
    grid = torch.randn(1, 5, 6, 5, dtype=torch.float64)
    grid[0, :, 2, 2] = 0
    assert np.allclose(local_cosine_similarity(grid, k)[0, 0].numpy(), local_sim_oracle(grid[0].numpy(), k),
                       atol=1e-12)


def test_similarity_range():
    sim = local_cosine_similarity(torch.randn(3, 8, 9, 9), 5)
    assert (sim >= -1 - 1e-6).all() and (sim <= 1 + 1e-6).all()


def test_translation_consistency_in_interior():
    grid = torch.randn(1, 4, 10, 10, dtype=torch.float64)
    shifted = torch.zeros_like(grid)
    shifted[:, :, 1:, 1:] = grid[:, :, :-1, :-1]
    a = local_cosine_similarity(grid, 3)[0, 0]
    b = local_cosine_similarity(shifted, 3)[0, 0]
    assert torch.allclose(a[1:8, 1:8], b[2:9, 2:9], atol=1e-12)


def test_zero_vector_has_zero_gradient():
    grid = torch.randn(1, 3, 4, 4, dtype=torch.float64)
    grid[0, :, 1, 2] = 0
    grid.requires_grad_(True)
    local_cosine_similarity(grid, 3).sum().backward()
    assert torch.isfinite(grid.grad).all()
    assert torch.count_nonzero(grid.grad[0, :, 1, 2]) == 0


def test_even_window_rejected():
    with pytest.raises(ValueError):
        local_cosine_similarity(torch.randn(1, 2, 3, 3), 2)
    with pytest.raises(ValueError):
        PatchDecoderLayer(8, 2, window=4)


def test_grid_round_trip_and_channel_split():
    p = torch.randn(2, 2 * 12, 5)
    grid = tokens_to_grid(p, 3, 4)
    assert grid.shape == (2, 10, 3, 4)
    assert torch.equal(grid[:, :5, 1, 2], p[:, 1 * 4 + 2])
    assert torch.equal(grid[:, 5:, 1, 2], p[:, 12 + 1 * 4 + 2])
    assert torch.equal(grid_to_tokens(grid), p)
    with pytest.raises(ValueError):
        tokens_to_grid(p, 3, 3)


def test_bcim_adds_same_scalar_to_rgb_and_freq_tokens():
    p = torch.randn(1, 2 * 9, 4, dtype=torch.float64)
    delta = bcim(p, 3, 3) - p
    assert torch.allclose(delta[:, :9], delta[:, 9:])
    assert torch.allclose(delta, delta[..., :1].expand_as(delta))


def test_decoder_layer_shapes_and_ablation():
    torch.manual_seed(0)
    layer = PatchDecoderLayer(8, heads=2, ff_dim=16)
    p, o = torch.randn(2, 32, 8), torch.randn(2, 4, 8)
    out = layer(p, o, 4, 4)
    assert out.shape == p.shape
    layer.use_bcim = False
    assert torch.equal(layer(p, o, 4, 4), layer.refine(p, o))


def test_decoder_finite_difference_gradients():
    torch.manual_seed(1)
    layer = PatchDecoderLayer(4, heads=2, ff_dim=6).double()
    p = torch.randn(2, 18, 4, dtype=torch.float64)
    o = torch.randn(2, 3, 4, dtype=torch.float64)
    target = torch.randn(2, 18, 4, dtype=torch.float64)

    def loss():
        return ((layer(p, o, 3, 3) - target) ** 2).sum()

    results = module_gradcheck(layer, loss)
    assert all(r.passed for r in results), [(r.name, r.rel_error) for r in results]
