import math

import numpy as np
import pytest
import torch

from tamperloc.model import (
    PAPER_CONFIG, TINY_CONFIG, ClassificationHead, LocalizationHead, ModelConfig, ModelFault, TamperNet, joint_loss,
    loss_terms,
)


@pytest.fixture(scope="module")
def tiny():
    return TamperNet(TINY_CONFIG).eval()


def test_tiny_forward_shapes_and_ranges(tiny):
    x = torch.rand(3, 3, 32, 32)
    out = tiny(x)
    assert out.score.shape == (3,)
    assert out.mask.shape == (3, 1, 32, 32)
    assert ((out.score >= 0) & (out.score <= 1)).all()
    assert ((out.mask >= 0) & (out.mask <= 1)).all()
    cfg = TINY_CONFIG
    assert len(out.affinities) == cfg.depth
    assert out.affinities[0].shape == (3, cfg.heads, cfg.num_objects, 2 * cfg.tokens_per_modality)


def test_paper_config_forward_shape():
    model = TamperNet(PAPER_CONFIG).eval()
    assert PAPER_CONFIG.grid_size == 16 and PAPER_CONFIG.width == 64 and PAPER_CONFIG.depth == 8
    with torch.no_grad():
        out = model(torch.rand(1, 3, 256, 256))
    assert out.mask.shape == (1, 1, 256, 256)
    assert out.affinities[0].shape == (1, 4, 16, 512)


def test_same_seed_same_weights_and_outputs():
    a, b = TamperNet(TINY_CONFIG), TamperNet(TINY_CONFIG)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and torch.equal(pa, pb)
    x = torch.rand(2, 3, 32, 32)
    assert torch.equal(a.eval()(x).mask, a(x).mask)
    c = TamperNet(TINY_CONFIG.with_overrides(seed=1))
    assert not torch.equal(a.prototypes, c.prototypes)


def test_model_init_does_not_touch_global_rng():
    torch.manual_seed(123)
    expected = torch.rand(3)
    torch.manual_seed(123)
    TamperNet(TINY_CONFIG)
    assert torch.equal(torch.rand(3), expected)


def test_wrong_input_size(tiny):
    with pytest.raises(ValueError):
        tiny(torch.rand(1, 3, 64, 64))


def test_non_finite_input_raises_model_fault(tiny):
    x = torch.rand(1, 3, 32, 32)
    x[0, 0, 3, 3] = float("nan")
    with pytest.raises(ModelFault) as info:
        tiny(x)
    assert info.value.stage == "rgb_stem"


def test_classification_head():
    head = ClassificationHead(4).double()
    torch.nn.init.zeros_(head.fc.weight)
    torch.nn.init.zeros_(head.fc.bias)
    assert torch.allclose(head(torch.randn(2, 4, 3, 3, dtype=torch.float64)), torch.full((2,), 0.5, dtype=torch.float64))
    head = ClassificationHead(4).double()
    g = torch.randn(1, 4, 3, 5, dtype=torch.float64)
    gap = [sum(g[0, c, i, j].item() for i in range(3) for j in range(5)) / 15 for c in range(4)]
    logit = sum(head.fc.weight[0, c].item() * gap[c] for c in range(4)) + head.fc.bias.item()
    assert head(g).item() == pytest.approx(1 / (1 + math.exp(-logit)), abs=1e-12)


def test_localization_head_stage_count():
    assert len(LocalizationHead(16, 16).convs) == 4
    assert len(LocalizationHead(16, 4).convs) == 2
    with pytest.raises(ValueError):
        LocalizationHead(16, 6)


def test_localization_head_bilinear_upsampling():
    head = LocalizationHead(1, 2, channels=1).double()
    with torch.no_grad():
        for conv in (head.convs[0], head.out):
            conv.weight.zero_()
            conv.weight[0, 0, 1, 1] = 1
            conv.bias.zero_()
    x = torch.tensor([[1.0, 2.0], [3.0, 4.0]], dtype=torch.float64)
    # half-pixel-centre interpolation weights for 2 -> 4
    m = np.array([[1, 0], [0.75, 0.25], [0.25, 0.75], [0, 1]])
    up = m @ x.numpy() @ m.T
    assert np.allclose(up, [[1, 1.25, 1.75, 2], [1.5, 1.75, 2.25, 2.5], [2.5, 2.75, 3.25, 3.5], [3, 3.25, 3.75, 4]])
    gelu = np.vectorize(lambda v: 0.5 * v * (1 + math.erf(v / math.sqrt(2))))
    expected = 1 / (1 + np.exp(-gelu(up)))
    assert np.allclose(head(x.view(1, 1, 2, 2))[0, 0].detach().numpy(), expected, atol=1e-12)


def test_loss_at_half():
    labels = torch.tensor([1.0, 0.0])
    masks = torch.randint(0, 2, (2, 1, 4, 4)).float()
    for lam in (0.0, 1.0, 2.5):
        loss = joint_loss(labels, torch.full((2,), 0.5), masks, torch.full((2, 1, 4, 4), 0.5), lam)
        assert loss.item() == pytest.approx(math.log(2) * (1 + lam), rel=1e-6)


def test_loss_hand_example():
    loss = joint_loss(torch.tensor([1.0], dtype=torch.float64), torch.tensor([0.9], dtype=torch.float64),
                      torch.ones(1, 1, 2, 2, dtype=torch.float64), torch.full((1, 1, 2, 2), 0.8, dtype=torch.float64))
    # -ln 0.9 - ln 0.8
    assert loss.item() == pytest.approx(0.3285040669720361, abs=1e-12)


def test_loss_perfect_prediction_is_near_zero_and_clamped():
    masks = torch.zeros(2, 1, 3, 3)
    masks[0, 0, 1, 1] = 1
    loss = joint_loss(torch.tensor([1.0, 0.0]), torch.tensor([1.0, 0.0]), masks, masks)
    assert 0 <= loss.item() < 1e-5
    bad = joint_loss(torch.tensor([1.0]), torch.tensor([0.0]), torch.ones(1, 1, 1, 1), torch.zeros(1, 1, 1, 1))
    assert math.isfinite(bad.item())
    assert bad.item() == pytest.approx(-2 * math.log(1e-7), rel=1e-3)


def test_loss_validation():
    with pytest.raises(ValueError):
        loss_terms(torch.tensor([0.5]), torch.tensor([0.5]), torch.zeros(1, 1, 2, 2), torch.zeros(1, 1, 2, 2))
    with pytest.raises(ValueError):
        loss_terms(torch.tensor([1.0]), torch.tensor([0.5]), torch.zeros(1, 1, 2, 2), torch.zeros(1, 1, 3, 3))


def test_gradients_flow_and_zero_where_expected():
    model = TamperNet(TINY_CONFIG.with_overrides(seg_weight=0.0))
    x = torch.rand(2, 3, 32, 32)
    out = model(x)
    joint_loss(torch.tensor([1.0, 0.0]), out.score, torch.zeros(2, 1, 32, 32), out.mask, 0.0).backward()
    for name, p in model.loc_head.named_parameters():
        assert p.grad is None or torch.count_nonzero(p.grad) == 0, name
    assert torch.count_nonzero(model.prototypes.grad) > 0
    assert model.freq_placeholder.grad is None or torch.count_nonzero(model.freq_placeholder.grad) == 0


def test_hfe_ablation():
    model = TamperNet(TINY_CONFIG.with_overrides(use_hfe=False))
    x = torch.rand(2, 3, 32, 32)
    before = model(x).mask
    with torch.no_grad():
        for p in model.freq_stem.parameters():
            p.add_(1.0)
    assert torch.equal(model(x).mask, before)
    out = model(x)
    joint_loss(torch.tensor([1.0, 0.0]), out.score, torch.zeros(2, 1, 32, 32), out.mask).backward()
    assert torch.count_nonzero(model.freq_placeholder.grad) > 0


def test_bcim_ablation_changes_output_not_shape():
    x = torch.rand(2, 3, 32, 32)
    a = TamperNet(TINY_CONFIG).eval()(x)
    b = TamperNet(TINY_CONFIG.with_overrides(use_bcim=False)).eval()(x)
    assert a.mask.shape == b.mask.shape
    assert not torch.allclose(a.mask, b.mask)


def test_state_dict_round_trip():
    a = TamperNet(TINY_CONFIG.with_overrides(seed=7)).eval()
    b = TamperNet(TINY_CONFIG).eval()
    b.load_state_dict(a.state_dict())
    x = torch.rand(1, 3, 32, 32)
    assert torch.equal(a(x).mask, b(x).mask)


@pytest.mark.parametrize("kw", [dict(heads=3), dict(window=2), dict(image_size=30), dict(alpha=1.5)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TINY_CONFIG.with_overrides(**kw)


def test_config_dict_round_trip():
    d = TINY_CONFIG.to_dict()
    assert ModelConfig.from_dict(d) == TINY_CONFIG
    with pytest.raises(ValueError):
        ModelConfig.from_dict({**d, "bogus": 1})
