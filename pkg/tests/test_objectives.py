import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import focal_literal
from spinekp.network import ModelOutputs
from spinekp.objectives import (
    BranchTargets,
    EpochState,
    OASpec,
    focal_loss,
    heatmap_gradient,
    oa_weight_map,
    offset_l1_loss,
    total_loss,
)


def _random_case(seed, shape=(2, 8, 8)):
    g = torch.Generator().manual_seed(seed)
    p = torch.rand(shape, generator=g, dtype=torch.float64) * 0.9 + 0.05
    y = (torch.rand(shape, generator=g) < 0.2).double()
    return p, y


@pytest.mark.parametrize("gamma", [0.0, 1.0, 2.0, 3.5])
def test_focal_matches_literal(gamma):
    for seed in range(5):
        p, y = _random_case(seed)
        assert float(focal_loss(p, y, gamma)) == pytest.approx(focal_literal(p.numpy(), y.numpy(), gamma), abs=1e-6)


def test_gamma_zero_is_cross_entropy():
    for seed in range(5):
        p, y = _random_case(seed)
        bce = F.binary_cross_entropy(p, y, reduction="sum") / y.sum().clamp(min=1)
        assert float(focal_loss(p, y, 0.0)) == pytest.approx(float(bce), abs=1e-6)


def test_focal_no_positives_divides_by_one():
    p = torch.full((1, 2, 2), 0.5, dtype=torch.float64)
    y = torch.zeros_like(p)
    assert float(focal_loss(p, y, 2.0)) == pytest.approx(4 * 0.25 * np.log(2))


def test_focal_gradient_finite_differences():
    p, y = _random_case(7)
    p.requires_grad_(True)
    (grad,) = torch.autograd.grad(focal_loss(p, y, 2.0), p)
    h = 1e-6
    fd = torch.zeros_like(p)
    flat = p.detach().clone().view(-1)
    for i in range(flat.numel()):
        up, dn = flat.clone(), flat.clone()
        up[i] += h
        dn[i] -= h
        fd.view(-1)[i] = (focal_loss(up.view_as(p), y) - focal_loss(dn.view_as(p), y)) / (2 * h)
    rel = (grad - fd).norm() / fd.norm()
    assert float(rel) <= 1e-4


def test_focal_shape_mismatch():
    with pytest.raises(ValueError):
        focal_loss(torch.zeros(2, 4, 4), torch.zeros(2, 4, 5))


def test_offset_l1_masked_mean():
    pred = torch.zeros(1, 4, 3, 3)
    tgt = torch.zeros(1, 4, 3, 3)
    mask = torch.zeros(1, 2, 3, 3)
    mask[0, 1, 1, 1] = 1
    tgt[0, 2, 1, 1], tgt[0, 3, 1, 1] = 2.0, -4.0
    tgt[0, 0, 0, 0] = 100.0  # outside the mask, ignored
    assert float(offset_l1_loss(pred, tgt, mask)) == pytest.approx(3.0)


def test_offset_l1_empty_mask_is_zero_and_differentiable():
    pred = torch.ones(1, 4, 3, 3, requires_grad=True)
    loss = offset_l1_loss(pred, torch.zeros(1, 4, 3, 3), torch.zeros(1, 2, 3, 3))
    loss.backward()
    assert loss.item() == 0 and pred.grad is not None


def test_offset_mask_shape_checked():
    with pytest.raises(ValueError):
        offset_l1_loss(torch.zeros(1, 4, 3, 3), torch.zeros(1, 4, 3, 3), torch.zeros(1, 4, 3, 3))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(1e-3, 1e4))
def test_oa_weights_in_range(seed, scale):
    g = torch.Generator().manual_seed(seed)
    grad = torch.randn(2, 2, 6, 6, generator=g, dtype=torch.float64) * scale
    w = oa_weight_map(grad)
    assert w.shape == (2, 4, 6, 6)
    assert float(w.min()) >= 1.0 and float(w.max()) <= 2.0
    # the (row, col) pair of a class shares its weights
    assert torch.equal(w[:, 0], w[:, 1]) and torch.equal(w[:, 2], w[:, 3])


def test_oa_weight_known_values():
    grad = torch.tensor([[[[-500.0, 0.0], [50.0, 100.0]]]])
    w = oa_weight_map(grad)
    # clipped to [-100, 100] then min-max: -100 -> 0, 0 -> 0.5, 50 -> 0.75, 100 -> 1
    expected = torch.tensor([[1.0, 1.5], [1.75, 2.0]])
    assert torch.allclose(w[0, 0], expected) and torch.allclose(w[0, 1], expected)


def test_oa_constant_channel_gives_unit_weight():
    w = oa_weight_map(torch.full((1, 2, 3, 3), 7.0))
    assert torch.all(w == 1.0)


def test_oa_normalizes_each_sample_separately():
    grad = torch.zeros(2, 1, 2, 2)
    grad[0, 0, 0, 0] = 1.0
    grad[1, 0, 0, 0] = 50.0
    w = oa_weight_map(grad)
    assert torch.equal(w[0], w[1])


@pytest.mark.parametrize("T,first", [(4, 3), (60, 45), (100, 75), (300, 225)])
def test_oa_activation_epoch(T, first):
    spec = OASpec()
    assert spec.activation_epoch(T) == first
    assert not spec.active(first - 1, T) and spec.active(first, T)
    assert not OASpec(enabled=False).active(T - 1, T)


def test_oa_spec_validation():
    with pytest.raises(ValueError):
        OASpec(clip_bound=0)
    with pytest.raises(ValueError):
        OASpec(enable_after_fraction=1.0)
    with pytest.raises(ValueError):
        OASpec(normalization="global")


def _outputs(seed, logits=False):
    g = torch.Generator().manual_seed(seed)
    dl = torch.randn(2, 2, 8, 8, generator=g, dtype=torch.float64, requires_grad=True)
    vl = torch.randn(2, 2, 8, 8, generator=g, dtype=torch.float64, requires_grad=True)
    do = torch.randn(2, 4, 8, 8, generator=g, dtype=torch.float64, requires_grad=True)
    vo = torch.randn(2, 4, 8, 8, generator=g, dtype=torch.float64, requires_grad=True)
    out = ModelOutputs(torch.sigmoid(dl), do, torch.sigmoid(vl), vo)
    return (out, (dl, vl, do, vo)) if logits else out


def _targets(seed):
    g = torch.Generator().manual_seed(seed + 1000)
    make = lambda: BranchTargets(  # noqa: E731
        (torch.rand(2, 2, 8, 8, generator=g) < 0.2).double(),
        torch.randn(2, 4, 8, 8, generator=g, dtype=torch.float64),
        (torch.rand(2, 2, 8, 8, generator=g) < 0.3).double(),
    )
    return make(), make()


def test_total_is_sum_of_parts():
    out = _outputs(0)
    disc, vert = _targets(0)
    lb = total_loss(out, disc, vert, EpochState(0, 10))
    assert not lb.oa_active
    parts = lb.disc_heatmap + lb.disc_offset + lb.vert_heatmap + lb.vert_offset
    assert lb.total.item() == pytest.approx(parts.item())
    rec = lb.as_record()
    assert set(rec) == {"disc_heatmap", "disc_offset", "vert_heatmap", "vert_offset", "total", "oa_active"}


def test_zero_heatmap_gradient_makes_oa_a_no_op():
    disc, vert = _targets(3)
    g = torch.Generator().manual_seed(5)
    # a perfect heatmap has zero focal-loss gradient
    out = ModelOutputs(
        disc.heatmap.clone().requires_grad_(True),
        torch.randn(2, 4, 8, 8, generator=g, dtype=torch.float64),
        vert.heatmap.clone().requires_grad_(True),
        torch.randn(2, 4, 8, 8, generator=g, dtype=torch.float64),
    )
    (gd,) = torch.autograd.grad(total_loss(out, disc, vert, EpochState(0, 10)).disc_heatmap, out.disc_heatmap)
    assert torch.all(gd == 0)
    on = total_loss(out, disc, vert, EpochState(9, 10), oa=OASpec(enabled=True))
    off = total_loss(out, disc, vert, EpochState(9, 10), oa=OASpec(enabled=False))
    assert on.oa_active and not off.oa_active
    assert abs(on.total.item() - off.total.item()) <= 1e-7


def test_oa_changes_offset_loss_when_active():
    out = _outputs(1)
    disc, vert = _targets(1)
    on = total_loss(out, disc, vert, EpochState(9, 10))
    off = total_loss(out, disc, vert, EpochState(9, 10), oa=OASpec(enabled=False))
    assert on.disc_heatmap.item() == off.disc_heatmap.item()
    assert on.disc_offset.item() != off.disc_offset.item()


def test_frozen_oa_weights_leave_logit_gradients_unchanged():
    disc, vert = _targets(2)
    out, leaves = _outputs(2, logits=True)
    live = total_loss(out, disc, vert, EpochState(9, 10))
    g_live = torch.autograd.grad(live.total, leaves)

    out2, leaves2 = _outputs(2, logits=True)
    weights = tuple(
        oa_weight_map(heatmap_gradient(focal_loss(h, t.heatmap), h))
        for h, t in ((out2.disc_heatmap, disc), (out2.vert_heatmap, vert))
    )
    frozen = total_loss(out2, disc, vert, EpochState(9, 10), frozen_weights=weights)
    g_frozen = torch.autograd.grad(frozen.total, leaves2)
    assert live.total.item() == pytest.approx(frozen.total.item(), abs=1e-12)
    for a, b in zip(g_live, g_frozen):
        assert float((a - b).abs().max()) <= 1e-6


def test_oa_weight_carries_no_gradient():
    heat = torch.rand(1, 2, 4, 4, dtype=torch.float64, requires_grad=True)
    w = oa_weight_map(heat * 3)
    assert not w.requires_grad
