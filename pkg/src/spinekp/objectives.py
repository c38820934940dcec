"""Heatmap focal loss, masked offset L1, and gradient-guided objective association (OA).

With OA active, each branch's offset loss compares ``w * offset_pred`` against
the target, where ``w = 1 + minmax(clip(dL_heat / d heat_pred))`` per channel,
duplicated onto the (row, col) offset pair of that class. ``w`` is treated as
a constant: no gradient flows through it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch

from .network import ModelOutputs

EPS = 1e-7


@dataclass(frozen=True)
class OASpec:
    clip_bound: float = 100.0
    enable_after_fraction: float = 0.75
    normalization: str = "per_channel_minmax"
    enabled: bool = True

    def __post_init__(self):
        if self.clip_bound <= 0:
            raise ValueError("clip_bound must be positive")
        if not 0 < self.enable_after_fraction < 1:
            raise ValueError("enable_after_fraction must be in (0, 1)")
        if self.normalization != "per_channel_minmax":
            raise ValueError(f"unsupported OA normalization {self.normalization!r}")

    def activation_epoch(self, total_epochs: int) -> int:
        # 1e-9 guards against float noise such as 0.75 * 100 = 75.00000000000001
        return math.ceil(self.enable_after_fraction * total_epochs - 1e-9)

    def active(self, epoch: int, total_epochs: int) -> bool:
        return self.enabled and epoch >= self.activation_epoch(total_epochs)


@dataclass
class EpochState:
    epoch: int
    total_epochs: int


@dataclass
class LossBreakdown:
    disc_heatmap: torch.Tensor
    disc_offset: torch.Tensor
    vert_heatmap: torch.Tensor
    vert_offset: torch.Tensor
    total: torch.Tensor
    oa_active: bool

    def as_record(self) -> dict:
        return {
            "disc_heatmap": float(self.disc_heatmap.detach()),
            "disc_offset": float(self.disc_offset.detach()),
            "vert_heatmap": float(self.vert_heatmap.detach()),
            "vert_offset": float(self.vert_offset.detach()),
            "total": float(self.total.detach()),
            "oa_active": self.oa_active,
        }


def _check_shapes(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise ValueError(f"{what}: prediction {tuple(a.shape)} vs target {tuple(b.shape)}")


def focal_loss_map(pred: torch.Tensor, target: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    """Per-pixel ``-(1 - q)^gamma log q`` with ``q`` the probability of the true state."""
    _check_shapes(pred, target, "focal loss")
    pos = target > 0.5
    q = torch.where(pos, pred, 1.0 - pred)
    logq = torch.log(q.clamp(min=EPS))
    if gamma == 0:
        return -logq
    return -((1.0 - q) ** gamma) * logq


def focal_loss(pred: torch.Tensor, target: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    """Summed focal loss divided by the number of positive pixels (at least 1)."""
    n_pos = (target > 0.5).sum().clamp(min=1)
    return focal_loss_map(pred, target, gamma).sum() / n_pos


def offset_l1_loss(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over masked pixels and both coordinate channels.

    ``pred``/``target`` are (..., 2C, H, W); ``mask`` is (..., C, H, W).
    """
    _check_shapes(pred, target, "offset loss")
    if mask.shape[-3] * 2 != pred.shape[-3] or mask.shape[-2:] != pred.shape[-2:]:
        raise ValueError(f"offset mask {tuple(mask.shape)} does not fit offsets {tuple(pred.shape)}")
    m = mask.repeat_interleave(2, dim=-3)
    denom = m.sum()
    if denom == 0:
        return pred.sum() * 0.0
    return ((pred - target).abs() * m).sum() / denom


def oa_weight_map(grad: torch.Tensor, spec: OASpec = OASpec()) -> torch.Tensor:
    """Weights in [1, 2] from a heatmap-loss gradient of shape (..., C, H, W) -> (..., 2C, H, W)."""
    g = grad.detach().clamp(-spec.clip_bound, spec.clip_bound)
    lo = g.amin(dim=(-2, -1), keepdim=True)
    hi = g.amax(dim=(-2, -1), keepdim=True)
    span = hi - lo
    norm = torch.where(span > 0, (g - lo) / torch.where(span > 0, span, torch.ones_like(span)), torch.zeros_like(g))
    return (1.0 + norm).repeat_interleave(2, dim=-3)


def heatmap_gradient(loss: torch.Tensor, heatmap: torch.Tensor) -> torch.Tensor:
    """dL/d heatmap without building a graph through it."""
    if not heatmap.requires_grad:
        return torch.zeros_like(heatmap)
    (g,) = torch.autograd.grad(loss, heatmap, retain_graph=True, allow_unused=True)
    return torch.zeros_like(heatmap) if g is None else g.detach()


@dataclass
class BranchTargets:
    heatmap: torch.Tensor  # (B, C, H, W)
    offset: torch.Tensor  # (B, 2C, H, W)
    mask: torch.Tensor  # (B, C, H, W)


def _branch_losses(heat, off, tgt: BranchTargets, gamma, oa: Optional[OASpec], weight_override=None):
    lh = focal_loss(heat, tgt.heatmap, gamma)
    if oa is None:
        return lh, offset_l1_loss(off, tgt.offset, tgt.mask)
    weight = weight_override if weight_override is not None else oa_weight_map(heatmap_gradient(lh, heat), oa)
    return lh, offset_l1_loss(weight * off, tgt.offset, tgt.mask)


def total_loss(
    outputs: ModelOutputs,
    disc: BranchTargets,
    vert: BranchTargets,
    epoch_state: EpochState,
    gamma: float = 2.0,
    oa: OASpec = OASpec(),
    frozen_weights=None,
) -> LossBreakdown:
    """Unit-weight sum of the four head losses, with OA on the offset terms once active.

    ``frozen_weights`` (disc, vert) substitutes precomputed OA weights; used to
    check that the weights behave as constants.
    """
    active = oa.active(epoch_state.epoch, epoch_state.total_epochs)
    spec = oa if active else None
    fw = frozen_weights or (None, None)
    dh, do = _branch_losses(outputs.disc_heatmap, outputs.disc_offset, disc, gamma, spec, fw[0])
    vh, vo = _branch_losses(outputs.vert_heatmap, outputs.vert_offset, vert, gamma, spec, fw[1])
    return LossBreakdown(dh, do, vh, vo, dh + do + vh + vo, active)
