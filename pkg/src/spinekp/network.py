"""Backbone, dual self-attention branches and the four output heads."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, NamedTuple, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn


class TooSmall(ValueError):
    pass


@dataclass(frozen=True)
class BackboneSpec:
    name: str = "reference_unet"
    in_channels: int = 7
    feature_channels: int = 64
    feature_size: Tuple[int, int] = (128, 128)
    widths: Tuple[int, ...] = (32, 64, 128, 256)


class ModelOutputs(NamedTuple):
    disc_heatmap: torch.Tensor  # (B, 2, H, W) probabilities
    disc_offset: torch.Tensor  # (B, 4, H, W) input-grid pixels
    vert_heatmap: torch.Tensor
    vert_offset: torch.Tensor


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.skip = None
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + (x if self.skip is None else self.skip(x)))


class ReferenceBackbone(nn.Module):
    """Residual encoder (strides 4, 8, 16, 32) with a skip-connected decoder back to stride 4.

    The stride-4 decoder output is projected to ``feature_channels`` and resized
    to the fixed attention grid.
    """

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        w = spec.widths
        self.stem = nn.Sequential(
            nn.Conv2d(spec.in_channels, w[0], 3, 2, 1, bias=False), nn.BatchNorm2d(w[0]), nn.ReLU(inplace=True)
        )
        stages = [ResBlock(w[0], w[0], stride=2)]
        for cin, cout in zip(w[:-1], w[1:]):
            stages.append(ResBlock(cin, cout, stride=2))
        self.stages = nn.ModuleList(stages)
        self.lateral = nn.ModuleList(nn.Conv2d(c, w[0], 1) for c in w[:-1])
        self.top = nn.Conv2d(w[-1], w[0], 1)
        self.smooth = nn.ModuleList(ResBlock(w[0], w[0]) for _ in w[:-1])
        self.project = nn.Sequential(
            nn.Conv2d(w[0], spec.feature_channels, 3, 1, 1, bias=False),
            nn.BatchNorm2d(spec.feature_channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        feats = []
        out = self.stem(x)
        for stage in self.stages:
            out = stage(out)
            feats.append(out)
        out = self.top(feats[-1])
        for i in reversed(range(len(feats) - 1)):
            skip = self.lateral[i](feats[i])
            out = F.interpolate(out, size=skip.shape[-2:], mode="bilinear", align_corners=False) + skip
            out = self.smooth[i](out)
        out = self.project(out)
        if tuple(out.shape[-2:]) != tuple(self.spec.feature_size):
            out = F.interpolate(out, size=self.spec.feature_size, mode="bilinear", align_corners=False)
        return out


class PositionAttention(nn.Module):
    def __init__(self, channels: int = 64, reduction: int = 8):
        super().__init__()
        self.query = nn.Conv2d(channels, channels // reduction, 1)
        self.key = nn.Conv2d(channels, channels // reduction, 1)
        self.value = nn.Conv2d(channels, channels, 1)
        self.gamma = nn.Parameter(torch.zeros(1))

    def affinity(self, x):
        b, _, h, w = x.shape
        q = self.query(x).view(b, -1, h * w).permute(0, 2, 1)
        k = self.key(x).view(b, -1, h * w)
        return torch.softmax(torch.bmm(q, k), dim=-1)  # (B, HW, HW)

    def forward(self, x):
        b, c, h, w = x.shape
        attn = self.affinity(x)
        v = self.value(x).view(b, c, h * w).transpose(1, 2)
        out = torch.bmm(attn, v).transpose(1, 2).reshape(b, c, h, w)
        return self.gamma * out + x


class ChannelAttention(nn.Module):
    def __init__(self):
        super().__init__()
        self.gamma = nn.Parameter(torch.zeros(1))

    @staticmethod
    def affinity(x):
        b, c = x.shape[:2]
        flat = x.reshape(b, c, -1)
        energy = torch.bmm(flat, flat.permute(0, 2, 1))
        # row max minus energy keeps the softmax well conditioned for large products
        energy = energy.max(dim=-1, keepdim=True)[0].expand_as(energy) - energy
        return torch.softmax(energy, dim=-1)  # (B, C, C)

    def forward(self, x):
        b, c, h, w = x.shape
        attn = self.affinity(x)
        out = torch.bmm(attn, x.reshape(b, c, -1)).view(b, c, h, w)
        return self.gamma * out + x


class DualAttention(nn.Module):
    def __init__(self, channels: int = 64, reduction: int = 8):
        super().__init__()
        self.pam = PositionAttention(channels, reduction)
        self.cam = ChannelAttention()

    def forward(self, x):
        return self.pam(x) + self.cam(x)


def _conv_bn_relu(cin, cout):
    return [nn.Conv2d(cin, cout, 3, 1, 1), nn.BatchNorm2d(cout), nn.ReLU(inplace=True)]


class BranchHead(nn.Module):
    """Two parallel Conv(3x3)+BN stacks ending in a 1x1 heatmap or offset projection."""

    def __init__(self, in_channels: int = 64, mid_channels: int = 32, num_classes: int = 2):
        super().__init__()
        self.heatmap = nn.Sequential(
            *_conv_bn_relu(in_channels, mid_channels),
            *_conv_bn_relu(mid_channels, mid_channels),
            nn.Conv2d(mid_channels, num_classes, 1, 1),
        )
        self.offset = nn.Sequential(
            *_conv_bn_relu(in_channels, mid_channels),
            *_conv_bn_relu(mid_channels, mid_channels),
            nn.Conv2d(mid_channels, 2 * num_classes, 1, 1),
        )
        # background-dominated targets: start with a low foreground prior
        nn.init.constant_(self.heatmap[-1].bias, -4.0)

    def forward(self, x, out_size: Tuple[int, int]):
        """Returns (heatmap logits, offsets) on the ``out_size`` grid; offsets in that grid's pixels."""
        logits = F.interpolate(self.heatmap(x), size=out_size, mode="bilinear", align_corners=False)
        raw = F.interpolate(self.offset(x), size=out_size, mode="bilinear", align_corners=False)
        scale = raw.new_tensor([out_size[0] / x.shape[-2], out_size[1] / x.shape[-1]])
        offset = raw * scale.repeat(raw.shape[1] // 2).view(1, -1, 1, 1)
        return logits, offset


class KeypointNet(nn.Module):
    def __init__(self, backbone: BackboneSpec = BackboneSpec(), attention: bool = True, reduction: int = 8):
        super().__init__()
        self.spec = backbone
        self.attention_enabled = attention
        if backbone.name != "reference_unet":
            raise ValueError(f"unknown backbone {backbone.name!r}")
        self.backbone = ReferenceBackbone(backbone)
        ch = backbone.feature_channels
        if attention:
            self.disc_attention = DualAttention(ch, reduction)
            self.vert_attention = DualAttention(ch, reduction)
        self.disc_head = BranchHead(ch)
        self.vert_head = BranchHead(ch)

    def check_input(self, x):
        if x.dim() != 4 or x.shape[1] != self.spec.in_channels:
            raise ValueError(f"expected (B, {self.spec.in_channels}, H, W) input, got {tuple(x.shape)}")
        fh, fw = self.spec.feature_size
        if x.shape[-2] < fh or x.shape[-1] < fw:
            raise TooSmall(f"input {tuple(x.shape[-2:])} smaller than the {fh}x{fw} feature grid")

    def forward_logits(self, x) -> Dict[str, torch.Tensor]:
        self.check_input(x)
        size = tuple(x.shape[-2:])
        u = self.backbone(x)
        disc = self.disc_attention(u) if self.attention_enabled else u
        vert = self.vert_attention(u) if self.attention_enabled else u
        dl, do = self.disc_head(disc, size)
        vl, vo = self.vert_head(vert, size)
        return {"disc_logits": dl, "disc_offset": do, "vert_logits": vl, "vert_offset": vo}

    def forward(self, x) -> ModelOutputs:
        out = self.forward_logits(x)
        return ModelOutputs(
            torch.sigmoid(out["disc_logits"]), out["disc_offset"],
            torch.sigmoid(out["vert_logits"]), out["vert_offset"],
        )


def head_parameter_count(in_channels: int = 64, mid: int = 32, num_classes: int = 2) -> int:
    """Closed-form parameter count of one branch's heatmap+offset stacks."""
    conv = lambda cin, cout, k: cin * cout * k * k + cout
    bn = lambda c: 2 * c
    stack = conv(in_channels, mid, 3) + bn(mid) + conv(mid, mid, 3) + bn(mid)
    return 2 * stack + conv(mid, num_classes, 1) + conv(mid, 2 * num_classes, 1)


def build_model(in_channels: int, feature_size: Sequence[int], widths: Sequence[int], attention: bool) -> KeypointNet:
    spec = BackboneSpec(in_channels=in_channels, feature_size=tuple(feature_size), widths=tuple(widths))
    return KeypointNet(spec, attention=attention)
