"""Convolutional building blocks for the segmentation networks.

Every block keeps batch and spatial dimensions, is differentiable end to end
and can be instantiated on its own.
"""
from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError


def layer_norm(channels: int, affine: bool = True) -> nn.GroupNorm:
    """Per-sample normalization over (C, H, W)."""
    return nn.GroupNorm(1, channels, affine=affine)


def mean_pool(x: torch.Tensor, kernel: int) -> torch.Tensor:
    """Stride-1 average pool that keeps the size and averages only valid pixels."""
    return F.avg_pool2d(x, kernel, stride=1, padding=kernel // 2, count_include_pad=False)


def _check_channels(x: torch.Tensor, expected: int, name: str) -> None:
    if x.dim() != 4:
        raise ConfigError(f"{name}: expected a rank-4 feature map, got shape {tuple(x.shape)}")
    if x.shape[1] != expected:
        raise ConfigError(f"{name}: expected {expected} channels, got {x.shape[1]}")


# ---------------------------------------------------------------------------
# deformable convolution
# ---------------------------------------------------------------------------

def kernel_base_offsets(kernel_size: int, dilation: int, device=None, dtype=None):
    """Row-major (dy, dx) grid offsets of a dilated square kernel."""
    r = torch.arange(kernel_size, device=device, dtype=dtype) - (kernel_size - 1) / 2
    r = r * dilation
    dy, dx = torch.meshgrid(r, r, indexing="ij")
    return dy.reshape(-1), dx.reshape(-1)


def sampling_positions(offset: torch.Tensor, kernel_size: int, dilation: int):
    """Absolute (y, x) sampling coordinates, each of shape N x K x H x W.

    Offsets are laid out as interleaved (dy, dx) pairs per kernel element,
    kernel elements in row-major order.
    """
    n, _, h, w = offset.shape
    k = kernel_size * kernel_size
    if offset.shape[1] != 2 * k:
        raise ConfigError(f"offset field needs {2 * k} channels, got {offset.shape[1]}")
    dy0, dx0 = kernel_base_offsets(kernel_size, dilation, offset.device, offset.dtype)
    ys = torch.arange(h, device=offset.device, dtype=offset.dtype).view(1, 1, h, 1)
    xs = torch.arange(w, device=offset.device, dtype=offset.dtype).view(1, 1, 1, w)
    off = offset.view(n, k, 2, h, w)
    py = ys + dy0.view(1, k, 1, 1) + off[:, :, 0]
    px = xs + dx0.view(1, k, 1, 1) + off[:, :, 1]
    return py, px


def bilinear_gather(x: torch.Tensor, py: torch.Tensor, px: torch.Tensor) -> torch.Tensor:
    """Sample x at fractional positions with zero padding outside the frame.

    x is N x C x H x W, py/px are N x K x H' x W'. Returns N x C x K x H' x W'.
    """
    n, c, h, w = x.shape
    k, ho, wo = py.shape[1:]
    # normalised coordinates for grid_sample with align_corners=False
    gy = (2.0 * py + 1.0) / h - 1.0
    gx = (2.0 * px + 1.0) / w - 1.0
    grid = torch.stack([gx, gy], dim=-1).view(n, k * ho, wo, 2)
    out = F.grid_sample(x, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    return out.view(n, c, k, ho, wo)


def deform_conv2d(x, offset, weight, bias=None, dilation: int = 1) -> torch.Tensor:
    """Stride-1, size-preserving deformable convolution."""
    out_ch, in_ch, kh, kw = weight.shape
    if kh != kw:
        raise ConfigError("deform_conv2d supports square kernels only")
    if x.shape[1] != in_ch:
        raise ConfigError(f"deform_conv2d: input has {x.shape[1]} channels, weight expects {in_ch}")
    py, px = sampling_positions(offset, kh, dilation)
    cols = bilinear_gather(x, py, px)  # N, C, K, H, W
    n, _, k, h, w = cols.shape
    out = torch.einsum("nckhw,ock->nohw", cols, weight.reshape(out_ch, in_ch, k))
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out


class DeformableBlock(nn.Module):
    """Dilated 3x3 deformable conv with hard-tanh bounded offsets.

    Offsets come from a regular 3x3 conv and are clipped to [-1, 1], so the
    dilation-3 block reaches 2-4 px from the centre and the dilation-6 block
    5-7 px.
    """

    dilations = (3, 6)

    def __init__(self, in_channels: int, out_channels: int, dilation: int = 3, bias: bool = True):
        super().__init__()
        if dilation not in self.dilations:
            raise ConfigError(f"unsupported dilation {dilation}; choose from {self.dilations}")
        self.in_channels = in_channels
        self.dilation = dilation
        self.offset_conv = nn.Conv2d(in_channels, 18, 3, padding=1)
        self.offset_act = nn.Hardtanh(-1.0, 1.0)
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, 3, 3))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        nn.init.kaiming_uniform_(self.weight, a=5 ** 0.5)
        # start as a plain dilated conv
        nn.init.zeros_(self.offset_conv.weight)
        nn.init.zeros_(self.offset_conv.bias)

    def offsets(self, x: torch.Tensor) -> torch.Tensor:
        return self.offset_act(self.offset_conv(x))

    def forward(self, x: torch.Tensor):
        _check_channels(x, self.in_channels, "DeformableBlock")
        offset = self.offsets(x)
        y = deform_conv2d(x, offset, self.weight, self.bias, dilation=self.dilation)
        return y, offset


# ---------------------------------------------------------------------------
# DeepPyram blocks
# ---------------------------------------------------------------------------

class PyramidViewFusion(nn.Module):
    """Multi-view average-pool attention around every pixel.

    A 1x1 bottleneck feeds four branches (global mean and stride-1 means of
    size 3, 5 and 7). The branches are stacked, mixed by a 4-group conv, then
    by a regular conv, and layer-normalized.
    """

    pool_kernels = (3, 5, 7)

    def __init__(self, in_channels: int, out_channels: int | None = None,
                 bottleneck: int | None = None, grouped_channels: int | None = None):
        super().__init__()
        out_channels = out_channels or in_channels
        bottleneck = bottleneck or max(1, in_channels // 4)
        if grouped_channels is None:
            grouped_channels = max(4, (bottleneck // 4) * 4)
        if grouped_channels % 4:
            raise ConfigError("grouped_channels must be a multiple of the 4 groups")
        self.in_channels = in_channels
        self.reduce = nn.Conv2d(in_channels, bottleneck, 1)
        self.grouped = nn.Conv2d(4 * bottleneck, grouped_channels, 3, padding=1, groups=4)
        self.mix = nn.Conv2d(grouped_channels, out_channels, 1)
        self.norm = layer_norm(out_channels)

    def branches(self, x: torch.Tensor) -> list[torch.Tensor]:
        """The four pooled views of the bottleneck features."""
        h, w = x.shape[-2:]
        views = [x.mean(dim=(2, 3), keepdim=True).expand(-1, -1, h, w)]
        views += [mean_pool(x, k) for k in self.pool_kernels]
        return views

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_channels(x, self.in_channels, "PyramidViewFusion")
        if min(x.shape[-2:]) < max(self.pool_kernels):
            raise ConfigError(
                f"PyramidViewFusion needs spatial dims >= {max(self.pool_kernels)}, got {tuple(x.shape[-2:])}")
        z = self.reduce(x)
        z = torch.cat(self.branches(z), dim=1)
        return self.norm(self.mix(self.grouped(z)))


class DeformablePyramidReception(nn.Module):
    """Static 3x3 conv plus dilation-3 and dilation-6 deformable convs.

    The union of the three branches covers a sparse 15x15 window. Branch
    outputs are concatenated and reduced by two conv-norm-relu layers.
    """

    def __init__(self, enc_channels: int, dec_channels: int, out_channels: int,
                 branch_channels: int | None = None):
        super().__init__()
        in_channels = enc_channels + dec_channels
        b = branch_channels or max(1, out_channels // 2)
        self.enc_channels = enc_channels
        self.dec_channels = dec_channels
        self.static = nn.Conv2d(in_channels, b, 3, padding=1)
        self.deform3 = DeformableBlock(in_channels, b, dilation=3)
        self.deform6 = DeformableBlock(in_channels, b, dilation=6)
        self.fuse = nn.Sequential(
            nn.Conv2d(3 * b, 3 * b, 3, padding=1, bias=False),
            nn.BatchNorm2d(3 * b),
            nn.ReLU(inplace=True),
            nn.Conv2d(3 * b, out_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )

    def branch_outputs(self, enc_feat, dec_feat) -> list[torch.Tensor]:
        _check_channels(enc_feat, self.enc_channels, "DPR encoder input")
        _check_channels(dec_feat, self.dec_channels, "DPR decoder input")
        if enc_feat.shape[-2:] != dec_feat.shape[-2:]:
            raise ConfigError(
                f"DPR inputs must share spatial dims: {tuple(enc_feat.shape[-2:])} vs {tuple(dec_feat.shape[-2:])}")
        x = torch.cat([enc_feat, dec_feat], dim=1)
        return [self.static(x), self.deform3(x)[0], self.deform6(x)[0]]

    def forward(self, enc_feat, dec_feat):
        return self.fuse(torch.cat(self.branch_outputs(enc_feat, dec_feat), dim=1))


# ---------------------------------------------------------------------------
# ReCal
# ---------------------------------------------------------------------------

def interleave_channels(even: torch.Tensor, odd: torch.Tensor) -> torch.Tensor:
    """Merge two maps so that even channels come from `even` and odd from `odd`."""
    if even.shape != odd.shape:
        raise ConfigError("interleaved maps must have the same shape")
    n, c, h, w = even.shape
    return torch.stack([even, odd], dim=2).reshape(n, 2 * c, h, w)


class RegionSqueeze(nn.Module):
    """Pixel attention from a 1x1 view and 3/5/7 mean-pooled views."""

    pool_kernels = (3, 5, 7)

    def __init__(self, channels: int):
        super().__init__()
        self.views = nn.ModuleList(nn.Conv2d(channels, 1, 1) for _ in range(1 + len(self.pool_kernels)))
        self.fuse = nn.Conv2d(len(self.views), 1, 1)

    def descriptors(self, x):
        pooled = [x] + [mean_pool(x, k) for k in self.pool_kernels]
        return [conv(p) for conv, p in zip(self.views, pooled)]

    def forward(self, x):
        return torch.sigmoid(self.fuse(torch.cat(self.descriptors(x), dim=1)))


class ChannelSqueeze(nn.Module):
    """Global pool, C/r bottleneck and back to C, both with ReLU."""

    def __init__(self, channels: int, r: int = 2):
        super().__init__()
        self.down = nn.Conv2d(channels, channels // r, 1)
        self.up = nn.Conv2d(channels // r, channels, 1)

    def forward(self, x):
        s = x.mean(dim=(2, 3), keepdim=True)
        return F.relu(self.up(F.relu(self.down(s))))


class ReCal(nn.Module):
    """Joint region and channel recalibration.

    Both calibrated maps are layer-normalized, interleaved channel by channel
    and merged pairwise by a 3x3 conv with one group per input channel.
    """

    def __init__(self, channels: int, r: int = 2):
        super().__init__()
        if r < 1 or channels % r:
            raise ConfigError(f"reduction ratio {r} must divide channel count {channels}")
        self.channels = channels
        self.region = RegionSqueeze(channels)
        self.channel = ChannelSqueeze(channels, r)
        self.norm_region = layer_norm(channels, affine=False)
        self.norm_channel = layer_norm(channels, affine=False)
        self.merge = nn.Conv2d(2 * channels, channels, 3, padding=1, groups=channels)

    def forward(self, x):
        _check_channels(x, self.channels, "ReCal")
        re = self.norm_region(x * self.region(x))
        ch = self.norm_channel(x * self.channel(x))
        return self.merge(interleave_channels(re, ch))


# ---------------------------------------------------------------------------
# AdaptNet blocks
# ---------------------------------------------------------------------------

class CascadePoolingFusion(nn.Module):
    """Bottleneck context from three cascaded stride-2 pools and a global pool.

    Each input channel is grouped with its four pooled views and mixed by its
    own filter; the pooled views also pass through one shared conv into a
    narrower space before a final 1x1 fusion.
    """

    def __init__(self, channels: int, reduced: int | None = None, out_channels: int | None = None):
        super().__init__()
        reduced = reduced or max(1, channels // 4)
        out_channels = out_channels or channels
        self.channels = channels
        self.grouped = nn.Conv2d(5 * channels, channels, 3, padding=1, groups=channels)
        self.shared = nn.Conv2d(channels, reduced, 1)
        self.fuse = nn.Sequential(
            nn.Conv2d(channels + 4 * reduced, out_channels, 1, bias=False),
            layer_norm(out_channels),
            nn.ReLU(inplace=True),
        )

    def pooled_views(self, x):
        h, w = x.shape[-2:]
        views, p = [], x
        for _ in range(3):
            # a plain 2x2 mean pool when the size is even; adaptive otherwise
            p = F.adaptive_avg_pool2d(p, (max(1, -(-p.shape[-2] // 2)), max(1, -(-p.shape[-1] // 2))))
            views.append(F.interpolate(p, size=(h, w), mode="bilinear", align_corners=False))
        views.append(x.mean(dim=(2, 3), keepdim=True).expand(-1, -1, h, w))
        return views

    def grouped_input(self, x, views=None):
        """Channel c of x followed by its four pooled views, for every c."""
        views = self.pooled_views(x) if views is None else views
        n, c, h, w = x.shape
        return torch.stack([x] + views, dim=2).reshape(n, 5 * c, h, w)

    def forward(self, x):
        _check_channels(x, self.channels, "CascadePoolingFusion")
        views = self.pooled_views(x)
        local = self.grouped(self.grouped_input(x, views))
        shared = [self.shared(v) for v in views]
        return self.fuse(torch.cat([local] + shared, dim=1))


class FeatureFusionDecision(nn.Module):
    """Pixel-wise softmax attention across branches.

    Every branch goes through one shared conv; a shared 1x1 conv scores each
    result, scores are normalized across branches and used as weights.
    """

    def __init__(self, channels: int, num_branches: int = 2):
        super().__init__()
        if num_branches < 2:
            raise ConfigError("FeatureFusionDecision needs at least two branches")
        self.num_branches = num_branches
        self.semantic = nn.Sequential(nn.Conv2d(channels, channels, 3, padding=1), nn.ReLU(inplace=True))
        self.score = nn.Conv2d(channels, 1, 1)

    def attention(self, branches: Sequence[torch.Tensor]):
        if len(branches) != self.num_branches:
            raise ConfigError(f"expected {self.num_branches} branches, got {len(branches)}")
        maps = [self.semantic(b) for b in branches]
        logits = torch.cat([self.score(m) for m in maps], dim=1)
        return maps, torch.softmax(logits, dim=1)

    def forward(self, branches: Sequence[torch.Tensor]):
        maps, att = self.attention(branches)
        return sum(att[:, i:i + 1] * m for i, m in enumerate(maps))


class ScaleAdaptiveBlock(nn.Module):
    """Cascade of small convs whose intermediate maps are concatenated and fused."""

    def __init__(self, channels: int):
        super().__init__()
        c1, c2 = max(1, channels // 2), max(1, channels // 4)
        self.convs = nn.ModuleList([
            nn.Conv2d(channels, c1, 3, padding=1),
            nn.Conv2d(c1, c2, 3, padding=1),
            nn.Conv2d(c2, c2, 3, padding=1),
        ])
        self.fuse = nn.Conv2d(c1 + 2 * c2, channels, 1)

    def forward(self, x):
        feats = []
        for conv in self.convs:
            x = F.relu(conv(x))
            feats.append(x)
        return self.fuse(torch.cat(feats, dim=1))


class ShapeAdaptiveBlock(nn.Module):
    """Deformable and structured 3x3 convs sharing one weight tensor, fused by attention."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.offset_conv = nn.Conv2d(channels, 18, 3, padding=1)
        self.weight = nn.Parameter(torch.empty(channels, channels, 3, 3))
        self.bias = nn.Parameter(torch.zeros(channels))
        nn.init.kaiming_uniform_(self.weight, a=5 ** 0.5)
        nn.init.zeros_(self.offset_conv.weight)
        nn.init.zeros_(self.offset_conv.bias)
        self.decide = FeatureFusionDecision(channels, 2)

    def branches(self, x):
        offset = F.hardtanh(self.offset_conv(x))
        deformable = deform_conv2d(x, offset, self.weight, self.bias, dilation=1)
        structured = F.conv2d(x, self.weight, self.bias, padding=1)
        return deformable, structured

    def forward(self, x):
        return self.decide(self.branches(x))


class ShapeScaleFusion(nn.Module):
    """AdaptNet decoder block."""

    def __init__(self, enc_channels: int, dec_channels: int, out_channels: int):
        super().__init__()
        in_channels = enc_channels + dec_channels
        mid = 3 * out_channels // 2
        self.enc_channels = enc_channels
        self.dec_channels = dec_channels
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, mid, 3, padding=1, bias=False),
            layer_norm(mid),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid, out_channels, 3, padding=1, bias=False),
            layer_norm(out_channels),
            nn.ReLU(inplace=True),
        )
        self.scale = ScaleAdaptiveBlock(out_channels)
        self.shape = ShapeAdaptiveBlock(out_channels)
        self.decide = FeatureFusionDecision(out_channels, 2)

    def forward(self, enc_feat, dec_feat):
        _check_channels(enc_feat, self.enc_channels, "SSF encoder input")
        _check_channels(dec_feat, self.dec_channels, "SSF decoder input")
        if enc_feat.shape[-2:] != dec_feat.shape[-2:]:
            raise ConfigError("SSF inputs must share spatial dims")
        x = self.stem(torch.cat([enc_feat, dec_feat], dim=1))
        return self.decide([self.scale(x), self.shape(x)])


# ---------------------------------------------------------------------------
# baseline decoder
# ---------------------------------------------------------------------------

class DoubleConv(nn.Module):
    """(conv => BN => ReLU) * 2"""

    def __init__(self, in_channels: int, out_channels: int, mid_channels: int | None = None):
        super().__init__()
        mid_channels = mid_channels or out_channels
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, mid_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(mid_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid_channels, out_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.net(x)


class UpDoubleConv(nn.Module):
    """Concatenate a skip map with the decoder map and apply a double conv."""

    def __init__(self, enc_channels: int, dec_channels: int, out_channels: int):
        super().__init__()
        in_channels = enc_channels + dec_channels
        self.conv = DoubleConv(in_channels, out_channels, in_channels // 2)

    def forward(self, enc_feat, dec_feat):
        return self.conv(torch.cat([enc_feat, dec_feat], dim=1))
