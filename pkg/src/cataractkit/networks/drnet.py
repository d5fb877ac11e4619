"""Multi-scale residual deblurring network.

Three subnets run coarse to fine. Each predicts a residual that is added to
the blurry input resampled to its own scale (1/4, 1/2, full).
"""
from __future__ import annotations

import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError

WIDTH = 128


def conv_bn_relu(cin, cout, k, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


def downscale(x, factor: int):
    return F.avg_pool2d(x, factor) if factor > 1 else x


class CoarseSubnet(nn.Module):
    """Full-resolution input, two stride-2 convs, residual at 1/4 scale.

    Skips: conv1 + conv3 feed conv4, conv4 + conv6 feed conv7.
    """

    def __init__(self, channels=3, width=WIDTH):
        super().__init__()
        self.conv1 = conv_bn_relu(channels, width, 11, stride=2)
        self.conv2 = conv_bn_relu(width, width, 7)
        self.conv3 = conv_bn_relu(width, width, 7)
        self.conv4 = conv_bn_relu(width, width, 7, stride=2)
        self.conv5 = conv_bn_relu(width, width, 3)
        self.conv6 = conv_bn_relu(width, width, 3)
        self.conv7 = nn.Conv2d(width, channels, 3, padding=1)

    def forward(self, blurry):
        a = self.conv1(blurry)
        b = self.conv4(a + self.conv3(self.conv2(a)))
        residual = self.conv7(b + self.conv6(self.conv5(b)))
        return residual + downscale(blurry, 4)


class RefineSubnet(nn.Module):
    """Four 5x5 convs and a stride-2 deconv doubling the resolution.

    Skip: the first conv's output is added to the last conv's output
    before the deconv.
    """

    def __init__(self, channels=3, width=WIDTH):
        super().__init__()
        self.convs = nn.ModuleList([conv_bn_relu(channels, width, 5)] +
                                   [conv_bn_relu(width, width, 5) for _ in range(3)])
        self.deconv = nn.ConvTranspose2d(width, channels, 5, stride=2, padding=2, output_padding=1)

    def forward(self, prev, reference):
        first = self.convs[0](prev)
        y = first
        for conv in self.convs[1:]:
            y = conv(y)
        return self.deconv(first + y) + reference


class DRNet(nn.Module):
    def __init__(self, channels=3, width=WIDTH, init_std=0.01, zero_residual=False):
        super().__init__()
        self.n1 = CoarseSubnet(channels, width)
        self.n2 = RefineSubnet(channels, width)
        self.n3 = RefineSubnet(channels, width)
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.normal_(m.weight, 0.0, init_std)
                nn.init.zeros_(m.bias)
        if zero_residual:
            # start as the identity on the resampled input
            for layer in self.residual_layers():
                nn.init.zeros_(layer.weight)

    def residual_layers(self):
        """The layers whose outputs are added to the resampled blurry input."""
        return [self.n1.conv7, self.n2.deconv, self.n3.deconv]

    def forward(self, blurry):
        """Returns the sharp estimates at 1/4, 1/2 and full resolution."""
        if blurry.dim() != 4:
            raise ConfigError(f"expected N x C x H x W input, got {tuple(blurry.shape)}")
        h, w = blurry.shape[-2:]
        if h % 4 or w % 4:
            raise ConfigError(f"input spatial dims must be divisible by 4, got {(h, w)}")
        quarter = self.n1(blurry)
        half = self.n2(quarter, downscale(blurry, 2))
        full = self.n3(half, blurry)
        return quarter, half, full
