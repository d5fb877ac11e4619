"""Backbone encoders split into five stages.

A VGG stage holds all layers between two consecutive max-pools, so the five
stages run at strides 1, 2, 4, 8 and 16. ResNet stages run at 2 ... 32.
"""
from __future__ import annotations

import torch.nn as nn
from torchvision import models

from ..errors import ConfigError

ENCODERS = ("vgg16", "vgg19", "resnet34", "resnet50")


class VGGEncoder(nn.Module):
    def __init__(self, depth: int = 16):
        super().__init__()
        ctor = {16: models.vgg16, 19: models.vgg19}[depth]
        layers = list(ctor(weights=None).features)
        stages, current = [], []
        for layer in layers:
            if isinstance(layer, nn.MaxPool2d):
                stages.append(current)
                current = [layer]
            else:
                current.append(layer)
        # the trailing max-pool is not part of any stage
        self.stages = nn.ModuleList(nn.Sequential(*s) for s in stages)
        self.channels = [64, 128, 256, 512, 512]
        self.strides = [1, 2, 4, 8, 16]

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class ResNetEncoder(nn.Module):
    def __init__(self, depth: int = 34):
        super().__init__()
        net = {34: models.resnet34, 50: models.resnet50}[depth](weights=None)
        self.stages = nn.ModuleList([
            nn.Sequential(net.conv1, net.bn1, net.relu),
            nn.Sequential(net.maxpool, net.layer1),
            net.layer2,
            net.layer3,
            net.layer4,
        ])
        e = 4 if depth == 50 else 1
        self.channels = [64, 64 * e, 128 * e, 256 * e, 512 * e]
        self.strides = [2, 4, 8, 16, 32]

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


def build_encoder(encoder_id: str) -> nn.Module:
    if encoder_id == "vgg16":
        return VGGEncoder(16)
    if encoder_id == "vgg19":
        return VGGEncoder(19)
    if encoder_id == "resnet34":
        return ResNetEncoder(34)
    if encoder_id == "resnet50":
        return ResNetEncoder(50)
    raise ConfigError(f"unknown encoder {encoder_id!r}; choose from {ENCODERS}")
