"""Encoder-decoder segmentation networks."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..blocks import (CascadePoolingFusion, DeformablePyramidReception, PyramidViewFusion,
                      ReCal, ShapeScaleFusion, UpDoubleConv)
from ..errors import ConfigError
from .encoders import build_encoder

DECODER_WIDTHS = (256, 128, 64, 32)


def upsample_to(x, ref):
    return F.interpolate(x, size=ref.shape[-2:], mode="bilinear", align_corners=False)


class Segmenter(nn.Module):
    """Shared plumbing: encoder, four decoder stages, 1x1 classifier, softmax."""

    multiple = 32

    def __init__(self, encoder_id: str = "vgg16", num_classes: int = 2):
        super().__init__()
        if num_classes < 2:
            raise ConfigError("segmenters predict at least two classes (background + foreground)")
        self.num_classes = num_classes
        self.encoder = build_encoder(encoder_id)
        c = self.encoder.channels
        self.skip_channels = [c[3], c[2], c[1], c[0]]
        self.in_channels = [c[4]] + list(DECODER_WIDTHS[:-1])
        self.head = nn.Conv2d(DECODER_WIDTHS[-1], num_classes, 1)

    def check_input(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ConfigError(f"expected N x 3 x H x W input, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if h % self.multiple or w % self.multiple:
            raise ConfigError(f"input spatial dims must be divisible by {self.multiple}, got {(h, w)}")

    def classify(self, head, feat, size):
        logits = head(feat)
        if logits.shape[-2:] != size:
            logits = F.interpolate(logits, size=size, mode="bilinear", align_corners=False)
        return torch.softmax(logits, dim=1)


class UNet(Segmenter):
    """U-Net decoder on a backbone encoder; optional ReCal calibration.

    With ``recal=True`` one ReCal module follows the bottleneck and each of
    the four decoder stages (512, 256, 128, 64 and 32 channels for VGG16).
    """

    def __init__(self, encoder_id="vgg16", num_classes=2, recal=False, r=2):
        super().__init__(encoder_id, num_classes)
        self.decoders = nn.ModuleList(
            UpDoubleConv(s, i, o) for s, i, o in zip(self.skip_channels, self.in_channels, DECODER_WIDTHS))
        if recal:
            self.bottleneck_recal = ReCal(self.encoder.channels[4], r)
            self.decoder_recals = nn.ModuleList(ReCal(o, r) for o in DECODER_WIDTHS)
        else:
            self.bottleneck_recal = None
            self.decoder_recals = None

    def forward(self, x):
        self.check_input(x)
        feats = self.encoder(x)
        y = feats[4]
        if self.bottleneck_recal is not None:
            y = self.bottleneck_recal(y)
        for i, dec in enumerate(self.decoders):
            skip = feats[3 - i]
            y = dec(skip, upsample_to(y, skip))
            if self.decoder_recals is not None:
                y = self.decoder_recals[i](y)
        return self.classify(self.head, y, x.shape[-2:])


class DeepPyram(Segmenter):
    """PVF on the incoming decoder map, DPR fusion with the skip, deep supervision.

    Training mode returns probability maps at scales 1, 1/2, 1/4, 1/8;
    eval mode returns only the full-resolution map.
    """

    def __init__(self, encoder_id="vgg16", num_classes=2, pvf_bottleneck_ratio=4):
        super().__init__(encoder_id, num_classes)
        self.pvfs = nn.ModuleList(
            PyramidViewFusion(c, c, bottleneck=max(1, c // pvf_bottleneck_ratio)) for c in self.in_channels)
        self.decoders = nn.ModuleList(
            DeformablePyramidReception(s, i, o)
            for s, i, o in zip(self.skip_channels, self.in_channels, DECODER_WIDTHS))
        # heads for 1/8, 1/4, 1/2; the full-resolution head is self.head
        self.aux_heads = nn.ModuleList(nn.Conv2d(o, num_classes, 1) for o in DECODER_WIDTHS[:-1])

    def forward(self, x):
        self.check_input(x)
        feats = self.encoder(x)
        y = feats[4]
        stage_outputs = []
        for i, (pvf, dec) in enumerate(zip(self.pvfs, self.decoders)):
            skip = feats[3 - i]
            y = dec(skip, upsample_to(pvf(y), skip))
            stage_outputs.append(y)
        h, w = x.shape[-2:]
        master = self.classify(self.head, stage_outputs[-1], (h, w))
        if not self.training:
            return master
        outs = [master]
        for k, (head, feat) in enumerate(zip(reversed(self.aux_heads), reversed(stage_outputs[:-1]))):
            f = 2 ** (k + 1)
            outs.append(self.classify(head, feat, (h // f, w // f)))
        return outs


class AdaptNet(Segmenter):
    """CPF at the bottleneck and SSF decoder blocks."""

    def __init__(self, encoder_id="vgg16", num_classes=2):
        super().__init__(encoder_id, num_classes)
        self.cpf = CascadePoolingFusion(self.encoder.channels[4])
        self.decoders = nn.ModuleList(
            ShapeScaleFusion(s, i, o) for s, i, o in zip(self.skip_channels, self.in_channels, DECODER_WIDTHS))

    def forward(self, x):
        self.check_input(x)
        feats = self.encoder(x)
        y = self.cpf(feats[4])
        for i, dec in enumerate(self.decoders):
            skip = feats[3 - i]
            y = dec(skip, upsample_to(y, skip))
        return self.classify(self.head, y, x.shape[-2:])
