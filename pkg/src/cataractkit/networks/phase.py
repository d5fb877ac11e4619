"""Recurrent CNN for binary phase recognition on five-frame clips."""
from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import ConfigError
from .encoders import build_encoder


class PhaseRNN(nn.Module):
    """Time-distributed backbone, dense/dropout/relu, bidirectional LSTM, classifier.

    Input is N x T x 3 x H x W with T = 5. Output is N x 2 probabilities for
    (target phase, rest).
    """

    clip_length = 5

    def __init__(self, encoder_id="vgg16", num_classes=2, dense_units=256,
                 recurrent_units=5, dropout=0.5):
        super().__init__()
        self.encoder = build_encoder(encoder_id)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.dense = nn.Sequential(
            nn.Linear(self.encoder.channels[-1], dense_units),
            nn.Dropout(dropout),
            nn.ReLU(inplace=True),
        )
        self.rnn = nn.LSTM(dense_units, recurrent_units, batch_first=True, bidirectional=True)
        self.classifier = nn.Linear(2 * recurrent_units, num_classes)

    def forward(self, clip):
        if clip.dim() != 5 or clip.shape[1] != self.clip_length:
            raise ConfigError(f"expected N x {self.clip_length} x C x H x W clip, got {tuple(clip.shape)}")
        n, t = clip.shape[:2]
        frames = clip.flatten(0, 1)
        feat = self.pool(self.encoder(frames)[-1]).flatten(1)
        seq = self.dense(feat).view(n, t, -1)
        _, (h, _) = self.rnn(seq)
        # final forward state and final backward state
        summary = torch.cat([h[0], h[1]], dim=1)
        return torch.softmax(self.classifier(summary), dim=1)
