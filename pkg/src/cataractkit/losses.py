"""Segmentation and contrastive training objectives."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F

from .errors import ConfigError

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lam: float = 0.8          # cross-entropy share of the composite loss
    sigma: float = 1.0        # Dice smoothing
    pl_alpha: float = 0.75    # weight of the 1/2-scale output
    pl_beta: float = 0.5      # weight of the 1/4-scale output
    pl_gamma: float = 0.25    # weight of the 1/8-scale output
    tau: float = 0.5          # contrastive temperature
    dice_log_base: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must lie in [0, 1], got {self.lam}")
        if self.sigma <= 0 or self.tau <= 0:
            raise ConfigError("sigma and tau must be positive")
        for name in ("pl_alpha", "pl_beta", "pl_gamma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")

    @property
    def pyramid(self) -> tuple[float, float, float, float]:
        return (1.0, self.pl_alpha, self.pl_beta, self.pl_gamma)


def _onehot_targets(pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    if pred.dim() == truth.dim() + 1 and pred.shape[:1] + pred.shape[2:] == truth.shape:
        return F.one_hot(truth.long(), pred.shape[1]).movedim(-1, 1).to(pred.dtype)
    raise ConfigError(f"shape mismatch between prediction {tuple(pred.shape)} and truth {tuple(truth.shape)}")


def soft_dice(pred: torch.Tensor, truth: torch.Tensor, sigma: float = 1.0) -> torch.Tensor:
    """(2 * sum(truth * pred) + sigma) / (sum(truth) + sum(pred) + sigma)."""
    return (2 * (truth * pred).sum() + sigma) / (truth.sum() + pred.sum() + sigma)


def ce_log_dice(pred: torch.Tensor, truth: torch.Tensor, w: LossWeights = LossWeights()) -> torch.Tensor:
    """lam * CE - (1 - lam) * log(soft Dice).

    Binary layout: pred and truth share a shape and hold the foreground
    probability and {0, 1} targets. Multi-class layout: pred is N x K x ...
    class probabilities and truth holds integer labels.

    Cross-entropy is averaged over pixels. For multi-class input the Dice
    term is the mean over foreground classes (class 0 is background).
    """
    if pred.shape == truth.shape:
        if torch.any(pred < -EPS) or torch.any(pred > 1 + EPS):
            raise ConfigError("predicted probabilities must lie in [0, 1]")
        p = pred.clamp(EPS, 1 - EPS)
        t = truth.to(pred.dtype)
        ce = -(t * torch.log(p) + (1 - t) * torch.log(1 - p)).mean()
        dice = soft_dice(pred, t, w.sigma)
    else:
        probs, onehot = pred, _onehot_targets(pred, truth)
        if torch.any(probs < -EPS) or torch.any(probs > 1 + EPS):
            raise ConfigError("predicted probabilities must lie in [0, 1]")
        ce = -(onehot * torch.log(probs.clamp_min(EPS))).sum(dim=1).mean()
        k = probs.shape[1]
        dice = torch.stack([soft_dice(probs[:, c], onehot[:, c], w.sigma) for c in range(1, k)]).mean()
    return w.lam * ce - (1 - w.lam) * torch.log(dice) / math.log(w.dice_log_base)


def downscale_truth(truth: torch.Tensor, factor: int, mode: str = "binary") -> torch.Tensor:
    """Shrink a label map by ``factor``.

    binary: a cell is 1 iff any of its pixels is 1 (max pool).
    multiclass: nearest neighbour, keeping the top-left pixel of every cell.
    """
    if factor not in (1, 2, 4, 8):
        raise ConfigError(f"unsupported factor {factor}")
    h, w = truth.shape[-2:]
    if h % factor or w % factor:
        raise ConfigError(f"mask dims {(h, w)} not divisible by {factor}")
    if factor == 1:
        return truth
    if mode == "binary":
        x = truth.to(torch.float32).reshape(-1, 1, h, w)
        out = F.max_pool2d(x, factor)
        return out.reshape(*truth.shape[:-2], h // factor, w // factor).to(truth.dtype)
    if mode == "multiclass":
        return truth[..., ::factor, ::factor]
    raise ConfigError(f"unknown mode {mode!r}")


def pyramid_loss(outs: Sequence[torch.Tensor], truth: torch.Tensor, w: LossWeights = LossWeights(),
                 mode: str = "binary") -> torch.Tensor:
    """Weighted sum of ce_log_dice over outputs at scales 1, 1/2, 1/4, 1/8.

    ``outs`` are class-probability maps (N x K x H x W) or binary foreground
    maps; ``truth`` is the full-resolution label map.
    """
    if len(outs) != 4:
        raise ConfigError(f"pyramid loss needs 4 scales, got {len(outs)}")
    total = 0.0
    for i, (out, weight) in enumerate(zip(outs, w.pyramid)):
        t = downscale_truth(truth, 2 ** i, mode)
        if t.shape[-2:] != out.shape[-2:]:
            raise ConfigError(f"scale 1/{2 ** i}: output {tuple(out.shape[-2:])} vs truth {tuple(t.shape[-2:])}")
        total = total + weight * ce_log_dice(out, t, w)
    return total


def cosine_similarity(a: torch.Tensor, b: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Cosine of the angle between the last-axis vectors, guarded by eps."""
    return (a * b).sum(-1) / (a.norm(dim=-1) * b.norm(dim=-1)).clamp_min(eps)


def contrastive_loss(e_ref, e_ref_aug, e_adv, e_adv_aug, w: LossWeights = LossWeights(),
                     eps: float = 1e-8) -> torch.Tensor:
    """Pull a frame toward its augmented copy, away from a nearby frame's pair.

    The denominator holds the four cross terms between {ref, ref_aug} and
    {adv, adv_aug}. Batched inputs (N x D) give the batch mean.
    """
    if eps <= 0:
        for v in (e_ref, e_ref_aug, e_adv, e_adv_aug):
            if torch.any(v.norm(dim=-1) == 0):
                raise ConfigError("zero embedding vector without an eps guard")
    pos = cosine_similarity(e_ref, e_ref_aug, eps) / w.tau
    cross = torch.stack([cosine_similarity(a, b, eps) / w.tau
                         for a in (e_ref, e_ref_aug) for b in (e_adv, e_adv_aug)], dim=-1)
    loss = torch.logsumexp(cross, dim=-1) - pos
    return loss.mean()
