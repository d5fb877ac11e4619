"""Training and evaluation loops shared by all experiments."""
from __future__ import annotations

import copy
import csv
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import TrainingError
from ..losses import ce_log_dice, pyramid_loss
from ..networks import DRNet, PhaseRNN, save_checkpoint
from .config import TrainConfig
from .metrics import MetricReport


def seed_everything(seed: int) -> torch.Generator:
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    g = torch.Generator()
    g.manual_seed(seed)
    return g


def lr_at_epoch(lr0: float, epoch: int, decay: float = 0.8, step: int = 2) -> float:
    """Step schedule: multiply by ``decay`` every ``step`` epochs (epochs count from 0)."""
    return lr0 * decay ** (epoch // step)


def make_optimizer(cfg: TrainConfig, params):
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    return torch.optim.SGD(params, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)


def deblur_loss(outs, sharp):
    """Mean squared error of the 1/4, 1/2 and full-scale estimates."""
    total = 0.0
    for out in outs:
        f = sharp.shape[-1] // out.shape[-1]
        target = F.avg_pool2d(sharp, f) if f > 1 else sharp
        total = total + F.mse_loss(out, target)
    return total


def compute_loss(net, batch, weights, mask_mode="binary"):
    x, y = batch
    out = net(x)
    if isinstance(net, DRNet):
        return deblur_loss(out, y), out[-1]
    if isinstance(net, PhaseRNN):
        return F.nll_loss(torch.log(out.clamp_min(1e-7)), y), out
    if isinstance(out, (list, tuple)):
        return pyramid_loss(out, y, weights, mask_mode), out[0]
    return ce_log_dice(out, y, weights), out


def batches(data, batch_size, generator=None, shuffle=True):
    n = len(data)
    order = torch.randperm(n, generator=generator).tolist() if shuffle else list(range(n))
    for i in range(0, n, batch_size):
        items = [data[j] for j in order[i:i + batch_size]]
        yield tuple(torch.stack(parts) for parts in zip(*items))


@torch.no_grad()
def evaluate_segmentation(net, data, num_classes, batch_size=2) -> MetricReport:
    was_training = net.training
    net.eval()
    report = MetricReport(num_classes)
    for x, y in batches(data, batch_size, shuffle=False):
        pred = net(x).argmax(1)
        for p, t in zip(pred.numpy(), y.numpy()):
            report.add(p, t)
    net.train(was_training)
    return report


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    checkpoint: Path | None = None


def write_history(history, path):
    path = Path(path)
    if not history:
        path.write_text("")
        return path
    keys = list(history[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(history)
    return path


def train_loop(cfg: TrainConfig, net, data, val_data=None, out_dir=None) -> TrainResult:
    """SGD-style training with gradient-norm clipping and a step learning-rate decay.

    ``data`` is an indexable dataset of (input, target) tensor pairs. The
    history holds one row per epoch; segmenters are additionally scored on
    ``val_data`` (or ``data``) with the metric report.
    """
    gen = seed_everything(cfg.seed)
    weights = cfg.loss_weights()
    spec = cfg.network_spec()
    opt = make_optimizer(cfg, [p for p in net.parameters() if p.requires_grad])
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=cfg.lr_step_epochs, gamma=cfg.lr_decay)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    result = TrainResult()
    good_state, step = copy.deepcopy(net.state_dict()), 0
    segmenter = not isinstance(net, (DRNet, PhaseRNN))
    for epoch in range(cfg.epochs):
        net.train()
        losses = []
        lr = opt.param_groups[0]["lr"]
        for batch in batches(data, cfg.batch_size, gen):
            loss, _ = compute_loss(net, batch, weights, cfg.mask_mode)
            if not torch.isfinite(loss):
                net.load_state_dict(good_state)
                path = None
                if out_dir:
                    path = save_checkpoint(net, out_dir / "last_good.npz", spec.network_id, spec.digest(), step)
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}; last good checkpoint: {path}")
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
            opt.step()
            losses.append(loss.item())
            step += 1
        sched.step()
        good_state = copy.deepcopy(net.state_dict())
        row = {"epoch": epoch, "lr": lr, "loss": float(np.mean(losses)) if losses else math.nan}
        if segmenter:
            row.update(evaluate_segmentation(net, val_data or data, net.num_classes).flat())
        result.history.append(row)
    if out_dir:
        result.checkpoint = save_checkpoint(net, out_dir / "checkpoint.npz", spec.network_id,
                                            spec.digest(), step, {"config_hash": cfg.digest()})
        write_history(result.history, out_dir / "history.csv")
    return result
