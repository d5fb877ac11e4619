"""Network construction from a declarative spec, and parameter accounting."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch.nn as nn

from ..errors import ConfigError
from .drnet import DRNet
from .encoders import ENCODERS
from .phase import PhaseRNN
from .segmenters import AdaptNet, DeepPyram, UNet

NETWORKS = ("deeppyram", "recalnet", "adaptnet", "drnet", "phasernn", "unet")
SEGMENTERS = ("deeppyram", "recalnet", "adaptnet", "unet")

# published trainable-parameter totals, in millions
REFERENCE_PARAMS = {"deeppyram": 23.62, "recalnet": 22.92, "adaptnet": 23.61, "drnet": 5.25, "unet": 22.55}


@dataclass
class NetworkSpec:
    network_id: str
    encoder_id: str | None = None
    num_classes: int = 2
    input_shape: tuple = (3, 512, 512)
    init: str = "random"
    weights_path: str | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.encoder_id is None:
            self.encoder_id = "none" if self.network_id == "drnet" else "vgg16"
        self.input_shape = tuple(self.input_shape)

    def validate(self):
        if self.network_id not in NETWORKS:
            raise ConfigError(f"unknown network {self.network_id!r}; choose from {NETWORKS}")
        if self.network_id == "drnet":
            if self.encoder_id != "none":
                raise ConfigError("drnet has no backbone; encoder_id must be 'none'")
        elif self.encoder_id not in ENCODERS:
            raise ConfigError(f"unknown encoder {self.encoder_id!r}; choose from {ENCODERS}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if self.init not in ("random", "pretrained-file"):
            raise ConfigError(f"unknown init {self.init!r}")
        if self.network_id in SEGMENTERS:
            h, w = self.input_shape[-2:]
            if h % 32 or w % 32:
                raise ConfigError(f"input dims {(h, w)} must be divisible by 32")
        if self.init == "pretrained-file":
            if not self.weights_path or not Path(self.weights_path).is_file():
                raise ConfigError(f"pretrained weight file not found: {self.weights_path!r}")

    def digest(self) -> str:
        d = asdict(self)
        d.pop("weights_path")
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]


def build_network(spec: NetworkSpec) -> nn.Module:
    spec.validate()
    opts = dict(spec.options)
    if spec.network_id == "deeppyram":
        net = DeepPyram(spec.encoder_id, spec.num_classes, **opts)
    elif spec.network_id == "recalnet":
        net = UNet(spec.encoder_id, spec.num_classes, recal=True, **opts)
    elif spec.network_id == "unet":
        net = UNet(spec.encoder_id, spec.num_classes, recal=False, **opts)
    elif spec.network_id == "adaptnet":
        net = AdaptNet(spec.encoder_id, spec.num_classes, **opts)
    elif spec.network_id == "drnet":
        net = DRNet(**opts)
    else:
        net = PhaseRNN(spec.encoder_id, spec.num_classes, **opts)
    if spec.init == "pretrained-file":
        from .checkpoint import load_weights
        target = net if spec.network_id == "drnet" else net.encoder
        load_weights(target, spec.weights_path)
    return net


def count_parameters(module: nn.Module, bias_free: bool = False) -> int:
    """Trainable parameter count. ``bias_free`` keeps only kernels (rank >= 2)."""
    return sum(p.numel() for p in module.parameters()
               if p.requires_grad and (not bias_free or p.dim() >= 2))


def parameter_breakdown(net: nn.Module, bias_free: bool = False) -> dict[str, int]:
    return {name: count_parameters(child, bias_free) for name, child in net.named_children()}


def recal_delta(encoder_id: str = "vgg16", num_classes: int = 2) -> int:
    """Bias-free weights added by the ReCal modules over the plain U-Net."""
    with_recal = UNet(encoder_id, num_classes, recal=True)
    without = UNet(encoder_id, num_classes, recal=False)
    return count_parameters(with_recal, True) - count_parameters(without, True)


def inspect_network(spec: NetworkSpec) -> dict:
    net = build_network(spec)
    total = count_parameters(net)
    report = {
        "network": spec.network_id,
        "encoder": spec.encoder_id,
        "total": total,
        "total_bias_free": count_parameters(net, True),
        "modules": parameter_breakdown(net),
    }
    ref = REFERENCE_PARAMS.get(spec.network_id)
    if ref is not None and spec.encoder_id in ("vgg16", "none"):
        report["reference_millions"] = ref
        report["gap"] = total - int(round(ref * 1e6))
        report["gap_percent"] = 100.0 * (total / (ref * 1e6) - 1.0)
    if spec.network_id == "recalnet":
        report["recal_modules"] = {
            f"{name}": count_parameters(m, True)
            for name, m in net.named_modules() if m.__class__.__name__ == "ReCal"
        }
        report["recal_delta"] = recal_delta(spec.encoder_id, spec.num_classes)
    return report
