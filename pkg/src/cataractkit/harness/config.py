"""Declarative run configuration (YAML or JSON)."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ..errors import ConfigError
from ..losses import LossWeights
from ..networks import NetworkSpec


@dataclass
class TrainConfig:
    network: dict = field(default_factory=lambda: {"network_id": "deeppyram"})
    loss: dict = field(default_factory=dict)
    optimizer: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 0.0
    lr: float = 0.002
    lr_decay: float = 0.8
    lr_step_epochs: int = 2
    grad_clip: float = 0.1
    epochs: int = 10
    batch_size: int = 2
    augment: list | str = field(default_factory=list)
    seed: int = 0
    mask_mode: str = "binary"
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer: unknown value {self.optimizer!r}")
        if self.mask_mode not in ("binary", "multiclass"):
            raise ConfigError(f"mask_mode: unknown value {self.mask_mode!r}")
        for key in ("lr", "grad_clip", "lr_decay"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key}: must be positive")
        for key in ("epochs", "batch_size", "lr_step_epochs"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key}: must be at least 1")

    def network_spec(self) -> NetworkSpec:
        return spec_from_dict(self.network, "network")

    def loss_weights(self) -> LossWeights:
        return dataclass_from_dict(LossWeights, self.loss, "loss")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return config_hash(self.to_dict())


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]


def dataclass_from_dict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in fields(cls)}
    for key in d:
        if key not in names:
            raise ConfigError(f"{where}.{key}: unknown key")
    return cls(**d)


def spec_from_dict(d: dict, where: str = "network") -> NetworkSpec:
    if "network_id" not in d:
        raise ConfigError(f"{where}.network_id: missing key")
    return dataclass_from_dict(NetworkSpec, d, where)


def read_mapping(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_config(path_or_dict, cls=TrainConfig):
    d = path_or_dict if isinstance(path_or_dict, dict) else read_mapping(path_or_dict)
    return dataclass_from_dict(cls, d, "config")
