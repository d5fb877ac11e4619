"""Named-tensor checkpoint archive.

A checkpoint is a NumPy ``.npz`` file. Every entry of the module's state dict
is stored under its dotted name; the reserved key ``__manifest__`` holds a
UTF-8 JSON object with ``format``, ``network_id``, ``spec_hash``, ``step``
and any extra metadata.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from ..errors import ConfigError

FORMAT = "cataractkit-ckpt-1"
MANIFEST_KEY = "__manifest__"


def save_checkpoint(module: nn.Module, path, network_id: str, spec_hash: str = "",
                    step: int = 0, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    manifest = {"format": FORMAT, "network_id": network_id, "spec_hash": spec_hash, "step": int(step)}
    manifest.update(extra or {})
    arrays[MANIFEST_KEY] = np.frombuffer(json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def read_checkpoint(path) -> tuple[dict, dict]:
    """Returns (manifest, state dict of tensors)."""
    with np.load(path, allow_pickle=False) as data:
        if MANIFEST_KEY not in data:
            raise ConfigError(f"{path}: missing checkpoint manifest")
        manifest = json.loads(bytes(data[MANIFEST_KEY]).decode())
        state = {k: torch.from_numpy(data[k].copy()) for k in data.files if k != MANIFEST_KEY}
    return manifest, state


def load_checkpoint(module: nn.Module, path, strict: bool = True) -> dict:
    manifest, state = read_checkpoint(path)
    module.load_state_dict(state, strict=strict)
    return manifest


def load_weights(module: nn.Module, path) -> None:
    """Load an archive or a plain torch state dict into ``module``.

    Archives written from a whole network are accepted for a sub-module: a
    common ``encoder.`` prefix is stripped when present.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"weight file not found: {path}")
    if path.suffix == ".npz":
        _, state = read_checkpoint(path)
    else:
        state = torch.load(path, map_location="cpu", weights_only=True)
    own = module.state_dict()
    if not set(own) & set(state):
        prefixed = {k[len("encoder."):]: v for k, v in state.items() if k.startswith("encoder.")}
        if prefixed:
            state = prefixed
    module.load_state_dict(state, strict=True)
