"""On-disk segmentation datasets and synthetic stand-ins.

Layout: ``root/images/<stem>.png``, ``root/masks/<stem>.png`` and
``root/manifest.csv`` with columns ``stem,split``.
"""
from __future__ import annotations

import csv
from pathlib import Path

import cv2
import numpy as np
import torch
from torch.utils.data import Dataset

from ..errors import ConfigError


def to_tensor_pair(image: np.ndarray, mask: np.ndarray):
    img = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).float()
    return img, torch.from_numpy(np.ascontiguousarray(mask)).long()


class SegmentationFolder(Dataset):
    def __init__(self, root, split="train", size=None, augmenter=None):
        self.root = Path(root)
        manifest = self.root / "manifest.csv"
        if not manifest.is_file():
            raise ConfigError(f"dataset manifest not found: {manifest}")
        with open(manifest, newline="") as fh:
            rows = list(csv.DictReader(fh))
        self.stems = [r["stem"] for r in rows if r.get("split", "train") == split]
        self.size = size
        self.augmenter = augmenter

    def __len__(self):
        return len(self.stems)

    def load(self, stem):
        img = cv2.imread(str(self.root / "images" / f"{stem}.png"), cv2.IMREAD_COLOR)
        mask = cv2.imread(str(self.root / "masks" / f"{stem}.png"), cv2.IMREAD_GRAYSCALE)
        if img is None or mask is None:
            raise ConfigError(f"missing image or mask for {stem!r}")
        img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
        if self.size:
            h, w = self.size
            img = cv2.resize(img, (w, h), interpolation=cv2.INTER_LINEAR)
            mask = cv2.resize(mask, (w, h), interpolation=cv2.INTER_NEAREST)
        return img, mask.astype(np.int64)

    def __getitem__(self, i):
        img, mask = self.load(self.stems[i])
        if self.augmenter is not None:
            img, mask = self.augmenter(img, mask)
        return to_tensor_pair(img, mask)


def synthetic_pair(size=128, seed=0, num_classes=2):
    """Textured image with elliptical objects and the matching label map."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size]
    mask = np.zeros((size, size), np.int64)
    img = 0.3 * rng.random((size, size, 3)).astype(np.float32)
    for c in range(1, num_classes):
        cy, cx = rng.uniform(0.3, 0.7, 2) * size
        ry, rx = rng.uniform(0.12, 0.25, 2) * size
        inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1
        mask[inside] = c
        img[inside] += rng.uniform(0.3, 0.6, 3).astype(np.float32)
    return np.clip(img, 0, 1), mask


def write_synthetic_folder(root, count=4, size=128, seed=0, num_classes=2, val_fraction=0.25):
    """Materialise a small dataset in the on-disk layout (used by examples and tests)."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    n_val = int(round(count * val_fraction))
    for i in range(count):
        img, mask = synthetic_pair(size, seed + i, num_classes)
        stem = f"item{i:04d}"
        cv2.imwrite(str(root / "images" / f"{stem}.png"),
                    cv2.cvtColor(np.round(img * 255).astype(np.uint8), cv2.COLOR_RGB2BGR))
        cv2.imwrite(str(root / "masks" / f"{stem}.png"), mask.astype(np.uint8))
        rows.append({"stem": stem, "split": "val" if i >= count - n_val else "train"})
    with open(root / "manifest.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["stem", "split"])
        w.writeheader()
        w.writerows(rows)
    return root
