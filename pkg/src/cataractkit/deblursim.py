"""Defocus-blur simulation and PSNR scoring for deblurring experiments."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d

from .errors import ConfigError

WINDOWS = (1, 3, 5, 7)
PSNR_CAP = 100.0
INDISTINGUISHABLE_DB = 50.0


def sigma_for_window(w: int) -> float:
    """Kernel-size-to-sigma rule: 0.3 * ((w - 1) / 2 - 1) + 0.8."""
    return 0.3 * ((w - 1) / 2 - 1) + 0.8


def gaussian_kernel(w: int, sigma: float | None = None) -> np.ndarray:
    """Normalised 1-D Gaussian taps of odd length ``w``."""
    if w < 1 or w % 2 == 0:
        raise ConfigError(f"window size must be odd and positive, got {w}")
    if w == 1:
        return np.ones(1)
    sigma = sigma_for_window(w) if sigma is None else sigma
    x = np.arange(w) - (w - 1) / 2
    k = np.exp(-x * x / (2 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(sharp: np.ndarray, w: int, sigma: float | None = None) -> np.ndarray:
    """Separable Gaussian blur over the two spatial axes with reflected borders.

    Images are H x W or H x W x C. ``w = 1`` returns an exact copy.
    """
    if w not in WINDOWS:
        raise ConfigError(f"window size must be one of {WINDOWS}, got {w}")
    img = np.asarray(sharp)
    if w == 1:
        return img.copy()
    k = gaussian_kernel(w, sigma)
    out = img.astype(np.float64)
    out = convolve1d(out, k, axis=0, mode="reflect")
    out = convolve1d(out, k, axis=1, mode="reflect")
    if img.dtype == np.uint8:
        return np.clip(np.round(out), 0, 255).astype(np.uint8)
    return out.astype(img.dtype)


def psnr(a, b, max_val: float = 255.0) -> float:
    """10 * log10(max^2 / MSE), capped at PSNR_CAP for (near) identical inputs."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10 * math.log10(max_val ** 2 / mse)))


def visually_indistinguishable(db: float) -> bool:
    return db >= INDISTINGUISHABLE_DB


@dataclass
class BlurPair:
    sharp: np.ndarray
    blurred: np.ndarray
    w: int


def make_pairs(images, rng=None, windows=WINDOWS) -> list[BlurPair]:
    """Blur every image with a randomly drawn window size."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    pairs = []
    for img in images:
        w = int(rng.choice(windows))
        pairs.append(BlurPair(np.asarray(img), gaussian_blur(img, w), w))
    return pairs


def pink_noise_image(size=64, seed=0, channels=3) -> np.ndarray:
    """8-bit image with a 1/f amplitude spectrum, a stand-in for natural scenes."""
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    f = np.sqrt(fx ** 2 + fy ** 2)
    f[0, 0] = 1.0
    out = np.empty((size, size, channels))
    for c in range(channels):
        phase = np.exp(2j * np.pi * rng.random((size, size)))
        img = np.fft.ifft2(phase / f).real
        out[..., c] = (img - img.min()) / (img.max() - img.min() + 1e-12)
    return np.round(out * 255).astype(np.uint8)


def synthetic_corpus(count=20, size=64, seed=0) -> list[np.ndarray]:
    return [pink_noise_image(size, seed + i) for i in range(count)]


def psnr_table(images, windows=(3, 5, 7)) -> list[dict]:
    """PSNR of each blurred version against its sharp source."""
    rows = []
    for i, img in enumerate(images):
        row = {"image": i}
        for w in windows:
            row[f"w{w}"] = psnr(gaussian_blur(img, w), img)
        rows.append(row)
    return rows


def write_psnr_csv(rows, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        wr.writeheader()
        wr.writerows(rows)
    return path


def shapes_image(size=64, seed=0, count=6) -> np.ndarray:
    """8-bit scene of overlapping flat-shaded discs and rectangles on a smooth gradient."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size] / size
    g = rng.uniform(0.2, 0.6, 3)
    img = g[None, None, :] + 0.2 * (yy[..., None] * rng.uniform(-1, 1, 3) + xx[..., None] * rng.uniform(-1, 1, 3))
    for _ in range(count):
        colour = rng.uniform(0.0, 1.0, 3)
        cy, cx = rng.uniform(0.1, 0.9, 2)
        ry, rx = rng.uniform(0.05, 0.3, 2)
        if rng.random() < 0.5:
            inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1
        else:
            inside = (np.abs(yy - cy) < ry) & (np.abs(xx - cx) < rx)
        img[inside] = colour
    return np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
