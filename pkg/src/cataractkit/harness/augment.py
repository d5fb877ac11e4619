"""Seeded image + mask augmentation.

Images are float arrays H x W x C in [0, 1]; masks are integer H x W label
maps. Geometric transforms warp both with the same matrix (bilinear for the
image, nearest for the mask); photometric transforms touch the image only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from ..errors import ConfigError


@dataclass
class AugSpec:
    name: str
    params: dict = field(default_factory=dict)


def _uniform(rng, lo_hi):
    lo, hi = lo_hi
    return float(rng.uniform(lo, hi))


def _odd(k: int) -> int:
    k = int(round(k))
    return k if k % 2 else k + 1


# --------------------------------------------------------------------------
# photometric
# --------------------------------------------------------------------------

def adjust_brightness(img, delta=0.0, factor=1.0):
    return np.clip(img * factor + delta, 0.0, 1.0)


def adjust_contrast(img, factor=1.0):
    mean = img.mean(axis=(0, 1), keepdims=True)
    return np.clip((img - mean) * factor + mean, 0.0, 1.0)


def adjust_gamma(img, gamma=1.0):
    return np.clip(img, 0.0, 1.0) ** gamma


def gaussian_blur(img, sigma):
    if sigma <= 0:
        return img.copy()
    return cv2.GaussianBlur(img, (0, 0), sigmaX=sigma, sigmaY=sigma, borderType=cv2.BORDER_REFLECT_101)


def motion_kernel(size: int, angle: float) -> np.ndarray:
    """Normalised line kernel of the given length and orientation (degrees)."""
    k = np.zeros((size, size), np.float32)
    k[size // 2, :] = 1.0
    rot = cv2.getRotationMatrix2D(((size - 1) / 2, (size - 1) / 2), angle, 1.0)
    k = cv2.warpAffine(k, rot, (size, size), flags=cv2.INTER_LINEAR)
    return k / max(k.sum(), 1e-12)


def motion_blur(img, size, angle):
    if size <= 1:
        return img.copy()
    return cv2.filter2D(img, -1, motion_kernel(size, angle), borderType=cv2.BORDER_REFLECT_101)


def median_blur(img, size):
    size = _odd(size)
    if size <= 1:
        return img.copy()
    u8 = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    out = cv2.medianBlur(u8, size)
    if out.ndim == 2 and img.ndim == 3:
        out = out[..., None]
    return out.astype(np.float32) / 255.0


class Photometric:
    geometric = False

    def __init__(self, **params):
        self.params = {**self.defaults, **params}
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise ConfigError(f"{self.name}: unknown parameters {sorted(unknown)}")

    def sample(self, rng) -> dict:
        raise NotImplementedError

    def image(self, img, s):
        raise NotImplementedError


class Brightness(Photometric):
    """Additive shift (``delta``, in 0-255 units) or multiplicative ``factor``."""
    name = "brightness"
    defaults = {"delta": (-50.0, 50.0), "factor": None}

    def sample(self, rng):
        if self.params["factor"] is not None:
            return {"factor": _uniform(rng, self.params["factor"])}
        return {"delta": _uniform(rng, self.params["delta"]) / 255.0}

    def image(self, img, s):
        return adjust_brightness(img, s.get("delta", 0.0), s.get("factor", 1.0))


class Contrast(Photometric):
    name = "contrast"
    defaults = {"factor": (0.8, 1.2)}

    def sample(self, rng):
        return {"factor": _uniform(rng, self.params["factor"])}

    def image(self, img, s):
        return adjust_contrast(img, s["factor"])


class GammaContrast(Photometric):
    name = "gamma_contrast"
    defaults = {"gamma": (0.5, 2.0)}

    def sample(self, rng):
        return {"gamma": _uniform(rng, self.params["gamma"])}

    def image(self, img, s):
        return adjust_gamma(img, s["gamma"])


class GaussianBlur(Photometric):
    name = "gaussian_blur"
    defaults = {"sigma": (0.0, 5.0)}

    def sample(self, rng):
        return {"sigma": _uniform(rng, self.params["sigma"])}

    def image(self, img, s):
        return gaussian_blur(img, s["sigma"])


class MotionBlur(Photometric):
    name = "motion_blur"
    defaults = {"size": (9, 9), "angle": (-180.0, 180.0)}

    def sample(self, rng):
        lo, hi = self.params["size"]
        return {"size": _odd(rng.integers(lo, hi + 1)), "angle": _uniform(rng, self.params["angle"])}

    def image(self, img, s):
        return motion_blur(img, s["size"], s["angle"])


class MedianBlur(Photometric):
    name = "median_blur"
    defaults = {"size": (3, 5)}

    def sample(self, rng):
        lo, hi = self.params["size"]
        return {"size": _odd(rng.integers(lo, hi + 1))}

    def image(self, img, s):
        return median_blur(img, s["size"])


# --------------------------------------------------------------------------
# geometric
# --------------------------------------------------------------------------

class Geometric(Photometric):
    geometric = True

    def matrix(self, s, h, w) -> np.ndarray:
        raise NotImplementedError

    def sample_matrix(self, rng, h, w):
        return self.matrix(self.sample(rng), h, w)


def _about_centre(h, w, angle=0.0, scale=1.0, tx=0.0, ty=0.0, shear=0.0):
    m = cv2.getRotationMatrix2D(((w - 1) / 2, (h - 1) / 2), angle, scale)
    if shear:
        sh = np.array([[1.0, shear, -shear * (h - 1) / 2], [0.0, 1.0, 0.0], [0, 0, 1.0]])
        m = (np.vstack([m, [0, 0, 1]]) @ sh)[:2]
    m[0, 2] += tx
    m[1, 2] += ty
    return m


class Rotate(Geometric):
    name = "rotate"
    defaults = {"angle": (-10.0, 10.0)}

    def sample(self, rng):
        return {"angle": _uniform(rng, self.params["angle"])}

    def matrix(self, s, h, w):
        return _about_centre(h, w, angle=s["angle"])


class AffineScale(Geometric):
    name = "affine_scale"
    defaults = {"scale": (0.5, 1.5)}

    def sample(self, rng):
        return {"scale": _uniform(rng, self.params["scale"])}

    def matrix(self, s, h, w):
        return _about_centre(h, w, scale=s["scale"])


class Shift(Geometric):
    """Translation by a fraction of the frame size, optionally with a scale change."""
    name = "shift"
    defaults = {"fraction": (-0.1, 0.1), "scale": (1.0, 1.0)}

    def sample(self, rng):
        return {"fx": _uniform(rng, self.params["fraction"]), "fy": _uniform(rng, self.params["fraction"]),
                "scale": _uniform(rng, self.params["scale"])}

    def matrix(self, s, h, w):
        return _about_centre(h, w, scale=s["scale"], tx=s["fx"] * w, ty=s["fy"] * h)


class Shear(Geometric):
    name = "shear"
    defaults = {"intensity": (-0.15, 0.15)}

    def sample(self, rng):
        return {"shear": _uniform(rng, self.params["intensity"])}

    def matrix(self, s, h, w):
        return _about_centre(h, w, shear=s["shear"])


class CropPad(Geometric):
    """Crop (negative) or pad (positive) each side by a fraction, then resize back."""
    name = "crop_pad"
    defaults = {"percent": (-0.25, 0.25)}

    def sample(self, rng):
        return {side: _uniform(rng, self.params["percent"]) for side in ("top", "right", "bottom", "left")}

    def matrix(self, s, h, w):
        # source window in input coordinates that maps onto the output frame
        x0, x1 = -s["left"] * w, w + s["right"] * w
        y0, y1 = -s["top"] * h, h + s["bottom"] * h
        sx, sy = w / (x1 - x0), h / (y1 - y0)
        return np.array([[sx, 0.0, -x0 * sx], [0.0, sy, -y0 * sy]])


REGISTRY = {cls.name: cls for cls in (Brightness, Contrast, GammaContrast, GaussianBlur, MotionBlur,
                                      MedianBlur, Rotate, AffineScale, Shift, Shear, CropPad)}
PHOTOMETRIC = tuple(n for n, c in REGISTRY.items() if not c.geometric)

# augmentation pipelines used for the different experiment families
PRESETS = {
    "relevance-segmentation": [
        AugSpec("brightness", {"delta": (-50, 50)}),
        AugSpec("gamma_contrast", {"gamma": (0.5, 2.0)}),
        AugSpec("gaussian_blur", {"sigma": (0.0, 5.0)}),
        AugSpec("motion_blur", {"size": (9, 9)}),
        AugSpec("crop_pad", {"percent": (-0.25, 0.25)}),
        AugSpec("affine_scale", {"scale": (0.5, 1.5)}),
    ],
    "frame-classification": [
        AugSpec("brightness", {"factor": (0.5, 1.5)}),
        AugSpec("rotate", {"angle": (-20, 20)}),
        AugSpec("shift", {"fraction": (-0.1, 0.1), "scale": (0.8, 1.2)}),
        AugSpec("shear", {"intensity": (-0.15, 0.15)}),
    ],
    "lens-segmentation": [
        AugSpec("brightness", {"factor": (0.8, 1.2)}),
        AugSpec("contrast", {"factor": (0.8, 1.2)}),
        AugSpec("shift", {"fraction": (-0.1, 0.1), "scale": (0.9, 1.1)}),
        AugSpec("rotate", {"angle": (-10, 10)}),
        AugSpec("motion_blur", {"size": (3, 7)}),
    ],
}


def make_transform(spec: AugSpec):
    cls = REGISTRY.get(spec.name)
    if cls is None:
        raise ConfigError(f"unknown augmentation {spec.name!r}; choose from {sorted(REGISTRY)}")
    params = {k: tuple(v) if isinstance(v, list) else v for k, v in spec.params.items()}
    return cls(**params)


def warp(arr, m, nearest=False):
    h, w = arr.shape[:2]
    flags = cv2.INTER_NEAREST if nearest else cv2.INTER_LINEAR
    src = arr.astype(np.float32) if nearest and arr.dtype not in (np.uint8, np.float32) else arr
    out = cv2.warpAffine(src, m, (w, h), flags=flags, borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    if arr.ndim == 3 and out.ndim == 2:
        out = out[..., None]
    return out.astype(arr.dtype)


class Augmenter:
    """Applies the transforms in order; one RNG stream drives every draw."""

    def __init__(self, specs, seed=0):
        self.transforms = [make_transform(s if isinstance(s, AugSpec) else AugSpec(**s)) for s in specs]
        self.rng = np.random.default_rng(seed)

    def __call__(self, image, mask=None, rng=None):
        rng = self.rng if rng is None else rng
        img = np.asarray(image, dtype=np.float32)
        msk = None if mask is None else np.asarray(mask)
        for t in self.transforms:
            s = t.sample(rng)
            if t.geometric:
                m = t.matrix(s, *img.shape[:2])
                img = warp(img, m)
                if msk is not None:
                    msk = warp(msk, m, nearest=True)
            else:
                img = t.image(img, s).astype(np.float32)
        return img if msk is None else (img, msk)


def build_augmenter(specs, seed=0) -> Augmenter:
    if isinstance(specs, str):
        if specs not in PRESETS:
            raise ConfigError(f"unknown augmentation preset {specs!r}; choose from {sorted(PRESETS)}")
        specs = PRESETS[specs]
    return Augmenter(specs, seed)
