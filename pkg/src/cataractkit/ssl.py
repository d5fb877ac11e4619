"""Progressive contrastive pretraining on video clips.

A reference frame and a nearby frame of the same clip form a pair. Both are
transformed by the current strategy; the encoder learns to pull each frame
toward its own transformed copy and away from the other frame's pair.
Three strategies (high-frequency removal, rigid block augmentation and
deformable block augmentation) run in that order, each ramping its own
difficulty from easy to hard.
"""
from __future__ import annotations

import csv
import copy
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from skimage.measure import label as label_components
from skimage.transform import PiecewiseAffineTransform, warp

from .errors import ConfigError, SamplingError, TrainingError
from .harness.augment import AugSpec, make_transform
from .losses import LossWeights, contrastive_loss

CLIP_LENGTH = 100
STRATEGIES = ("hf_removal", "block_aug", "deformable_block_aug")


# --------------------------------------------------------------------------
# clips
# --------------------------------------------------------------------------

@dataclass
class ClipSpec:
    video_id: str
    start: int
    fps: float = 10.0
    length: int = CLIP_LENGTH
    labels: list | None = None

    @property
    def frame_indices(self) -> range:
        return range(self.start, self.start + self.length)

    @property
    def time_range(self) -> tuple[float, float]:
        return self.start / self.fps, (self.start + self.length) / self.fps


class ClipStore:
    """Non-overlapping fixed-length clips; frames are T x 3 x H x W floats in [0, 1]."""

    def __init__(self, clips: list[ClipSpec], loader):
        for c in clips:
            if c.length != CLIP_LENGTH:
                raise ConfigError(f"clip {c.video_id}@{c.start} has {c.length} frames, expected {CLIP_LENGTH}")
        by_video: dict[str, list[ClipSpec]] = {}
        for c in clips:
            by_video.setdefault(c.video_id, []).append(c)
        for vid, cs in by_video.items():
            cs = sorted(cs, key=lambda c: c.start)
            for a, b in zip(cs, cs[1:]):
                if b.start < a.start + a.length:
                    raise ConfigError(f"clips of video {vid} overlap at frame {b.start}")
        self.clips = list(clips)
        self._loader = loader

    def __len__(self):
        return len(self.clips)

    def frames(self, i: int) -> np.ndarray:
        return self._loader(self.clips[i])

    @classmethod
    def from_videos(cls, videos: dict, fps: float = 10.0) -> "ClipStore":
        """Split in-memory videos (T x 3 x H x W) into consecutive clips, dropping the remainder."""
        clips = []
        for vid, arr in videos.items():
            for start in range(0, len(arr) - CLIP_LENGTH + 1, CLIP_LENGTH):
                clips.append(ClipSpec(str(vid), start, fps))
        return cls(clips, lambda c: np.asarray(videos[c.video_id][c.start:c.start + c.length], np.float32))

    @classmethod
    def from_manifest(cls, path, size=None) -> "ClipStore":
        """CSV with columns video_path, start_frame, fps; frames are decoded with OpenCV."""
        import cv2

        rows = list(csv.DictReader(open(path, newline="")))
        clips = [ClipSpec(r["video_path"], int(r["start_frame"]), float(r.get("fps") or 10.0)) for r in rows]

        def load(c: ClipSpec):
            cap = cv2.VideoCapture(c.video_id)
            cap.set(cv2.CAP_PROP_POS_FRAMES, c.start)
            frames = []
            for _ in range(c.length):
                ok, frame = cap.read()
                if not ok:
                    raise SamplingError(f"{c.video_id}: could not decode frame {c.start + len(frames)}")
                frame = cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
                if size:
                    frame = cv2.resize(frame, (size[1], size[0]))
                frames.append(frame.transpose(2, 0, 1).astype(np.float32) / 255.0)
            cap.release()
            return np.stack(frames)

        return cls(clips, load)


def moving_shapes_video(frames=CLIP_LENGTH, size=32, seed=0) -> np.ndarray:
    """Synthetic clip: a few coloured discs and squares drifting over a noisy background."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size]
    background = 0.15 * rng.random((3, size, size)).astype(np.float32)
    shapes = []
    for _ in range(3):
        shapes.append({
            "pos": rng.uniform(0.2, 0.8, 2) * size,
            "vel": rng.uniform(-0.6, 0.6, 2),
            "radius": rng.uniform(0.08, 0.18) * size,
            "colour": rng.uniform(0.4, 1.0, 3).astype(np.float32),
            "square": bool(rng.integers(0, 2)),
        })
    out = np.empty((frames, 3, size, size), np.float32)
    for t in range(frames):
        img = background.copy()
        for s in shapes:
            cy, cx = (s["pos"] + t * s["vel"]) % size
            if s["square"]:
                inside = (np.abs(yy - cy) < s["radius"]) & (np.abs(xx - cx) < s["radius"])
            else:
                inside = (yy - cy) ** 2 + (xx - cx) ** 2 < s["radius"] ** 2
            img[:, inside] = s["colour"][:, None]
        out[t] = img
    return out


# --------------------------------------------------------------------------
# schedule
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SSLSchedule:
    strategy: str = "hf_removal"
    r: float = 16.0
    r_min: float = 3.2
    k: int = 8
    n: int = 1
    t_dist: int = 20
    t_diff: float = 10 / 255

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if not (self.r_min > 0 and self.r >= self.r_min):
            raise ConfigError("need r >= r_min > 0")
        if not 1 <= self.n <= self.k * self.k:
            raise ConfigError(f"need 1 <= n <= k^2, got n={self.n}, k={self.k}")
        if self.t_dist < 0:
            raise ConfigError("t_dist must be non-negative")


def strategy_ramp(strategy: str, epochs: int, height: int, k_values=(8, 4, 2), **base) -> list[SSLSchedule]:
    """Per-epoch settings for one strategy, easiest first.

    r falls linearly from 0.5*H to 0.1*H; k steps down through ``k_values``;
    n rises from 1 to half the block count of the final k.
    """
    out = []
    n_max = max(1, k_values[-1] ** 2 // 2)
    for e in range(epochs):
        t = e / (epochs - 1) if epochs > 1 else 0.0
        r = max(0.1 * height, (1 - t) * 0.5 * height + t * 0.1 * height)
        k = k_values[min(int(t * len(k_values)), len(k_values) - 1)]
        n = 1 + int(round(t * (n_max - 1)))
        out.append(SSLSchedule(strategy, r=r, r_min=0.1 * height, k=k, n=n, **base))
    return out


def full_schedule(epochs: int, height: int, strategies=STRATEGIES, **base) -> list[SSLSchedule]:
    """Split ``epochs`` across strategies in order; difficulty resets at each strategy start."""
    if epochs < 1:
        raise ConfigError("need at least one epoch")
    share = [epochs // len(strategies) + (1 if i < epochs % len(strategies) else 0)
             for i in range(len(strategies))]
    plan = []
    for strategy, count in zip(strategies, share):
        plan += strategy_ramp(strategy, count, height, **base) if count else []
    return plan


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

def suitability(ref: np.ndarray, adv: np.ndarray, t_diff: float) -> int:
    """1 iff at least 10% of the absolute differences exceed ``t_diff``."""
    ref, adv = np.asarray(ref), np.asarray(adv)
    if ref.shape != adv.shape:
        raise ConfigError(f"shape mismatch {ref.shape} vs {adv.shape}")
    count = int((np.abs(ref.astype(np.float64) - adv.astype(np.float64)) > t_diff).sum())
    return int(10 * count >= ref.size)


def neighbour_window(idx: int, t_dist: int, length: int = CLIP_LENGTH) -> tuple[int, int]:
    """Inclusive index window around ``idx`` clamped to the clip."""
    return max(0, idx - t_dist), min(length - 1, idx + t_dist)


def sample_indices(rng, t_dist: int, length: int = CLIP_LENGTH) -> tuple[int, int]:
    ref = int(rng.integers(0, length))
    lo, hi = neighbour_window(ref, t_dist, length)
    return ref, int(rng.integers(lo, hi + 1))


def sample_pair(store: ClipStore, sched: SSLSchedule, rng, max_attempts: int = 200):
    """Draw (reference, nearby) frames, moving to a fresh clip whenever the gate rejects.

    Returns (ref, adv, info) where info records the clip and frame indices.
    """
    if len(store) == 0:
        raise SamplingError("empty clip store")
    rejected = 0
    for _ in range(max_attempts):
        ci = int(rng.integers(0, len(store)))
        frames = store.frames(ci)
        i, j = sample_indices(rng, sched.t_dist, len(frames))
        if suitability(frames[i], frames[j], sched.t_diff):
            return frames[i], frames[j], {"clip": ci, "ref": i, "adv": j, "rejected": rejected}
        rejected += 1
    raise SamplingError(
        f"no suitable pair after {max_attempts} draws (t_dist={sched.t_dist}, t_diff={sched.t_diff:.4f}, "
        f"clips={len(store)})")


# --------------------------------------------------------------------------
# transforms
# --------------------------------------------------------------------------

def hf_remove(image: np.ndarray, r: float, clamp=None) -> np.ndarray:
    """Keep only spatial frequencies within radius ``r`` of the centred DC bin.

    ``image`` is C x H x W (or H x W). Pass ``clamp=None`` to skip the final
    range clamp, which keeps the output exactly band-limited.
    """
    if r <= 0:
        raise ConfigError("radius must be positive")
    img = np.asarray(image, np.float64)
    h, w = img.shape[-2:]
    if r >= math.hypot(h / 2, w / 2):
        warnings.warn(f"radius {r} covers the whole spectrum; returning the input unchanged")
        return np.asarray(image).copy()
    spec = np.fft.fftshift(np.fft.fft2(img), axes=(-2, -1))
    yy, xx = np.mgrid[:h, :w]
    disc = (yy - h // 2) ** 2 + (xx - w // 2) ** 2 <= r * r
    spec = np.where(disc, spec, 0)
    out = np.fft.ifft2(np.fft.ifftshift(spec, axes=(-2, -1))).real
    if clamp is not None:
        out = np.clip(out, *clamp)
    return out.astype(np.asarray(image).dtype if np.asarray(image).dtype.kind == "f" else np.float64)


BLOCK_TRANSFORMS = (
    AugSpec("gaussian_blur", {"sigma": (1.0, 3.0)}),
    AugSpec("motion_blur", {"size": (5, 9)}),
    AugSpec("brightness", {"delta": (-50, 50)}),
    AugSpec("contrast", {"factor": (0.5, 1.5)}),
)


def warped_support(block: np.ndarray, rng, jitter: float = 0.25) -> np.ndarray:
    """Warp a rectangular block mask with a random piecewise-affine field.

    Control points sit on the block corners, edge midpoints and centre, plus
    the fixed image corners; the block points move by up to ``jitter`` of
    the block size.
    """
    h, w = block.shape
    rows, cols = np.nonzero(block)
    r0, r1, c0, c1 = rows.min(), rows.max() + 1, cols.min(), cols.max() + 1
    bh, bw = r1 - r0, c1 - c0
    ys = np.array([r0, (r0 + r1) / 2, r1], float)
    xs = np.array([c0, (c0 + c1) / 2, c1], float)
    src = np.array([(x, y) for y in ys for x in xs])
    dst = src + rng.uniform(-jitter, jitter, src.shape) * np.array([bw, bh])
    frame = np.array([(0, 0), (w, 0), (0, h), (w, h)], float)
    src, dst = np.vstack([src, frame]), np.vstack([dst, frame])
    tform = PiecewiseAffineTransform()
    tform.estimate(dst, src)  # maps output coordinates back to the input
    out = warp(block.astype(float), tform, order=0, mode="constant", cval=0.0, preserve_range=True) > 0.5
    if not out.any():
        return block.copy()
    # keep the component that holds most of the mass
    lab = label_components(out, connectivity=1)
    if lab.max() > 1:
        sizes = np.bincount(lab.ravel())[1:]
        out = lab == (1 + int(sizes.argmax()))
    return out


def block_augment(image: np.ndarray, k: int, n: int, deformable: bool = False, rng=None,
                  transforms=BLOCK_TRANSFORMS, return_support: bool = False):
    """Augment ``n`` of the ``k x k`` blocks of a C x H x W image.

    Each chosen block gets its own photometric transform. In deformable mode
    the block's support is warped first and the transform is applied under
    the warped support. Pixels outside the supports are untouched.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    img = np.asarray(image, np.float32)
    c, h, w = img.shape
    if h % k or w % k:
        raise ConfigError(f"image dims {(h, w)} not divisible by k={k}")
    if not 0 <= n <= k * k:
        raise ConfigError(f"need 0 <= n <= k^2 ({k * k}), got {n}")
    bh, bw = h // k, w // k
    hwc = img.transpose(1, 2, 0)
    out = hwc.copy()
    supports = []
    chosen = rng.choice(k * k, size=n, replace=False) if n else []
    ops = [make_transform(s) for s in transforms]
    for b in chosen:
        by, bx = divmod(int(b), k)
        block = np.zeros((h, w), bool)
        block[by * bh:(by + 1) * bh, bx * bw:(bx + 1) * bw] = True
        support = warped_support(block, rng) if deformable else block
        op = ops[int(rng.integers(0, len(ops)))]
        augmented = op.image(hwc, op.sample(rng)).astype(np.float32)
        out[support] = augmented[support]
        supports.append(support)
    result = out.transpose(2, 0, 1).copy()
    return (result, supports) if return_support else result


def apply_strategy(image: np.ndarray, sched: SSLSchedule, rng) -> np.ndarray:
    if sched.strategy == "hf_removal":
        return hf_remove(image, max(sched.r, sched.r_min)).astype(np.float32)
    return block_augment(image, sched.k, sched.n, sched.strategy == "deformable_block_aug", rng)


# --------------------------------------------------------------------------
# model and training
# --------------------------------------------------------------------------

class SmallEncoder(nn.Module):
    """Compact conv encoder for desk-scale runs."""

    def __init__(self, width: int = 16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, width, 3, padding=1), nn.BatchNorm2d(width), nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(width, 2 * width, 3, padding=1), nn.BatchNorm2d(2 * width), nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(2 * width, 4 * width, 3, padding=1), nn.BatchNorm2d(4 * width), nn.ReLU(inplace=True),
        )
        self.channels = [4 * width]

    def forward(self, x):
        return [self.net(x)]


class ContrastiveModel(nn.Module):
    """Encoder, global pool and a two-layer projection onto the unit sphere."""

    def __init__(self, encoder: nn.Module, feat_dim: int | None = None, hidden: int = 512, embed_dim: int = 512):
        super().__init__()
        self.encoder = encoder
        feat_dim = feat_dim or encoder.channels[-1]
        self.projection = nn.Sequential(nn.Linear(feat_dim, hidden), nn.ReLU(inplace=True),
                                        nn.Linear(hidden, embed_dim))

    def embed(self, x):
        feats = self.encoder(x)
        f = feats[-1] if isinstance(feats, (list, tuple)) else feats
        return F.normalize(self.projection(f.mean(dim=(2, 3))), dim=1)

    def forward(self, x):
        return self.embed(x)


@dataclass
class PretrainResult:
    encoder: nn.Module
    epoch_losses: list = field(default_factory=list)
    batch_losses: list = field(default_factory=list)
    schedule: list = field(default_factory=list)


def pretrain(store: ClipStore, model: ContrastiveModel, schedule, w: LossWeights = LossWeights(),
             epochs: int | None = None, batch_size: int = 8, batches_per_epoch: int = 8,
             lr: float = 1e-3, seed: int = 0) -> PretrainResult:
    """Contrastive pretraining; returns the encoder without its projection head.

    ``schedule`` is a list of per-epoch SSLSchedule (see ``full_schedule``)
    or a single SSLSchedule reused for every epoch.
    """
    if isinstance(schedule, SSLSchedule):
        schedule = [schedule] * (epochs or 1)
    if epochs is not None and len(schedule) != epochs:
        raise ConfigError(f"schedule has {len(schedule)} entries for {epochs} epochs")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    result = PretrainResult(encoder=model.encoder, schedule=list(schedule))
    model.train()
    for sched in schedule:
        losses = []
        for _ in range(batches_per_epoch):
            refs, refs_t, advs, advs_t = [], [], [], []
            for _ in range(batch_size):
                ref, adv, _ = sample_pair(store, sched, rng)
                refs.append(ref)
                advs.append(adv)
                refs_t.append(apply_strategy(ref, sched, rng))
                advs_t.append(apply_strategy(adv, sched, rng))
            x = torch.from_numpy(np.stack(refs + refs_t + advs + advs_t)).float()
            e = model.embed(x).view(4, batch_size, -1)
            loss = contrastive_loss(e[0], e[1], e[2], e[3], w)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite contrastive loss in strategy {sched.strategy}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        result.batch_losses += losses
        result.epoch_losses.append(float(np.mean(losses)))
    result.encoder = copy.deepcopy(model.encoder)
    return result

