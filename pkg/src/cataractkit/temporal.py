"""Frame-level phase and relevance post-processing, and lens analytics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from skimage.morphology import convex_hull_image

from .errors import ConfigError

REST = 0


@dataclass
class LabelTrack:
    labels: np.ndarray
    probs: np.ndarray | None = None
    fps: float = 25.0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.probs is not None:
            self.probs = np.asarray(self.probs, dtype=np.float64)
            if len(self.probs) != len(self.labels):
                raise ConfigError("labels and probabilities differ in length")
            if self.probs.size and not np.allclose(self.probs.sum(axis=1), 1.0, atol=1e-6):
                raise ConfigError("probability rows must sum to 1")

    def __len__(self):
        return len(self.labels)

    @classmethod
    def binary(cls, positive_probs, threshold=0.5, fps=25.0):
        p = np.asarray(positive_probs, dtype=np.float64)
        return cls((p >= threshold).astype(np.int64), np.stack([1 - p, p], axis=1), fps)


def clip_sample(video_len: int, n_segments: int = 5, rng=None) -> np.ndarray:
    """One uniform frame index from each of ``n_segments`` contiguous, equal segments."""
    if video_len < n_segments:
        raise ConfigError(f"video of {video_len} frames is shorter than {n_segments} segments")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    bounds = (np.arange(n_segments + 1) * video_len) // n_segments
    return np.array([rng.integers(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])], dtype=np.int64)


def _window_mean(values: np.ndarray, window: int) -> np.ndarray:
    """Centred moving average; windows shrink at the edges."""
    half = window // 2
    csum = np.concatenate([[0.0], np.cumsum(values, dtype=np.float64)])
    idx = np.arange(len(values))
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, len(values))
    return (csum[hi] - csum[lo]) / (hi - lo)


def temporal_mean_filter(track, window: int = 15):
    """Smooth a binary track with a centred mean and re-threshold (ties go to 1)."""
    labels = track.labels if isinstance(track, LabelTrack) else np.asarray(track)
    if labels.size and not np.isin(labels, (0, 1)).all():
        raise ConfigError("temporal_mean_filter expects a binary track")
    out = (_window_mean(labels.astype(np.float64), window) >= 0.5).astype(np.int64)
    if isinstance(track, LabelTrack):
        return LabelTrack(out, track.probs, track.fps)
    return out


def integrate_one_vs_rest(tracks) -> LabelTrack:
    """Merge binary detectors into one label per frame.

    Label 0 is "rest"; detector j maps to label j + 1. When several detectors
    fire, the one with the highest positive probability wins.
    """
    if not tracks:
        raise ConfigError("no tracks to integrate")
    n = len(tracks[0])
    if any(len(t) != n for t in tracks):
        raise ConfigError("tracks differ in length")
    fired = np.stack([np.asarray(t.labels) == 1 for t in tracks], axis=1)
    scores = np.stack([t.probs[:, 1] if t.probs is not None else t.labels.astype(float) for t in tracks], axis=1)
    masked = np.where(fired, scores, -np.inf)
    labels = np.where(fired.any(axis=1), masked.argmax(axis=1) + 1, REST)
    onehot = np.eye(len(tracks) + 1)[labels]
    return LabelTrack(labels, onehot, tracks[0].fps)


def segment_action_phases(track, action_value=1) -> list[tuple[int, int]]:
    """Maximal runs of action frames as sorted half-open (start, end) intervals.

    Accepts a LabelTrack, a 0/1 sequence (1 = action) or a string of
    'I' (idle) and 'A' (action) characters.
    """
    if isinstance(track, LabelTrack):
        flags = track.labels == action_value
    elif isinstance(track, str):
        flags = np.array([ch == "A" for ch in track], dtype=bool)
    else:
        flags = np.asarray(track) == action_value
    padded = np.concatenate([[False], flags, [False]]).astype(np.int8)
    edges = np.diff(padded)
    starts, ends = np.nonzero(edges == 1)[0], np.nonzero(edges == -1)[0]
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def expand_segments(segments, length: int) -> np.ndarray:
    out = np.zeros(length, dtype=np.int64)
    for s, e in segments:
        out[s:e] = 1
    return out


# --------------------------------------------------------------------------
# lens analytics
# --------------------------------------------------------------------------

@dataclass
class LensStats:
    relative_area: np.ndarray
    relative_distance: np.ndarray
    rotation: float
    unfolding_delay: float
    instability: float
    excluded_frames: list = field(default_factory=list)

    def rows(self):
        return [{"second": i, "relative_area": a, "relative_distance": d}
                for i, (a, d) in enumerate(zip(self.relative_area, self.relative_distance))]


def clean_mask(mask: np.ndarray, open_size: int = 10, close_size: int = 15) -> np.ndarray:
    """Opening, closing, then the convex hull of what remains."""
    m = np.asarray(mask, dtype=np.uint8)
    m = cv2.morphologyEx(m, cv2.MORPH_OPEN, np.ones((open_size, open_size), np.uint8))
    m = cv2.morphologyEx(m, cv2.MORPH_CLOSE, np.ones((close_size, close_size), np.uint8))
    if not m.any():
        return m.astype(bool)
    return convex_hull_image(m.astype(bool))


def _centroid(mask):
    ys, xs = np.nonzero(mask)
    return np.array([ys.mean(), xs.mean()])


def per_second(values: np.ndarray, fps: float) -> np.ndarray:
    """Average consecutive frames into one value per second (nan-aware)."""
    step = max(1, int(round(fps)))
    values = np.asarray(values, dtype=np.float64)
    n = int(np.ceil(len(values) / step))
    out = np.full((n,) + values.shape[1:], np.nan)
    for i in range(n):
        chunk = values[i * step:(i + 1) * step]
        valid = ~np.isnan(chunk).reshape(len(chunk), -1).any(axis=1)
        if valid.any():
            out[i] = chunk[valid].mean(axis=0)
    return out


def lens_statistics(lens_masks, pupil_masks, angles=None, fps: float = 25.0,
                    area_fraction: float = 0.95, centre_fraction: float = 0.2,
                    open_size: int = 10, close_size: int = 15) -> LensStats:
    """Per-second lens area/position relative to the pupil and derived summaries.

    Distances are normalised by the equivalent-circle radius of the pupil
    hull. The unfolding delay is the first second whose relative area is at
    least ``area_fraction`` of the sequence maximum while the lens centre
    lies within ``centre_fraction`` of the pupil radius.
    """
    if len(lens_masks) != len(pupil_masks):
        raise ConfigError("lens and pupil sequences differ in length")
    n = len(lens_masks)
    area = np.full(n, np.nan)
    offset = np.full((n, 2), np.nan)
    excluded = []
    for t, (lm, pm) in enumerate(zip(lens_masks, pupil_masks)):
        pupil = clean_mask(pm, open_size, close_size)
        if not pupil.any():
            excluded.append(t)
            continue
        lens = clean_mask(lm, open_size, close_size)
        p_area = pupil.sum()
        radius = np.sqrt(p_area / np.pi)
        area[t] = lens.sum() / p_area
        if lens.any():
            offset[t] = (_centroid(lens) - _centroid(pupil)) / radius
    area_s = per_second(area, fps)
    offset_s = per_second(offset, fps)
    dist_s = np.linalg.norm(offset_s, axis=1)
    steps = np.diff(offset_s, axis=0)
    instability = float(np.nansum(np.linalg.norm(steps, axis=1))) if len(steps) else 0.0
    rotation = 0.0
    if angles is not None:
        a = per_second(np.unwrap(np.deg2rad(np.asarray(angles, dtype=np.float64))), fps)
        rotation = float(np.nansum(np.abs(np.diff(np.rad2deg(a)))))
    delay = float("nan")
    if np.isfinite(area_s).any():
        peak = np.nanmax(area_s)
        ok = (area_s >= area_fraction * peak) & (dist_s <= centre_fraction)
        hits = np.nonzero(ok)[0]
        if len(hits):
            delay = float(hits[0])
    return LensStats(area_s, dist_s, rotation, delay, instability, excluded)


def write_lens_report(stats: LensStats, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["second", "relative_area", "relative_distance"])
        w.writeheader()
        w.writerows(stats.rows())
    return path


def read_track(path) -> LabelTrack:
    """CSV track: frame, label, then one column per class probability."""
    rows = list(csv.reader(open(path, newline="")))
    if rows and not rows[0][0].lstrip("-").isdigit():
        rows = rows[1:]
    labels = [int(r[1]) for r in rows]
    probs = np.array([[float(v) for v in r[2:]] for r in rows]) if rows and len(rows[0]) > 2 else None
    return LabelTrack(labels, probs)


def write_track(track: LabelTrack, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        k = track.probs.shape[1] if track.probs is not None else 0
        w.writerow(["frame", "label"] + [f"p{i}" for i in range(k)])
        for i, lab in enumerate(track.labels):
            extra = [f"{p:.6f}" for p in track.probs[i]] if k else []
            w.writerow([i, int(lab)] + extra)
    return path
