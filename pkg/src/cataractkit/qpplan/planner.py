"""CTU-level quantization planning from relevance labels and masks.

Frames are W x H pixels tiled by 64 x 64 coding tree units (CTUs). Relevant
CTUs get the reference QP, all others the raised QP. Frame 0 and the first
frame of every action segment are intra frames; the remaining frames are
predicted frames in groups of four with fixed QP offsets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from skimage.draw import polygon as raster_polygon

from ..errors import ConfigError
from ..temporal import segment_action_phases

CTU = 64
QP_MIN, QP_MAX = 0, 51
I_OFFSET = -1
GOP_OFFSETS = (5, 4, 5, 1)
SCENARIOS = ("I", "II", "III", "IV", "V")


def ctu_grid(width: int, height: int) -> tuple[int, int]:
    """(columns, rows) of CTUs covering a width x height frame."""
    if width < 1 or height < 1:
        raise ConfigError("frame dims must be positive")
    return math.ceil(width / CTU), math.ceil(height / CTU)


# --------------------------------------------------------------------------
# boxes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Axis-aligned inclusive pixel box."""
    r0: int
    c0: int
    r1: int
    c1: int

    @property
    def area(self) -> int:
        return (self.r1 - self.r0 + 1) * (self.c1 - self.c0 + 1)

    def corners(self) -> np.ndarray:
        """(row, col) corners of the pixel-edge rectangle, clockwise from top-left."""
        return np.array([[self.r0 - 0.5, self.c0 - 0.5], [self.r0 - 0.5, self.c1 + 0.5],
                         [self.r1 + 0.5, self.c1 + 0.5], [self.r1 + 0.5, self.c0 - 0.5]])

    def rasterize(self, shape) -> np.ndarray:
        m = np.zeros(shape, bool)
        m[max(self.r0, 0):self.r1 + 1, max(self.c0, 0):self.c1 + 1] = True
        return m


@dataclass(frozen=True)
class OrientedBox:
    """Rotated rectangle given by four (row, col) corners in order."""
    corners_rc: tuple

    @property
    def area(self) -> float:
        p = np.asarray(self.corners_rc)
        x, y = p[:, 1], p[:, 0]
        return float(0.5 * abs(np.dot(x, np.roll(y, 1)) - np.dot(y, np.roll(x, 1))))

    def corners(self) -> np.ndarray:
        return np.asarray(self.corners_rc, dtype=float)

    def rasterize(self, shape) -> np.ndarray:
        """Pixels whose centre lies inside the polygon."""
        p = self.corners()
        rr, cc = raster_polygon(p[:, 0], p[:, 1], shape)
        m = np.zeros(shape, bool)
        m[rr, cc] = True
        return m


def extract_bbox(mask, oriented: bool = False):
    """Axis box of a mask, or the box aligned with its principal axis.

    The oriented box is computed in the principal-axis frame and rotated
    back; when it would not be smaller than the axis box, the axis box
    corners are returned instead.
    """
    m = np.asarray(mask, bool)
    if not m.any():
        raise ConfigError("cannot box an empty mask")
    rows, cols = np.nonzero(m)
    axis = Box(int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max()))
    if not oriented:
        return axis
    pts = np.stack([rows, cols], axis=1).astype(float)
    centre = pts.mean(axis=0)
    if len(pts) > 1:
        _, vecs = np.linalg.eigh(np.cov((pts - centre).T))
        major = vecs[:, -1]
    else:
        major = np.array([1.0, 0.0])
    minor = np.array([-major[1], major[0]])
    basis = np.stack([major, minor], axis=1)          # columns: new axes in (row, col)
    local = (pts - centre) @ basis
    lo, hi = local.min(axis=0) - 0.5, local.max(axis=0) + 0.5
    rect = np.array([[lo[0], lo[1]], [lo[0], hi[1]], [hi[0], hi[1]], [hi[0], lo[1]]])
    corners = rect @ basis.T + centre
    box = OrientedBox(tuple(map(tuple, corners)))
    if box.area >= axis.area:
        return OrientedBox(tuple(map(tuple, axis.corners())))
    return box


# --------------------------------------------------------------------------
# relevance
# --------------------------------------------------------------------------

@dataclass
class RelevanceInput:
    """Per-frame relevance evidence and quantization parameters.

    labels: 1 for action frames, 0 for idle frames. cornea_masks holds one
    boolean H x W array per frame. instrument_masks holds, per frame, one
    mask or a list of masks (one per instrument, each boxed separately).
    """
    labels: np.ndarray
    width: int
    height: int
    scenario: str = "III"
    qp_r: int = 22
    delta_q: int = 5
    chroma_alpha: int = 0
    cornea_masks: list | None = None
    instrument_masks: list | None = None
    oriented_boxes: bool = False

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if not QP_MIN <= self.qp_r <= QP_MAX:
            raise ConfigError("qp_r must lie in [0, 51]")
        if self.delta_q < 0 or self.chroma_alpha < 0:
            raise ConfigError("delta_q and chroma_alpha must be non-negative")
        n = len(self.labels)
        for name in ("cornea_masks", "instrument_masks"):
            masks = getattr(self, name)
            if masks is None:
                continue
            if len(masks) != n:
                raise ConfigError(f"{name} has {len(masks)} frames, labels have {n}")
            for entry in masks:
                parts = entry if isinstance(entry, (list, tuple)) else [entry]
                for m in parts:
                    if m is not None and np.shape(m) != (self.height, self.width):
                        raise ConfigError(
                            f"{name}: mask shape {np.shape(m)} does not match {(self.height, self.width)}")
        if self.scenario != "I" and self.cornea_masks is None:
            raise ConfigError(f"scenario {self.scenario} needs cornea masks")
        if self.scenario == "II" and self.instrument_masks is None:
            raise ConfigError("scenario II needs instrument masks")

    @property
    def qp_i(self) -> int:
        return self.qp_r + self.delta_q

    @property
    def grid(self) -> tuple[int, int]:
        return ctu_grid(self.width, self.height)


def _box_region(mask, shape, oriented):
    if mask is None or not np.asarray(mask).any():
        return np.zeros(shape, bool)
    return extract_bbox(mask, oriented).rasterize(shape)


def relevant_region(inp: RelevanceInput, frame: int) -> np.ndarray:
    """Pixel mask of the scenario's region of interest, ignoring frame relevance."""
    shape = (inp.height, inp.width)
    if inp.scenario == "I":
        return np.ones(shape, bool)
    region = _box_region(inp.cornea_masks[frame], shape, False)
    if inp.scenario == "II":
        inst = inp.instrument_masks[frame]
        if inst is not None:
            parts = inst if isinstance(inst, (list, tuple)) else [inst]
            for part in parts:
                region |= _box_region(part, shape, inp.oriented_boxes)
    return region


def ctu_any(pixels: np.ndarray, grid) -> np.ndarray:
    """rows x cols flags: True where a CTU holds at least one set pixel."""
    cols, rows = grid
    h, w = pixels.shape
    padded = np.zeros((rows * CTU, cols * CTU), bool)
    padded[:h, :w] = pixels
    return padded.reshape(rows, CTU, cols, CTU).any(axis=(1, 3))


def relevant_ctus(inp: RelevanceInput, frame: int) -> np.ndarray:
    cols, rows = inp.grid
    if inp.labels[frame] != 1:
        return np.zeros((rows, cols), bool)
    return ctu_any(relevant_region(inp, frame), inp.grid)


# --------------------------------------------------------------------------
# allocation
# --------------------------------------------------------------------------

@dataclass
class QPMap:
    frame_index: int
    frame_type: str
    gop_pos: int
    luma: np.ndarray
    chroma: np.ndarray
    removal: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.removal is None:
            self.removal = np.zeros_like(self.luma, dtype=bool)

    @property
    def grid(self) -> tuple[int, int]:
        rows, cols = self.luma.shape
        return cols, rows

    def __eq__(self, other):
        return (isinstance(other, QPMap) and self.frame_index == other.frame_index
                and self.frame_type == other.frame_type and self.gop_pos == other.gop_pos
                and np.array_equal(self.luma, other.luma) and np.array_equal(self.chroma, other.chroma)
                and np.array_equal(self.removal, other.removal))


def frame_types(labels) -> list[tuple[str, int]]:
    """(type, gop position) per frame; intra frames carry position -1.

    Frame 0 and the first frame of each action segment are intra; the GOP
    counter restarts after every intra frame.
    """
    labels = np.asarray(labels)
    starts = {s for s, _ in segment_action_phases(labels)}
    out, since = [], 0
    for t in range(len(labels)):
        if t == 0 or t in starts:
            out.append(("I", -1))
            since = 0
        else:
            out.append(("P", since % len(GOP_OFFSETS)))
            since += 1
    return out


def frame_offset(ftype: str, gop_pos: int) -> int:
    return I_OFFSET if ftype == "I" else GOP_OFFSETS[gop_pos]


def clamp_qp(q):
    return np.clip(q, QP_MIN, QP_MAX).astype(np.uint8)


def allocate_qp(inp: RelevanceInput) -> list[QPMap]:
    cols, rows = inp.grid
    maps = []
    for t, (ftype, pos) in enumerate(frame_types(inp.labels)):
        relevant = relevant_ctus(inp, t)
        luma = np.where(relevant, inp.qp_r, inp.qp_i)
        chroma = luma.copy()
        if inp.scenario == "IV":
            chroma = np.where(relevant, inp.qp_r, inp.qp_i + inp.chroma_alpha)
        removal = np.zeros((rows, cols), bool)
        if inp.scenario == "V":
            removal = ~ctu_any(_box_region(inp.cornea_masks[t], (inp.height, inp.width), False), inp.grid)
        off = frame_offset(ftype, pos)
        maps.append(QPMap(t, ftype, pos, clamp_qp(luma + off), clamp_qp(chroma + off), removal))
    return maps
