"""Thin driver for an external HEVC encoder that accepts per-CTU QP files.

The encoder is described by a command template whose ``{placeholders}`` are
filled from the run: ``{input}`` raw video, ``{qpmap}`` QP map file,
``{output}`` bitstream, ``{log}`` per-frame log, ``{width}``, ``{height}``,
``{frames}``. The encoder must write its log as CSV with a header
``frame,type,bits``. The process runner is injectable for tests.
"""
from __future__ import annotations

import csv
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .formats import write_qpmaps
from .planner import CTU


@dataclass
class FrameLog:
    frame: int
    frame_type: str
    bits: int


def read_encoder_log(path) -> list[FrameLog]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return [FrameLog(int(r["frame"]), r["type"], int(r["bits"])) for r in rows]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed encoder log ({exc})") from exc


def write_encoder_log(entries, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "type", "bits"])
        for e in entries:
            w.writerow([e.frame, e.frame_type, e.bits])
    return path


def apply_removal(frames: np.ndarray, maps) -> np.ndarray:
    """Black-fill CTUs flagged for removal. frames: T x H x W (x C)."""
    out = np.array(frames, copy=True)
    for m in maps:
        rows, cols = np.nonzero(m.removal)
        for r, c in zip(rows, cols):
            out[m.frame_index, r * CTU:(r + 1) * CTU, c * CTU:(c + 1) * CTU] = 0
    return out


class EncoderDriver:
    def __init__(self, command: list[str], runner=None):
        if not command:
            raise ConfigError("encoder command template is empty")
        self.command = list(command)
        self.runner = runner or (lambda argv: subprocess.run(argv, check=False).returncode)

    def argv(self, **fields) -> list[str]:
        try:
            return [part.format(**fields) for part in self.command]
        except KeyError as exc:
            raise ConfigError(f"encoder command uses unknown placeholder {exc}") from exc

    def encode(self, raw_video, maps, workdir, width: int, height: int) -> list[FrameLog]:
        workdir = Path(workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        qpmap = write_qpmaps(maps, workdir / "qpmap.qpb")
        fields = {"input": str(raw_video), "qpmap": str(qpmap), "output": str(workdir / "out.bin"),
                  "log": str(workdir / "encoder_log.csv"), "width": width, "height": height,
                  "frames": len(maps)}
        code = self.runner(self.argv(**fields))
        if code != 0:
            raise RuntimeError(f"encoder exited with status {code}")
        return read_encoder_log(fields["log"])
