"""QP map files, text and binary. See docs/formats.md for the byte layout."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .planner import QPMap

TEXT_MAGIC = "QPMAP 1"
BINARY_MAGIC = b"QPMB"
BINARY_VERSION = 1
_HEADER = struct.Struct("<4sHI")
_RECORD = struct.Struct("<IBbHH")


def _rows(arr) -> list[str]:
    return [" ".join(str(int(v)) for v in row) for row in np.asarray(arr)]


def dumps_text(maps: list[QPMap]) -> str:
    lines = [TEXT_MAGIC]
    for m in maps:
        cols, rows = m.grid
        lines.append(f"F {m.frame_index} {m.frame_type} {m.gop_pos} {cols} {rows}")
        lines += _rows(m.luma) + _rows(m.chroma) + _rows(m.removal.astype(np.uint8))
    return "\n".join(lines) + "\n"


def loads_text(text: str) -> list[QPMap]:
    lines = text.splitlines()
    if not lines or lines[0] != TEXT_MAGIC:
        raise ConfigError("not a text QP map file")
    maps, i = [], 1
    while i < len(lines):
        parts = lines[i].split()
        if len(parts) != 6 or parts[0] != "F":
            raise ConfigError(f"line {i + 1}: malformed frame header")
        idx, ftype, pos, cols, rows = int(parts[1]), parts[2], int(parts[3]), int(parts[4]), int(parts[5])
        block = lines[i + 1:i + 1 + 3 * rows]
        if len(block) != 3 * rows:
            raise ConfigError(f"frame {idx}: truncated record")
        arr = np.array([[int(v) for v in ln.split()] for ln in block], dtype=np.int64)
        if arr.shape != (3 * rows, cols):
            raise ConfigError(f"frame {idx}: expected {rows} rows of {cols} values per plane")
        maps.append(QPMap(idx, ftype, pos, arr[:rows].astype(np.uint8), arr[rows:2 * rows].astype(np.uint8),
                          arr[2 * rows:].astype(bool)))
        i += 1 + 3 * rows
    return maps


def dumps_binary(maps: list[QPMap]) -> bytes:
    out = [_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, len(maps))]
    for m in maps:
        cols, rows = m.grid
        out.append(_RECORD.pack(m.frame_index, 0 if m.frame_type == "I" else 1, m.gop_pos, cols, rows))
        for plane in (m.luma, m.chroma, m.removal):
            out.append(np.ascontiguousarray(plane, dtype=np.uint8).tobytes())
    return b"".join(out)


def loads_binary(data: bytes) -> list[QPMap]:
    if len(data) < _HEADER.size:
        raise ConfigError("truncated binary QP map file")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != BINARY_MAGIC or version != BINARY_VERSION:
        raise ConfigError("not a binary QP map file (or unsupported version)")
    pos, maps = _HEADER.size, []
    for _ in range(count):
        idx, ftype, gop, cols, rows = _RECORD.unpack_from(data, pos)
        pos += _RECORD.size
        n = cols * rows
        planes = []
        for _ in range(3):
            if pos + n > len(data):
                raise ConfigError(f"frame {idx}: truncated record")
            planes.append(np.frombuffer(data, np.uint8, n, pos).reshape(rows, cols).copy())
            pos += n
        maps.append(QPMap(idx, "I" if ftype == 0 else "P", gop, planes[0], planes[1], planes[2].astype(bool)))
    return maps


def write_qpmaps(maps, path, binary: bool | None = None) -> Path:
    path = Path(path)
    binary = path.suffix == ".qpb" if binary is None else binary
    if binary:
        path.write_bytes(dumps_binary(maps))
    else:
        with open(path, "w", newline="\n") as fh:
            fh.write(dumps_text(maps))
    return path


def read_qpmaps(path) -> list[QPMap]:
    data = Path(path).read_bytes()
    if data.startswith(BINARY_MAGIC):
        return loads_binary(data)
    return loads_text(data.decode("ascii"))
