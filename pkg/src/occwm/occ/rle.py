"""Run-length codec for occupancy grids (.occ files).

Layout: magic "OCC1" | u16 h | u16 w | u16 d | u8 num_classes | u8 reserved(0)
followed by (u16 run_length, u8 label) runs, little-endian, covering exactly
h*w*d voxels in the grid's fixed x-major index order. Roughly 90% of desk
grids are air, so runs compress well.
"""

from __future__ import annotations

import struct

import numpy as np

from .grid import OccupancyGrid

MAGIC = b"OCC1"
_HEADER = struct.Struct("<4sHHHBB")
_RUN = struct.Struct("<HB")
_MAX_RUN = 0xFFFF


class OccFormatError(ValueError):
    """Malformed .occ payload: bad header, truncation, or run overflow."""


def rle_encode(grid: OccupancyGrid, num_classes: int | None = None) -> bytes:
    """Encode a grid as header + runs. Labels must fit in one byte."""
    flat = grid.labels.reshape(-1)
    if num_classes is None:
        num_classes = int(flat.max(initial=0)) + 1
    if not 1 <= num_classes <= 255:
        raise ValueError(f"num_classes {num_classes} does not fit the u8 header field")
    if flat.size and int(flat.max()) >= num_classes:
        raise ValueError("grid contains labels >= num_classes")

    out = bytearray(_HEADER.pack(MAGIC, grid.h, grid.w, grid.d, num_classes, 0))
    # boundaries of equal-label runs over the flat scan
    change = np.nonzero(np.diff(flat))[0] + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [flat.size]))
    for s, e in zip(starts, ends):
        label = int(flat[s])
        length = int(e - s)
        while length > _MAX_RUN:
            out += _RUN.pack(_MAX_RUN, label)
            length -= _MAX_RUN
        out += _RUN.pack(length, label)
    return bytes(out)


def rle_decode(buf: bytes, voxel_size: float = 1.0) -> OccupancyGrid:
    """Decode an .occ byte buffer back into a grid (lossless)."""
    if len(buf) < _HEADER.size:
        raise OccFormatError("truncated header")
    magic, h, w, d, num_classes, reserved = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise OccFormatError(f"bad magic {magic!r}")
    if reserved != 0:
        raise OccFormatError("reserved header byte must be zero")
    if num_classes < 1 or min(h, w, d) < 1:
        raise OccFormatError("degenerate header dimensions")

    total = h * w * d
    flat = np.empty(total, dtype=np.uint8)
    pos = _HEADER.size
    filled = 0
    while filled < total:
        if pos + _RUN.size > len(buf):
            raise OccFormatError(f"truncated payload at voxel {filled}/{total}")
        length, label = _RUN.unpack_from(buf, pos)
        pos += _RUN.size
        if length == 0:
            raise OccFormatError("zero-length run")
        if label >= num_classes:
            raise OccFormatError(f"label {label} >= num_classes {num_classes}")
        if filled + length > total:
            raise OccFormatError("run overflow past grid volume")
        flat[filled : filled + length] = label
        filled += length
    if pos != len(buf):
        raise OccFormatError(f"{len(buf) - pos} trailing bytes after final run")
    return OccupancyGrid(flat.reshape(h, w, d), voxel_size)


def write_occ(path, grid: OccupancyGrid, num_classes: int | None = None) -> None:
    with open(path, "wb") as f:
        f.write(rle_encode(grid, num_classes))


def read_occ(path) -> OccupancyGrid:
    with open(path, "rb") as f:
        return rle_decode(f.read())
