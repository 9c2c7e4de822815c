"""Scene token file (.sct): magic "SCT1" | u32 L | u32 k | u16 indices LE."""

from __future__ import annotations

import struct

import numpy as np

from .model import SceneTokens

MAGIC = b"SCT1"


class SctFormatError(ValueError):
    pass


def sct_bytes(tokens: SceneTokens) -> bytes:
    if tokens.k > 0xFFFF:
        raise ValueError("codebook size exceeds the u16 index field")
    head = MAGIC + struct.pack("<II", len(tokens), tokens.k)
    return head + tokens.indices.astype("<u2").tobytes()


def sct_decode(buf: bytes) -> SceneTokens:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise SctFormatError("bad token file header")
    length, k = struct.unpack_from("<II", buf, 4)
    expected = 12 + 2 * length
    if len(buf) != expected:
        raise SctFormatError(f"token payload length {len(buf)} != expected {expected}")
    idx = np.frombuffer(buf[12:], dtype="<u2").astype(np.int64)
    if idx.size and idx.max() >= k:
        raise SctFormatError("token index out of codebook range")
    return SceneTokens(idx, int(k))


def write_sct(path, tokens: SceneTokens) -> None:
    with open(path, "wb") as f:
        f.write(sct_bytes(tokens))


def read_sct(path) -> SceneTokens:
    with open(path, "rb") as f:
        return sct_decode(f.read())
