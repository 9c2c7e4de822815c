"""Binary checkpoint format shared by the tokenizer and the world model.

magic "OCWM" | u32 version | u32 metadata-length | metadata JSON (utf-8)
| tensor table: repeated (u16 name length, name bytes, u8 rank,
u32 dims..., float32 little-endian payload).
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"OCWM"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _tensor_data(t) -> np.ndarray:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    return np.ascontiguousarray(arr, dtype=np.float32)


def save_checkpoint(path, tensors: dict, metadata: dict) -> None:
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        for name in sorted(tensors):
            data = _tensor_data(tensors[name])
            nb = name.encode("utf-8")
            if len(nb) > 0xFFFF:
                raise CheckpointError(f"tensor name too long: {name[:32]}...")
            if data.ndim > 255:
                raise CheckpointError("tensor rank exceeds u8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                f.write(struct.pack("<I", dim))
            f.write(data.astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:4]!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", buf, 8)
    pos = 12
    metadata = json.loads(buf[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len

    tensors: dict[str, np.ndarray] = {}
    while pos < len(buf):
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        end = pos + 4 * count
        if end > len(buf):
            raise CheckpointError(f"truncated payload for tensor {name!r}")
        data = np.frombuffer(buf[pos:end], dtype="<f4").reshape(dims).astype(np.float32)
        tensors[name] = data
        pos = end
    return metadata, tensors


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
