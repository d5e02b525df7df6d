"""Checkpoint container.

Layout: magic "GCKP", version byte, u32 length-prefixed UTF-8 config JSON,
then repeated arrays: u32 name length, name, u8 ndim, u32 dims, float32
little-endian payload. Everything little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from geochip.errors import DataError
from geochip.model.vit import ModelConfig, VitSegmentation

MAGIC = b"GCKP"
VERSION = 1


def save_checkpoint(path, model: VitSegmentation):
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<B", VERSION)
    config_bytes = model.cfg.to_json().encode("utf-8")
    buf += struct.pack("<I", len(config_bytes)) + config_bytes

    state = model.state_dict()
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        name_bytes = name.encode("utf-8")
        buf += struct.pack("<I", len(name_bytes)) + name_bytes
        buf += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            buf += struct.pack("<I", dim)
        buf += arr.tobytes()

    tmp = str(path) + ".part"
    with open(tmp, "wb") as f:
        f.write(bytes(buf))
    import os
    os.replace(tmp, str(path))


def load_checkpoint(path) -> VitSegmentation:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    version = data[4]
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    pos = 5
    (config_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    cfg = ModelConfig.from_json(data[pos:pos + config_len].decode("utf-8"))
    pos += config_len

    state: dict[str, np.ndarray] = {}
    while pos < len(data):
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        ndim = data[pos]
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape)
        pos += 4 * count
        state[name] = arr.copy()

    model = VitSegmentation(cfg, seed=0)
    model.load_state_dict(state)
    return model
