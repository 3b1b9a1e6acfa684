"""Self-describing binary checkpoints.

Layout (all integers little-endian):

    magic   14 bytes  b"GROUPCAST-CKPT"
    version uint32    currently 1
    config  uint32 length + UTF-8 JSON
            {"model": ModelConfig dict, "extra": free-form dict}
    count   uint32    number of parameter records
    record  uint16 name length, name UTF-8,
            uint8 rank, rank x uint32 extents,
            raw little-endian float32 data (row-major)

Records are written in sorted name order so identical weights always
produce identical bytes; values are stored as float32, matching the
training precision, and round-trip bit-exactly.
"""

import json
import struct
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import CheckpointError
from .model import ModelConfig

MAGIC = b"GROUPCAST-CKPT"
VERSION = 1


def save_checkpoint(
    path,
    weights: dict[str, T.Tensor],
    config: ModelConfig,
    extra: dict | None = None,
    moments: dict[str, np.ndarray] | None = None,
) -> None:
    """Write weights (and optional optimizer moments as opt.* records)."""
    records: dict[str, np.ndarray] = {name: t.data for name, t in weights.items()}
    if moments:
        for name, arr in moments.items():
            records[f"opt.{name}"] = arr
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    cfg = json.dumps(
        {"model": config.to_dict(), "extra": extra or {}}, sort_keys=True
    ).encode("utf-8")
    blob += struct.pack("<I", len(cfg))
    blob += cfg
    blob += struct.pack("<I", len(records))
    for name in sorted(records):
        arr = np.ascontiguousarray(records[name], dtype="<f4")
        nb = name.encode("utf-8")
        blob += struct.pack("<H", len(nb))
        blob += nb
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path):
    """Read a checkpoint; returns (weights, config, extra, moments)."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(buf):
            raise CheckpointError(f"truncated checkpoint {path}")
        chunk = buf[off : off + n]
        off += n
        return chunk

    if take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path} is not a groupcast checkpoint")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", take(4))
    header = json.loads(take(cfg_len).decode("utf-8"))
    config = ModelConfig.from_dict(header["model"])
    extra = header.get("extra", {})
    (count,) = struct.unpack("<I", take(4))
    weights: dict[str, T.Tensor] = {}
    moments: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
        if name.startswith("opt."):
            moments[name[4:]] = arr
        else:
            weights[name] = T.parameter(arr, dtype=np.float32)
    if off != len(buf):
        raise CheckpointError(f"trailing bytes in checkpoint {path}")
    return weights, config, extra, moments
