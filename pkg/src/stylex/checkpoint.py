"""Binary weight container.

Layout (all integers little-endian)::

    b"STYX"  u32 version
    repeated until EOF:
        u32 name_length, name bytes (utf-8), u32 rank, rank x u64 extents,
        prod(extents) x f32 data

Training metadata (configs, epoch, metrics) lives in a JSON sidecar with the
same stem and a ``.json`` suffix, so the binary layout stays a pure tensor list.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"STYX"
VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable or incompatible checkpoint files."""


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, value in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f4")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def decode_tensors(payload: bytes) -> dict[str, np.ndarray]:
    if payload[:4] != MAGIC:
        raise CheckpointError("bad magic: not a STYX checkpoint")
    if len(payload) < 8:
        raise CheckpointError("truncated header")
    (version,) = struct.unpack_from("<I", payload, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    pos = 8
    try:
        while pos < len(payload):
            (n,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            name = payload[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", payload, pos)
            pos += 8 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * count > len(payload):
                raise CheckpointError(f"truncated data for {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * count
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    return out


def save_tensors(path, tensors: dict[str, np.ndarray], metadata: dict | None = None) -> Path:
    path = Path(path)
    _atomic_write(path, encode_tensors(tensors))
    if metadata is not None:
        _atomic_write(path.with_suffix(".json"), json.dumps(metadata, indent=2, sort_keys=True).encode())
    return path


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    tensors = decode_tensors(path.read_bytes())
    meta_path = path.with_suffix(".json")
    metadata = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return tensors, metadata
