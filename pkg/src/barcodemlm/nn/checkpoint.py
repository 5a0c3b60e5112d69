"""Binary tensor checkpoints.

Layout (little-endian)::

    b"BMLMCKPT"  uint32 version
    repeated until EOF:
        uint32 name_len, utf-8 name, uint32 rank, uint64 * rank shape,
        float64 * prod(shape) values

A sibling ``<path>.manifest`` text file lists ``name<TAB>shape`` per tensor,
preceded by ``#key=value`` metadata lines.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"BMLMCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest")


def save_tensors(
    path: str | Path, tensors: Mapping[str, object], metadata: Mapping[str, str] | None = None
) -> None:
    path = Path(path)
    lines = [f"#{k}={v}" for k, v in (metadata or {}).items()]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, value in tensors.items():
            arr = _as_numpy(value)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8").tobytes(order="C"))
            lines.append(f"{name}\t{'x'.join(map(str, arr.shape)) or 'scalar'}")
    manifest_path(path).write_text("\n".join(lines) + "\n")


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 8 * count > len(data):
                raise CheckpointError(f"{path}: truncated payload for {name!r}")
            out[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
            pos += 8 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return out


def read_metadata(path: str | Path) -> dict[str, str]:
    meta = {}
    for line in manifest_path(path).read_text().splitlines():
        if line.startswith("#") and "=" in line:
            key, value = line[1:].split("=", 1)
            meta[key] = value
    return meta


def _as_numpy(value: object) -> np.ndarray:
    if hasattr(value, "detach"):
        value = value.detach().cpu().numpy()
    return np.array(value, dtype=np.float64, order="C")
