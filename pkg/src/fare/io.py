"""Binary container and checkpoint formats.

Container (all integers little-endian uint32)::

    b"FARE" | version | dtype | ndim | dims[ndim] | row-major payload

dtype codes: 1 = float32, 2 = float64, 3 = complex64 (interleaved float32 re/im).

Checkpoint::

    b"FARC" | version | header_len | header (UTF-8 JSON, sorted keys)
    | n_sections | per section: name_len | name | u64 blob_len | container blob
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

CONTAINER_MAGIC = b"FARE"
CHECKPOINT_MAGIC = b"FARC"
VERSION = 1

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<c8")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.complex64): 3}
_U32_MAX = 0xFFFFFFFF


class ContainerError(ValueError):
    """Malformed or inconsistent container/checkpoint bytes."""


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_container(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise ContainerError(f"unsupported dtype {arr.dtype}; use float32, float64 or complex64")
    if any(d > _U32_MAX for d in arr.shape) or arr.ndim > _U32_MAX:
        raise ContainerError("dimension does not fit in uint32")
    header = CONTAINER_MAGIC + struct.pack(f"<III{arr.ndim}I", VERSION, code, arr.ndim, *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def decode_container(blob: bytes) -> np.ndarray:
    if len(blob) < 16:
        raise ContainerError("truncated container header")
    if blob[:4] != CONTAINER_MAGIC:
        raise ContainerError(f"bad magic {blob[:4]!r}, expected {CONTAINER_MAGIC!r}")
    version, code, ndim = struct.unpack_from("<III", blob, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if code not in _DTYPES:
        raise ContainerError(f"unknown dtype code {code}")
    head = 16 + 4 * ndim
    if len(blob) < head:
        raise ContainerError("truncated container header")
    dims = struct.unpack_from(f"<{ndim}I", blob, 16)
    dtype = _DTYPES[code]
    count = 1
    for d in dims:
        count *= d
    expected = count * dtype.itemsize
    if len(blob) - head != expected:
        raise ContainerError(
            f"payload is {len(blob) - head} bytes but header declares {expected} (truncated or corrupt)"
        )
    arr = np.frombuffer(blob, dtype=dtype, count=count, offset=head).reshape(dims)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def write_container(path: str | Path, array: np.ndarray) -> None:
    atomic_write_bytes(path, encode_container(array))


def read_container(path: str | Path) -> np.ndarray:
    return decode_container(Path(path).read_bytes())


def encode_checkpoint(header: dict, sections: dict[str, np.ndarray]) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", VERSION, len(head)), head, struct.pack("<I", len(sections))]
    for name, arr in sections.items():
        key = name.encode("utf-8")
        blob = encode_container(arr)
        parts += [struct.pack("<I", len(key)), key, struct.pack("<Q", len(blob)), blob]
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ContainerError(f"bad checkpoint magic {blob[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    try:
        version, hlen = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise ContainerError(f"unsupported checkpoint version {version}")
        pos = 12
        header = json.loads(blob[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        sections: dict[str, np.ndarray] = {}
        for _ in range(n):
            (klen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + klen].decode("utf-8")
            pos += klen
            (blen,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            if name in sections:
                raise ContainerError(f"duplicate section {name!r}")
            if pos + blen > len(blob):
                raise ContainerError(f"section {name!r} truncated")
            sections[name] = decode_container(blob[pos:pos + blen])
            pos += blen
    except struct.error as exc:
        raise ContainerError(f"truncated checkpoint: {exc}") from None
    if pos != len(blob):
        raise ContainerError("trailing bytes after last checkpoint section")
    return header, sections
