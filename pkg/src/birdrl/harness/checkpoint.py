"""Versioned binary checkpoint container.

Layout (little-endian)::

    b"BIRDCKPT" | u32 version | u64 len + config JSON
    | u32 array count | per array: u16 len + name, u8 len + dtype, u8 ndim, u64 dims..., u64 nbytes, payload
    | u64 len + state JSON (RNG streams, counters)
    | 32-byte SHA-256 of everything before it
"""

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"BIRDCKPT"
VERSION = 1
_DIGEST = 32


class CheckpointError(ValueError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: dict
    arrays: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)


def _pack_blob(obj):
    raw = json.dumps(obj, sort_keys=True).encode()
    return struct.pack("<Q", len(raw)) + raw


def dumps(ckpt):
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_blob(ckpt.config), struct.pack("<I", len(ckpt.arrays))]
    for name, arr in ckpt.arrays.items():
        arr = np.asarray(arr, order="C")  # unlike ascontiguousarray, keeps 0-d shapes
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in "<|" else arr.dtype
        arr = arr.astype(dtype, copy=False)
        enc_name = name.encode()
        enc_dtype = dtype.str.encode()
        parts.append(struct.pack("<H", len(enc_name)) + enc_name)
        parts.append(struct.pack("<B", len(enc_dtype)) + enc_dtype)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        payload = arr.tobytes()
        parts.append(struct.pack("<Q", len(payload)) + payload)
    parts.append(_pack_blob(ckpt.state))
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError("checkpoint ends early")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self):
        (n,) = self.unpack("<Q")
        try:
            return json.loads(self.take(n).decode())
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise CheckpointChecksumError("corrupt JSON section") from None


def loads(data):
    if len(data) < len(MAGIC):
        raise CheckpointTruncatedError("checkpoint ends early")
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("not a birdrl checkpoint (bad magic)")
    if len(data) < len(MAGIC) + 4:
        raise CheckpointTruncatedError("checkpoint ends early")
    (version,) = struct.unpack("<I", data[len(MAGIC):len(MAGIC) + 4])
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {VERSION}")
    if len(data) < len(MAGIC) + 4 + _DIGEST:
        raise CheckpointTruncatedError("checkpoint ends early")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    r = _Reader(body)
    r.take(len(MAGIC) + 4)
    config = r.blob()
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode(errors="replace")
        (dlen,) = r.unpack("<B")
        dtype = np.dtype(r.take(dlen).decode(errors="replace"))
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q")
        (nbytes,) = r.unpack("<Q")
        if nbytes != int(np.prod(shape)) * dtype.itemsize:
            raise CheckpointChecksumError(f"array {name!r}: payload size does not match its shape")
        arrays[name] = np.frombuffer(r.take(nbytes), dtype=dtype).reshape(shape).copy()
    state = r.blob()
    if r.pos != len(body) or hashlib.sha256(body).digest() != digest:
        raise CheckpointChecksumError("checksum mismatch")
    return Checkpoint(config, arrays, state)


def save_checkpoint(path, ckpt):
    data = dumps(ckpt)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


def check_shapes(expected, arrays, prefix=""):
    """Raise ``CheckpointShapeError`` unless every expected array is present with its shape."""
    for name, arr in expected.items():
        key = prefix + name
        if key not in arrays:
            raise CheckpointShapeError(f"checkpoint lacks {key!r}")
        if arrays[key].shape != arr.shape:
            raise CheckpointShapeError(f"{key!r}: checkpoint shape {arrays[key].shape} != expected {arr.shape}")
