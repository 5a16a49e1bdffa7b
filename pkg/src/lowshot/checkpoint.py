"""Binary checkpoint format for decoder parameters, latents and optimizer state.

Layout (all integers little-endian)::

    magic          8 bytes  b"LOWSHOT\\x00"
    version        u32
    descriptor     u32 length + UTF-8 JSON
    manifest       u32 length + UTF-8 JSON (free-form training metadata)
    n_records      u32
    records        n_records x (u16 name length, name, u8 dtype tag,
                                u8 rank, rank x u64 extents, raw values)
    trailer        4 bytes  b"END\\x00"

Tensor names are namespaced: ``theta/<leaf>``, ``latents``,
``opt/<buffer>``, ``loss_history``.
"""

import hashlib
import json
import os
import struct

import numpy as np

from .decoder import DecoderParams, Descriptor
from .errors import CheckpointError, IncompatibleCheckpointError

MAGIC = b"LOWSHOT\x00"
TRAILER = b"END\x00"
FORMAT_VERSION = 1

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_TAGS = {np.dtype("float32"): 1, np.dtype("float64"): 2, np.dtype("int64"): 3}


def encode(descriptor, tensors, manifest=None):
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for block in (descriptor.to_dict(), manifest or {}):
        raw = json.dumps(block, sort_keys=True).encode()
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
    out.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw_name = name.encode()
        out.append(struct.pack("<H", len(raw_name)))
        out.append(raw_name)
        out.append(struct.pack("<BB", _TAGS[arr.dtype], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[_TAGS[arr.dtype]]).tobytes())
    out.append(TRAILER)
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf):
    """Parse a checkpoint buffer into ``(descriptor, tensors, manifest)``."""
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a lowshot checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise IncompatibleCheckpointError(f"format version {version}, expected {FORMAT_VERSION}")
    blocks = []
    for _ in range(2):
        (n,) = r.unpack("<I")
        try:
            blocks.append(json.loads(r.take(n).decode()))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt header block: {exc}") from exc
    try:
        descriptor = Descriptor.from_dict(blocks[0])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"bad descriptor block: {exc}") from exc
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        tag, rank = r.unpack("<BB")
        if tag not in _DTYPES:
            raise CheckpointError(f"unknown dtype tag {tag} for {name}")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        dtype = _DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(r.take(nbytes), dtype=dtype).reshape(shape)
        tensors[name] = arr.astype(dtype.newbyteorder("="))
    if r.take(len(TRAILER)) != TRAILER:
        raise CheckpointError("missing end marker")
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after end marker")
    return descriptor, tensors, blocks[1]


def save_checkpoint(path, theta, latents=None, manifest=None, extra=None):
    """Write ``theta`` (DecoderParams), optional latent table and extra tensors."""
    tensors = {f"theta/{k}": v for k, v in theta.arrays.items()}
    if latents is not None:
        tensors["latents"] = np.asarray(latents)
    for k, v in (extra or {}).items():
        tensors[k] = np.asarray(v)
    buf = encode(theta.descriptor, tensors, manifest)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf)
    os.replace(tmp, path)


def load_checkpoint(path, expected=None):
    """Read a checkpoint; returns ``(theta, latents, extra, manifest)``.

    ``expected`` (a Descriptor) guards against loading a model built for a
    different architecture.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    descriptor, tensors, manifest = decode(buf)
    if expected is not None and descriptor != expected:
        raise IncompatibleCheckpointError(
            f"checkpoint descriptor {descriptor} does not match expected {expected}"
        )
    theta_arrays = {}
    for name in descriptor.layer_shapes():
        key = f"theta/{name}"
        if key not in tensors:
            raise CheckpointError(f"missing tensor {key}")
        theta_arrays[name] = tensors.pop(key)
    try:
        theta = DecoderParams(descriptor, theta_arrays)
    except ValueError as exc:
        raise IncompatibleCheckpointError(str(exc)) from exc
    latents = tensors.pop("latents", None)
    return theta, latents, tensors, manifest


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
