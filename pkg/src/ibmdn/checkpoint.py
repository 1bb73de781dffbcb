"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"IBMD" | u16 version=1 | u8 scale | u16 nf | u16 nd | u16 n_blocks
    | n_blocks * 3 bytes schedule ('B' / 'I') | u32 tensor count
    | per tensor: u16 name length, UTF-8 name, u8 dtype (0 = f32), u8 ndim,
      ndim * u32 dims, raw f32 payload

Trainable parameters and batch-norm running statistics are both stored.
"""
from __future__ import annotations

import io
import os
import struct

import numpy as np

from .arch import IBMDN, ModelSpec, build_ibmdn
from .errors import (
    ManifestMismatchError,
    NotACheckpointError,
    TruncatedCheckpointError,
    UnsupportedVersionError,
)

MAGIC = b"IBMD"
VERSION = 1
DTYPE_F32 = 0


def dumps(model: IBMDN) -> bytes:
    spec = model.spec
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HBHHH", VERSION, spec.scale, spec.nf, spec.nd, spec.n_blocks))
    buf.write("".join(spec.schedule).encode("ascii"))
    named = list(model.named_parameters())
    buf.write(struct.pack("<I", len(named)))
    for name, p in named:
        raw = name.encode("utf-8")
        if p.dtype != np.float32:
            raise TypeError(f"{name}: only float32 tensors can be checkpointed, got {p.dtype}")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", DTYPE_F32, p.ndim))
        buf.write(struct.pack(f"<{p.ndim}I", *p.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(model: IBMDN, path) -> None:
    data = dumps(model)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> IBMDN:
    r = _Reader(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise NotACheckpointError("missing IBMD magic bytes")
    r.take(4)
    version, = r.unpack("<H")
    if version != VERSION:
        raise UnsupportedVersionError(f"checkpoint version {version}, expected {VERSION}")
    scale, nf, nd, n_blocks = r.unpack("<BHHH")
    try:
        schedule_raw = r.take(3 * n_blocks).decode("ascii")
    except UnicodeDecodeError as exc:
        raise ManifestMismatchError("schedule bytes are not ASCII") from exc
    schedule = tuple(schedule_raw[i:i + 3] for i in range(0, len(schedule_raw), 3))
    count, = r.unpack("<I")

    tensors = {}
    for _ in range(count):
        name_len, = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        dtype, ndim = r.unpack("<BB")
        if dtype != DTYPE_F32:
            raise ManifestMismatchError(f"{name}: unknown dtype code {dtype}")
        dims = r.unpack(f"<{ndim}I")
        n = int(np.prod(dims)) if ndim else 1
        payload = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims)
        if name in tensors:
            raise ManifestMismatchError(f"duplicate tensor {name!r}")
        tensors[name] = payload
    if r.pos != len(data):
        raise ManifestMismatchError(f"{len(data) - r.pos} trailing bytes after the last tensor")

    # the trunk width of the attention block is implied by its first BN
    trunk = tensors.get("blocks.0.chfab.bn_in.gamma")
    spec_kwargs = dict(scale=scale, nf=nf, nd=nd, n_blocks=n_blocks, schedule=schedule)
    if trunk is not None:
        spec_kwargs["chfab_channels"] = int(trunk.shape[0])
    try:
        spec = ModelSpec(**spec_kwargs)
    except ValueError as exc:
        raise ManifestMismatchError(f"embedded model description is invalid: {exc}") from exc

    model = build_ibmdn(spec, seed=None)
    named = dict(model.named_parameters())
    missing = sorted(set(named) - set(tensors))
    extra = sorted(set(tensors) - set(named))
    if missing or extra:
        raise ManifestMismatchError(f"missing tensors {missing[:5]}, unexpected {extra[:5]}")
    for name, p in named.items():
        if tensors[name].shape != p.shape:
            raise ManifestMismatchError(
                f"{name}: shape {tensors[name].shape} != expected {p.shape}")
        p.data[...] = tensors[name]
    return model


def load_checkpoint(path) -> IBMDN:
    with open(path, "rb") as fh:
        return loads(fh.read())
