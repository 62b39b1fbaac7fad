"""Weight archives and 2D/3D kernel export.

Archive layout (all integers little-endian)::

    b"XDCW"  u32 version=1  u32 count
    count x { u16 name_len, name (UTF-8), u8 rank, rank x u32 extent,
              prod(extents) x f64 payload (row-major) }
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

from . import spectral
from .convops import KernelBank5D
from .rotparam import RotationParams, RotParamHead

MAGIC = b"XDCW"
VERSION = 1
_HEADER = struct.Struct("<4sII")


class ArchiveError(ValueError):
    pass


class ArchiveFormatError(ArchiveError):
    """Bad magic bytes."""


class ArchiveVersionError(ArchiveError):
    pass


class ArchiveCorruptError(ArchiveError):
    """Truncated or otherwise inconsistent archive contents."""


def encode_archive(tensors: Mapping[str, np.ndarray] | list[tuple[str, np.ndarray]]) -> bytes:
    items = list(tensors.items()) if isinstance(tensors, Mapping) else list(tensors)
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise ArchiveError(f"duplicate tensor names: {dup}")
    chunks = [_HEADER.pack(MAGIC, VERSION, len(items))]
    for name, value in items:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ArchiveError(f"name too long: {name[:32]}...")
        arr = np.asarray(value, dtype="<f8")
        if not 1 <= arr.ndim <= 255:
            raise ArchiveError(f"tensor {name!r} has unsupported rank {arr.ndim}")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(chunks)


def decode_archive(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < 4 or data[:4] != MAGIC:
        raise ArchiveFormatError(f"not a weight archive (magic {data[:4]!r})")
    if len(data) < _HEADER.size:
        raise ArchiveCorruptError("truncated header")
    _, version, count = _HEADER.unpack_from(data)
    if version != VERSION:
        raise ArchiveVersionError(f"unsupported archive version {version}")
    pos = _HEADER.size
    out: dict[str, np.ndarray] = {}

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ArchiveCorruptError(f"truncated archive: need {n} bytes at offset {pos}, have {len(data) - pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ArchiveCorruptError(f"invalid tensor name: {exc}") from None
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        payload = take(8 * int(np.prod(shape, dtype=np.int64)))
        if name in out:
            raise ArchiveCorruptError(f"duplicate tensor name {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(data):
        raise ArchiveCorruptError(f"{len(data) - pos} trailing bytes after last record")
    return out


def save_archive(path: str | os.PathLike, tensors) -> None:
    data = encode_archive(tensors)
    with open(path, "wb") as fh:
        fh.write(data)


def load_archive(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode_archive(fh.read())


def derive_3d_kernels(bank: KernelBank5D, params: RotationParams) -> KernelBank5D:
    """Freeze a rotation into a plain 3D kernel bank (groups and bias carried over)."""
    rotated = spectral.rotate_bank(bank.weights, params)
    bias = None if bank.bias is None else bank.bias.copy()
    return KernelBank5D(rotated, bank.groups, bias)


def derive_2d_kernels(bank: KernelBank5D, params: RotationParams) -> np.ndarray:
    """Middle depth slice of the rotated bank, usable by any ordinary conv2d."""
    return spectral.extract_mid_slice(derive_3d_kernels(bank, params).weights)


def layer_tensors(bank: KernelBank5D, head: RotParamHead | None = None) -> dict[str, np.ndarray]:
    """Named tensors for one Cross-D layer (``bank.groups`` stored as a length-1 tensor)."""
    out = {"bank.weight": bank.weights, "bank.groups": np.array([float(bank.groups)])}
    if bank.bias is not None:
        out["bank.bias"] = bank.bias
    if head is not None:
        out["head.weight"] = head.conv_weights
        out["head.bias"] = head.conv_bias
    return out


def layer_from_tensors(tensors: Mapping[str, np.ndarray]) -> tuple[KernelBank5D, RotParamHead | None]:
    try:
        weights = tensors["bank.weight"]
    except KeyError:
        raise ArchiveError("archive has no 'bank.weight' tensor") from None
    groups = int(tensors["bank.groups"][0]) if "bank.groups" in tensors else 1
    bank = KernelBank5D(weights, groups, tensors.get("bank.bias"))
    head = None
    if "head.weight" in tensors and "head.bias" in tensors:
        head = RotParamHead(tensors["head.weight"], tensors["head.bias"])
    return bank, head
