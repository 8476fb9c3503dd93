"""Binary named-tensor container used for checkpoints and datasets.

Layout (little-endian throughout):
  magic  "VTTC"
  u32    format version (currently 1)
  u32    tensor count
  per tensor:
    u16      name length, then UTF-8 name bytes
    u8       rank
    u32 * r  dims
    f32 * n  row-major data
  u32    CRC32 of every preceding byte

The trailing checksum covers the whole stream, so truncation or corruption
anywhere is detected on load.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import ValidationError
from .tensor import Tensor

MAGIC = b"VTTC"
VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray | Tensor]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value.data if isinstance(value, Tensor) else value, dtype="<f4")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ValidationError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise ValidationError(f"tensor rank {arr.ndim} unsupported")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.tobytes(order="C"))
    blob = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF))


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 + 4:
        raise ValidationError(f"{path}: too short to be a tensor container")
    blob, crc_stored = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(blob) & 0xFFFFFFFF != crc_stored:
        raise ValidationError(f"{path}: checksum mismatch (corrupt or truncated)")
    if blob[:4] != MAGIC:
        raise ValidationError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported version {version}")
    out: dict[str, np.ndarray] = {}
    off = 12
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
        off += 4 * rank
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        out[name] = np.array(arr)  # writable copy in native order
    if off != len(blob):
        raise ValidationError(f"{path}: {len(blob) - off} trailing bytes")
    return out


def params_to_entries(groups: dict[str, dict[str, Tensor]]) -> dict[str, np.ndarray]:
    """Flatten {group: {name: tensor}} to {group/name: array} for saving."""
    flat: dict[str, np.ndarray] = {}
    for group, params in groups.items():
        for name, p in params.items():
            flat[f"{group}/{name}"] = p.data
    return flat


def entries_to_params(entries: dict[str, np.ndarray], group: str,
                      requires_grad: bool = True) -> dict[str, Tensor]:
    """Extract one group back into a parameter dict (insertion order preserved)."""
    prefix = group + "/"
    out = {}
    for name, arr in entries.items():
        if name.startswith(prefix):
            out[name[len(prefix):]] = Tensor(arr.astype(np.float32),
                                             requires_grad=requires_grad)
    return out
