"""Binary file formats and small text helpers.

Three container formats, all little-endian, all with 4-byte ASCII magic:

Golden tensor ("SSAT"): magic, u8 version=1, u8 dtype code (0=float32,
1=float64), five u32 dims (n, c, f, h, w), then the raw values row-major.
Used for regression fixtures and dataset clips.

Voxel dataset ("SSAV"): magic, u32 record count, u32 class count; each
record is a u32 label followed by 4096 bytes of bit-packed occupancy for
one 32x32x32 binary grid (bit order matches numpy packbits defaults).

Checkpoint ("SSAC"): magic, u8 version=1, u32 spec length + that many
bytes of the plain-text network spec, u32 entry count; each entry is
u16 name length + name (utf-8), u8 trainable flag, u8 rank, rank u32 true
dims, then one embedded SSAT record whose dims are the true shape padded
with leading 1s to rank 5.  The embedded spec makes checkpoints
self-describing: ``restore_network`` rebuilds and loads in one call.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

TENSOR_MAGIC = b"SSAT"
VOXEL_MAGIC = b"SSAV"
CHECKPOINT_MAGIC = b"SSAC"

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

VOXEL_SIDE = 32
_VOXEL_BITS = VOXEL_SIDE**3
_VOXEL_BYTES = _VOXEL_BITS // 8


class _Reader:
    """Bounds-checked cursor over a bytes buffer."""

    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated {self.what} file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise FormatError(
                f"{self.what} file has {len(self.buf) - self.pos} trailing bytes"
            )


# ---------------------------------------------------------------------------
# SSAT golden tensors


def tensor_to_bytes(x: np.ndarray) -> bytes:
    if x.ndim != 5:
        raise FormatError(f"tensor format stores 5-D arrays, got shape {x.shape}")
    if x.dtype not in _CODE_FOR:
        raise FormatError(f"tensor format stores float32/float64, got {x.dtype}")
    head = TENSOR_MAGIC + struct.pack("<BB", 1, _CODE_FOR[x.dtype])
    head += struct.pack("<5I", *x.shape)
    body = np.ascontiguousarray(x).astype(x.dtype.newbyteorder("<")).tobytes()
    return head + body


def _tensor_from_reader(r: _Reader) -> np.ndarray:
    if r.take(4) != TENSOR_MAGIC:
        raise FormatError(f"bad magic in {r.what}: expected {TENSOR_MAGIC!r}")
    version = r.u8()
    if version != 1:
        raise FormatError(f"unsupported tensor version {version}")
    code = r.u8()
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown tensor dtype code {code}")
    dtype = _DTYPE_CODES[code]
    dims = struct.unpack("<5I", r.take(20))
    count = int(np.prod(dims, dtype=np.int64))
    raw = r.take(count * dtype.itemsize)
    arr = np.frombuffer(raw, dtype=dtype).reshape(dims)
    return np.ascontiguousarray(arr.astype(dtype.newbyteorder("=")))


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    r = _Reader(buf, "tensor")
    out = _tensor_from_reader(r)
    r.done()
    return out


def save_tensor(path, x: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(x))


def load_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def describe_tensor(buf: bytes) -> dict:
    """Header fields and value statistics of one SSAT buffer."""
    x = tensor_from_bytes(buf)
    return {
        "dtype": str(x.dtype),
        "shape": x.shape,
        "count": int(x.size),
        "min": float(x.min()) if x.size else float("nan"),
        "max": float(x.max()) if x.size else float("nan"),
        "mean": float(x.mean()) if x.size else float("nan"),
        "std": float(x.std()) if x.size else float("nan"),
    }


# ---------------------------------------------------------------------------
# SSAV voxel datasets


def save_voxels(path, grids: np.ndarray, labels: np.ndarray, n_classes: int) -> None:
    """Write binary occupancy grids; grids is (N, 32, 32, 32) with 0/1 values."""
    grids = np.asarray(grids)
    labels = np.asarray(labels)
    if grids.ndim != 4 or grids.shape[1:] != (VOXEL_SIDE,) * 3:
        raise FormatError(
            f"voxel grids must be (n, {VOXEL_SIDE}, {VOXEL_SIDE}, {VOXEL_SIDE}), "
            f"got {grids.shape}"
        )
    if labels.shape != (grids.shape[0],):
        raise FormatError("labels must be one integer per grid")
    vals = np.unique(grids)
    if vals.size and not np.isin(vals, (0, 1)).all():
        raise FormatError("voxel grids must be binary before saving")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise FormatError(f"labels must lie in [0, {n_classes})")
    parts = [VOXEL_MAGIC, struct.pack("<II", grids.shape[0], n_classes)]
    for grid, label in zip(grids, labels):
        parts.append(struct.pack("<I", int(label)))
        parts.append(np.packbits(grid.astype(np.uint8).reshape(-1)).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_voxels(path) -> tuple[np.ndarray, np.ndarray, int]:
    """Read an SSAV file: (grids uint8 (N,32,32,32), labels int64, n_classes)."""
    r = _Reader(Path(path).read_bytes(), "voxel")
    if r.take(4) != VOXEL_MAGIC:
        raise FormatError(f"bad magic in voxel file: expected {VOXEL_MAGIC!r}")
    count = r.u32()
    n_classes = r.u32()
    grids = np.empty((count, VOXEL_SIDE, VOXEL_SIDE, VOXEL_SIDE), dtype=np.uint8)
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        labels[i] = r.u32()
        packed = np.frombuffer(r.take(_VOXEL_BYTES), dtype=np.uint8)
        grids[i] = np.unpackbits(packed)[:_VOXEL_BITS].reshape((VOXEL_SIDE,) * 3)
    r.done()
    if count and (labels.min() < 0 or labels.max() >= n_classes):
        raise FormatError("voxel file labels exceed its declared class count")
    return grids, labels, n_classes


# ---------------------------------------------------------------------------
# SSAC checkpoints


def checkpoint_to_bytes(spec_text: str, entries) -> bytes:
    """entries: iterable of (name, array, trainable)."""
    spec_raw = spec_text.encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<B", 1),
             struct.pack("<I", len(spec_raw)), spec_raw]
    entries = list(entries)
    names = [name for name, _, _ in entries]
    if len(set(names)) != len(names):
        raise FormatError("duplicate checkpoint entry names")
    parts.append(struct.pack("<I", len(entries)))
    for name, arr, trainable in entries:
        raw_name = name.encode("utf-8")
        if arr.ndim > 5:
            raise FormatError(f"checkpoint entry {name!r} has rank {arr.ndim} > 5")
        padded = arr.reshape((1,) * (5 - arr.ndim) + arr.shape)
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", 1 if trainable else 0, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(tensor_to_bytes(padded.astype(
            arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64)))
    return b"".join(parts)


def checkpoint_from_bytes(buf: bytes):
    """Returns (spec_text, {name: (array, trainable)}) preserving entry order."""
    r = _Reader(buf, "checkpoint")
    if r.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic in checkpoint: expected {CHECKPOINT_MAGIC!r}")
    version = r.u8()
    if version != 1:
        raise FormatError(f"unsupported checkpoint version {version}")
    spec_text = r.take(r.u32()).decode("utf-8")
    n = r.u32()
    entries: dict[str, tuple[np.ndarray, bool]] = {}
    for _ in range(n):
        name = r.take(r.u16()).decode("utf-8")
        trainable = bool(r.u8())
        rank = r.u8()
        if rank > 5:
            raise FormatError(f"checkpoint entry {name!r} has rank {rank} > 5")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        arr = _tensor_from_reader(r).reshape(shape)
        if name in entries:
            raise FormatError(f"duplicate checkpoint entry {name!r}")
        entries[name] = (arr, trainable)
    r.done()
    return spec_text, entries


def save_checkpoint(path, network) -> None:
    """Serialize a built network (weights, BN buffers, and its spec)."""
    from .blocks import render_network_spec

    if network.spec is None:
        raise FormatError("network has no spec attached; cannot checkpoint")
    spec_text = render_network_spec(network.spec)
    Path(path).write_bytes(
        checkpoint_to_bytes(spec_text, network.state_entries())
    )


def restore_network(path, dtype=np.float32):
    """Rebuild the checkpointed network and load all arrays into it."""
    from .blocks import build_network, parse_network_spec

    spec_text, entries = checkpoint_from_bytes(Path(path).read_bytes())
    spec = parse_network_spec(spec_text)
    net = build_network(spec, seed=0, dtype=dtype)
    arrays = {name: arr.astype(dtype) for name, (arr, _) in entries.items()}
    net.load_state(arrays)
    return net


# ---------------------------------------------------------------------------
# text helpers


def parse_key_value(text: str) -> dict[str, str]:
    """Parse 'key=value' lines; '#' comments and blank lines are skipped."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key=value, got {line!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if not key:
            raise FormatError(f"line {lineno}: empty key")
        if key in out:
            raise FormatError(f"line {lineno}: duplicate key {key!r}")
        out[key] = val.strip()
    return out


def golden_dir(default=None) -> Path | None:
    """Directory holding golden regression tensors (env SSA_GOLDEN_DIR)."""
    env = os.environ.get("SSA_GOLDEN_DIR")
    if env:
        return Path(env)
    return Path(default) if default is not None else None
