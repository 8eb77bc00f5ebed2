"""Binary checkpoint container for named tensors.

Layout (all integers little-endian):
  magic "GWPT" | version u32 | tensor count u32
  then per tensor: name length u32 | UTF-8 name | rank u32 | dims u64 each
                   | dtype tag u8 (0 = f64, 1 = f32) | raw payload

Records are written in sorted-name order so save -> load -> save is
byte-identical.
"""

import json
import struct

import numpy as np

from .errors import BadCheckpoint

MAGIC = b"GWPT"
VERSION = 1

_TAG_TO_DTYPE = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_DTYPE_TO_TAG = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}


def save_tensors(path, tensors: dict):
    """Write a name -> array (or Tensor) mapping to a GWPT file."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name in sorted(tensors):
            arr = tensors[name]
            arr = np.asarray(getattr(arr, "data", arr))
            if arr.dtype not in _DTYPE_TO_TAG:
                raise BadCheckpoint("tensor %r has unsupported dtype %s" % (name, arr.dtype))
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack("<%dQ" % arr.ndim, *arr.shape))
            fh.write(struct.pack("<B", _DTYPE_TO_TAG[arr.dtype]))
            fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise BadCheckpoint("truncated file while reading %s" % what)
    return buf


def load_tensors(path) -> dict:
    """Read a GWPT file back into a name -> float array mapping."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise BadCheckpoint("bad magic; not a GWPT checkpoint")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != VERSION:
            raise BadCheckpoint("unsupported version %d" % version)
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            dims = struct.unpack("<%dQ" % rank, _read_exact(fh, 8 * rank, "dims"))
            (tag,) = struct.unpack("<B", _read_exact(fh, 1, "dtype tag"))
            if tag not in _TAG_TO_DTYPE:
                raise BadCheckpoint("unknown dtype tag %d" % tag)
            dtype = _TAG_TO_DTYPE[tag]
            n_bytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
            payload = _read_exact(fh, n_bytes, "payload of %s" % name)
            arr = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
            tensors[name] = arr
        trailing = fh.read(1)
        if trailing:
            raise BadCheckpoint("trailing bytes after last tensor")
    return tensors


def write_sidecar(path, meta: dict):
    """Deterministic JSON sidecar next to a checkpoint."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def read_sidecar(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
