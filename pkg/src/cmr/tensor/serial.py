"""Binary tensor and checkpoint encoding.

A single tensor is encoded as:

    magic ``CMRT`` | u32 rank | u32 dims (little-endian) | f64 payload
    (little-endian, row-major)

A checkpoint file is a container of named tensors:

    u32 header length | UTF-8 JSON header | concatenated tensor records

where the JSON header is ``{"meta": {...}, "tensors": {name: {"offset":
o, "shape": [...]}}}`` and each offset is relative to the first byte
after the header. Values are always written as float64 regardless of the
in-memory storage mode.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ContractError
from .core import Tensor

MAGIC = b"CMRT"


def encode_tensor(arr: np.ndarray) -> bytes:
    # order="C" keeps rank-0 arrays rank-0 (ascontiguousarray would not)
    arr = np.asarray(arr, dtype=np.float64, order="C")
    parts = [MAGIC, struct.pack("<I", arr.ndim)]
    for dim in arr.shape:
        parts.append(struct.pack("<I", dim))
    parts.append(arr.astype("<f8").tobytes())
    return b"".join(parts)


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor record; returns (array, offset past the record)."""
    if buf[offset:offset + 4] != MAGIC:
        raise ContractError(f"bad tensor magic at offset {offset}: {buf[offset:offset + 4]!r}")
    offset += 4
    (rank,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    shape = []
    for _ in range(rank):
        (dim,) = struct.unpack_from("<I", buf, offset)
        shape.append(dim)
        offset += 4
    count = 1
    for dim in shape:
        count *= dim
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
    offset += count * 8
    return data.astype(np.float64).reshape(shape), offset


def save_tensor(path: str | Path, t: Tensor | np.ndarray) -> None:
    arr = t.data if isinstance(t, Tensor) else t
    Path(path).write_bytes(encode_tensor(arr))


def load_tensor(path: str | Path) -> np.ndarray:
    arr, _ = decode_tensor(Path(path).read_bytes())
    return arr


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write named tensors plus a JSON meta block as one container file."""
    blob = io.BytesIO()
    index: dict[str, dict] = {}
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        index[name] = {"offset": blob.tell(), "shape": list(arr.shape)}
        blob.write(encode_tensor(arr))
    header = json.dumps({"meta": meta, "tensors": index}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(blob.getvalue())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container written by save_checkpoint: (name -> array, meta)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ContractError(f"checkpoint {path} is truncated")
    (hlen,) = struct.unpack_from("<I", raw, 0)
    try:
        header = json.loads(raw[4:4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContractError(f"checkpoint {path} has a malformed header: {e}")
    base = 4 + hlen
    tensors = {}
    for name, entry in header["tensors"].items():
        arr, _ = decode_tensor(raw, base + entry["offset"])
        if list(arr.shape) != entry["shape"]:
            raise ContractError(f"checkpoint entry {name!r}: shape {arr.shape} does not match index")
        tensors[name] = arr
    return tensors, header["meta"]
