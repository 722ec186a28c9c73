# src/diffcore/checkpoint.py
"""
"DYNP" parameter checkpoints.

Layout (little-endian):
    b"DYNP" | u32 version | u32 manifest length | manifest JSON (utf-8) | raw float32 arrays

The manifest lists (name, dtype, shape, byte offset) per array, the component tag
("vpm", "agm", ...) and free-form metadata such as the architecture descriptor and
the config hash of the run that wrote it.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict
import json
import struct

import numpy as np

from src.diffcore.params import ParamSet
from src.utils.errors import FormatError
from src.utils.helpers import atomic_write_bytes
from src.utils.logger import get_logger

logger = get_logger(__name__)

MAGIC = b"DYNP"
VERSION = 1
_HEADER = struct.Struct("<4sII")
_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    params: ParamSet
    component: str
    meta: Dict[str, Any] = field(default_factory=dict)


def encode_checkpoint(params: ParamSet, component: str, meta: Dict[str, Any] | None = None) -> bytes:
    entries = []
    blobs = []
    offset = 0
    for name in params.names():
        arr = np.ascontiguousarray(params.values[name], dtype=_DTYPE)
        entries.append({"name": name, "dtype": "float32", "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps(
        {"component": component, "meta": meta or {}, "entries": entries},
        sort_keys=True,
    ).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(manifest)) + manifest + b"".join(blobs)


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < _HEADER.size:
        raise FormatError("checkpoint truncated before header")
    magic, version, mlen = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    start = _HEADER.size
    try:
        manifest = json.loads(data[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError("unreadable checkpoint manifest") from e
    base = start + mlen

    params = ParamSet(dtype=np.float32)
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        begin = base + int(entry["offset"])
        end = begin + count * _DTYPE.itemsize
        if end > len(data):
            raise FormatError(f"array {entry['name']} runs past end of file")
        arr = np.frombuffer(data, dtype=_DTYPE, count=count, offset=begin).reshape(shape)
        params.add(entry["name"], arr.astype(np.float32))
    return Checkpoint(params=params, component=manifest["component"], meta=manifest.get("meta", {}))


def save_checkpoint(path: str | Path, params: ParamSet, component: str, meta: Dict[str, Any] | None = None) -> Path:
    path = atomic_write_bytes(path, encode_checkpoint(params, component, meta))
    logger.info(f"Saved {component} checkpoint ({params.size()} params) to {path}")
    return path


def load_checkpoint(path: str | Path, component: str | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    ckpt = decode_checkpoint(path.read_bytes())
    if component is not None and ckpt.component != component:
        raise FormatError(f"{path} holds a '{ckpt.component}' checkpoint, expected '{component}'")
    logger.info(f"Loaded {ckpt.component} checkpoint from {path}")
    return ckpt
