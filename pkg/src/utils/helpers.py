# src/utils/helpers.py
from __future__ import annotations
from pathlib import Path
from typing import Any
import hashlib
import json
import os

import numpy as np

from src.utils.errors import InvalidArgumentError


def file_sha256(path: str | Path, chunk: int = 1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for b in iter(lambda: f.read(chunk), b""):
            h.update(b)
    return h.hexdigest()


def canonical_json(obj: Any) -> str:
    """Key-sorted, whitespace-free JSON used for content hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def content_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write via a sibling temp file and os.replace, so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    return path


def atomic_write_bytes(path: str | Path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


# ------------------------ seed streams ------------------------

def _stream_key(name: str) -> int:
    # first 8 bytes of sha256(name); stable across processes, unlike hash()
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def stream_seed(master_seed: int, name: str, *indices: int) -> np.random.SeedSequence:
    """SeedSequence for the named stream `name` at `indices` under `master_seed`."""
    if master_seed < 0 or any(i < 0 for i in indices):
        raise InvalidArgumentError("seeds and stream indices must be non-negative")
    return np.random.SeedSequence(master_seed, spawn_key=(_stream_key(name), *indices))


def rng_stream(master_seed: int, name: str, *indices: int) -> np.random.Generator:
    """
    Counter-based generator (Philox) for one named stream.

    The same (master_seed, name, indices) always yields the same draws, independent
    of how many other streams were consumed before.
    """
    return np.random.Generator(np.random.Philox(stream_seed(master_seed, name, *indices)))


def stream_int(master_seed: int, name: str, *indices: int) -> int:
    """A 32-bit integer seed drawn from a named stream, for APIs that take plain ints."""
    return int(stream_seed(master_seed, name, *indices).generate_state(1)[0])
