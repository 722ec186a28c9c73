# src/synthdyn/dataset_io.py
"""
"DYNO" dataset container.

    b"DYNO" | u32 version | u32 episode count | u64 dataset seed | u32 config length | WorldConfig JSON
    per episode:
        u32 mode | u64 seed
        array(instruction) | array(observation) | array(expert_latent) | array(expert_actions)
    array := u32 ndim | u32 dims[ndim] | float32 data, row-major, little-endian

Frames are not stored; episodes read back carry `frames=None`.
"""
from __future__ import annotations
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Tuple
import io
import json
import struct

import numpy as np

from src.synthdyn.world import Condition, Dataset, Episode, WorldConfig
from src.utils.errors import FormatError, InvalidArgumentError
from src.utils.helpers import atomic_write_bytes, atomic_write_text
from src.utils.logger import get_logger

logger = get_logger(__name__)

MAGIC = b"DYNO"
VERSION = 2
_HEADER = struct.Struct("<4sIIQI")
_F32 = np.dtype("<f4")


def _write_array(buf: io.BytesIO, arr: np.ndarray) -> None:
    a = np.ascontiguousarray(arr, dtype=_F32)
    buf.write(struct.pack("<I", a.ndim))
    buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
    buf.write(a.tobytes())


def _read_array(data: memoryview, pos: int) -> Tuple[np.ndarray, int]:
    (ndim,) = struct.unpack_from("<I", data, pos)
    pos += 4
    shape = struct.unpack_from(f"<{ndim}I", data, pos)
    pos += 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    end = pos + count * _F32.itemsize
    if end > len(data):
        raise FormatError("dataset array runs past end of file")
    arr = np.frombuffer(data, dtype=_F32, count=count, offset=pos).reshape(shape).astype(np.float32)
    arr.setflags(write=False)
    return arr, end


def config_to_dict(config: WorldConfig) -> Dict[str, Any]:
    d = asdict(config)
    d["orbit_radius"] = list(config.orbit_radius)
    return d


def config_from_dict(d: Dict[str, Any]) -> WorldConfig:
    d = dict(d)
    d["orbit_radius"] = tuple(d.get("orbit_radius", (0.15, 0.35)))
    return WorldConfig(**d)


def encode_dataset(dataset: Dataset) -> bytes:
    buf = io.BytesIO()
    cfg = json.dumps(config_to_dict(dataset.config), sort_keys=True).encode("utf-8")
    if dataset.seed < 0:
        raise InvalidArgumentError(f"dataset seed must be non-negative, got {dataset.seed}")
    buf.write(_HEADER.pack(MAGIC, VERSION, len(dataset), dataset.seed, len(cfg)))
    buf.write(cfg)
    for ep in dataset:
        buf.write(struct.pack("<IQ", ep.mode, ep.seed))
        _write_array(buf, ep.condition.instruction)
        _write_array(buf, ep.condition.observation)
        _write_array(buf, ep.expert_latent)
        _write_array(buf, ep.expert_actions)
    return buf.getvalue()


def decode_dataset(data: bytes) -> Dataset:
    view = memoryview(data)
    if len(data) < _HEADER.size:
        raise FormatError("dataset file truncated before header")
    magic, version, count, seed, clen = _HEADER.unpack_from(view, 0)
    if magic != MAGIC:
        raise FormatError(f"bad dataset magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    pos = _HEADER.size
    config = config_from_dict(json.loads(bytes(view[pos:pos + clen]).decode("utf-8")))
    pos += clen

    episodes: List[Episode] = []
    for _ in range(count):
        mode, ep_seed = struct.unpack_from("<IQ", view, pos)
        pos += 12
        instruction, pos = _read_array(view, pos)
        observation, pos = _read_array(view, pos)
        latent, pos = _read_array(view, pos)
        actions, pos = _read_array(view, pos)
        episodes.append(Episode(
            condition=Condition(observation=observation, instruction=instruction),
            expert_latent=latent,
            expert_actions=actions,
            mode=int(mode),
            seed=int(ep_seed),
        ))
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after {count} episodes")
    return Dataset(episodes=tuple(episodes), config=config, seed=int(seed))


def save_dataset(path: str | Path, dataset: Dataset) -> Path:
    path = atomic_write_bytes(path, encode_dataset(dataset))
    logger.info(f"Wrote {len(dataset)} episodes to {path}")
    return path


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    dataset = decode_dataset(path.read_bytes())
    logger.info(f"Loaded {len(dataset)} episodes from {path}")
    return dataset


def export_json(path: str | Path, dataset: Dataset) -> Path:
    """Human-inspectable dump (the `--format json` export)."""
    payload = {
        "magic": MAGIC.decode(),
        "version": VERSION,
        "seed": dataset.seed,
        "world": config_to_dict(dataset.config),
        "episodes": [
            {
                "mode": ep.mode,
                "seed": ep.seed,
                "instruction": ep.condition.instruction.tolist(),
                "latent_shape": list(ep.expert_latent.shape),
                "expert_latent": ep.expert_latent.tolist(),
                "expert_actions": ep.expert_actions.tolist(),
            }
            for ep in dataset
        ],
    }
    return atomic_write_text(path, json.dumps(payload))
