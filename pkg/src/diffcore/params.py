# src/diffcore/params.py
from __future__ import annotations
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from src.utils.errors import InvalidArgumentError


@dataclass
class ParamEntry:
    name: str
    shape: Tuple[int, ...]
    values: np.ndarray
    grads: np.ndarray


class ParamSet:
    """
    Named parameter arrays with same-shape gradient slots.

    `version` increments whenever values change in place (optimizer step, load),
    which lets tapes detect that they were recorded against older values.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.values: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.version = 0

    # ---------- construction ----------
    def add(self, name: str, values: np.ndarray) -> np.ndarray:
        if name in self.values:
            raise InvalidArgumentError(f"duplicate parameter name: {name}")
        arr = np.array(values, dtype=self.dtype)
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], dtype=np.float32) -> "ParamSet":
        ps = cls(dtype=dtype)
        for name, arr in arrays.items():
            ps.add(name, arr)
        return ps

    # ---------- access ----------
    def names(self) -> List[str]:
        return list(self.values.keys())

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self) -> Iterator[ParamEntry]:
        for name, v in self.values.items():
            yield ParamEntry(name, v.shape, v, self.grads[name])

    def __len__(self) -> int:
        return len(self.values)

    def size(self) -> int:
        return int(sum(v.size for v in self.values.values()))

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {k: tuple(v.shape) for k, v in self.values.items()}

    # ---------- gradients ----------
    def accumulate(self, name: str, grad: np.ndarray) -> None:
        slot = self.grads[name]
        if grad.shape != slot.shape:
            raise InvalidArgumentError(f"grad for {name}: shape {grad.shape} != {slot.shape}")
        slot += grad.astype(slot.dtype, copy=False)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(np.square(g, dtype=np.float64)) for g in self.grads.values())))

    # ---------- value updates ----------
    def assign(self, name: str, values: np.ndarray) -> None:
        slot = self.values[name]
        if np.shape(values) != slot.shape:
            raise InvalidArgumentError(f"assign {name}: shape {np.shape(values)} != {slot.shape}")
        slot[...] = values
        self.version += 1

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self.values) ^ set(state)
        if missing:
            raise InvalidArgumentError(f"parameter names differ: {sorted(missing)}")
        for name, arr in state.items():
            self.assign(name, arr)

    def state(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.values.items()}

    def copy(self, dtype: Optional[np.dtype] = None) -> "ParamSet":
        """Deep copy (values only; grads start at zero). Used for the frozen old-policy snapshot."""
        return ParamSet.from_arrays(self.values, dtype=dtype or self.dtype)

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel().astype(np.float64) for v in self.values.values()]) if self.values else np.zeros(0)
