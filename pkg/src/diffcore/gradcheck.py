# src/diffcore/gradcheck.py
from __future__ import annotations
from typing import Any, Sequence, Tuple

import numpy as np

from src.diffcore.params import ParamSet
from src.diffcore.tensor import Graph, forward
from src.utils.errors import InvalidArgumentError
from src.utils.logger import get_logger

logger = get_logger(__name__)


def _scalar(value: Any) -> float:
    arr = np.asarray(value[0] if isinstance(value, tuple) else value)
    if arr.size != 1:
        raise InvalidArgumentError(f"loss must be scalar, got shape {arr.shape}")
    return float(arr.reshape(()))


def grad_check(
    loss_fn: Graph,
    params: ParamSet,
    epsilon: float = 1e-5,
    *,
    inputs: Sequence[Any] = (),
    num_coords: int = 24,
    seed: int = 0,
    min_relative_grad: float = 1e-3,
) -> float:
    """
    Compare reverse-mode gradients of `loss_fn(tape, pv, *inputs)` with central differences.

    Works on a float64 copy of `params`, so the caller's values and grads are untouched.
    Returns max over sampled coordinates of |analytic - fd| / max(|analytic| + |fd|, floor),
    floor = `min_relative_grad` times the largest analytic gradient. `num_coords`
    coordinates come from those at or above the floor; another `num_coords // 4`
    (at least one) from those below it, so a parameter whose gradient path is
    dropped (analytic 0, fd not) scores an error near 1.
    """
    if not (1e-6 <= epsilon <= 1e-3):
        raise InvalidArgumentError(f"epsilon must lie in [1e-6, 1e-3], got {epsilon}")

    work = params.copy(dtype=np.float64)
    value, tape = forward(loss_fn, work, *inputs)
    _scalar(value)
    tape.backward()

    coords: list[Tuple[str, int]] = [(name, i) for name in work.names() for i in range(work.values[name].size)]
    if not coords:
        return 0.0
    magnitudes = np.concatenate([np.abs(work.grads[name]).reshape(-1) for name in work.names()])
    floor = max(min_relative_grad * float(magnitudes.max()), 1e-12)
    large = np.flatnonzero(magnitudes >= floor)
    small = np.flatnonzero(magnitudes < floor)
    rng = np.random.default_rng(seed)
    picks = np.concatenate([
        rng.choice(large, size=min(num_coords, large.size), replace=False),
        rng.choice(small, size=min(max(1, num_coords // 4), small.size), replace=False),
    ]).astype(int)

    worst = 0.0
    for k in sorted(picks):
        name, i = coords[k]
        flat = work.values[name].reshape(-1)
        original = flat[i]
        flat[i] = original + epsilon
        plus = _scalar(forward(loss_fn, work, *inputs, record=False)[0])
        flat[i] = original - epsilon
        minus = _scalar(forward(loss_fn, work, *inputs, record=False)[0])
        flat[i] = original

        fd = (plus - minus) / (2.0 * epsilon)
        analytic = float(work.grads[name].reshape(-1)[i])
        err = abs(analytic - fd) / max(abs(analytic) + abs(fd), floor)
        worst = max(worst, err)

    logger.debug(f"grad_check over {len(picks)} coords: max rel err {worst:.3e}")
    return worst
