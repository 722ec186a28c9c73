# src/rl/rewards.py
"""Verifiable rewards comparing a predicted latent rollout with the expert latent."""
from __future__ import annotations
from dataclasses import dataclass
from functools import partial
from typing import Callable

import numpy as np

from src.synthdyn.world import decode_latents
from src.utils.errors import InvalidArgumentError

COSINE_EPS = 1e-12
RewardFn = Callable[[np.ndarray, np.ndarray], float]


@dataclass(frozen=True)
class RewardWeights:
    lambda_l1: float = 1.0
    lambda_cos: float = 1.0

    def __post_init__(self):
        if self.lambda_l1 < 0 or self.lambda_cos < 0:
            raise InvalidArgumentError("reward weights must be >= 0")
        if self.lambda_l1 == 0 and self.lambda_cos == 0:
            raise InvalidArgumentError("reward weights cannot both be zero")


def latent_reward(x_pred: np.ndarray, x0: np.ndarray, weights: RewardWeights = RewardWeights()) -> float:
    """r = -l1 * mean|x_pred - x0| + cos * <x_pred, x0> / (|x_pred| |x0| + 1e-12)."""
    x_pred = np.asarray(x_pred, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if x_pred.shape != x0.shape:
        raise InvalidArgumentError(f"reward shapes differ: {x_pred.shape} vs {x0.shape}")
    ref_norm = np.linalg.norm(x0.ravel())
    if ref_norm == 0:
        raise InvalidArgumentError("reference latent is all zeros")
    l1 = float(np.mean(np.abs(x_pred - x0)))
    cosine = float(np.dot(x_pred.ravel(), x0.ravel()) / (np.linalg.norm(x_pred.ravel()) * ref_norm + COSINE_EPS))
    return -weights.lambda_l1 * l1 + weights.lambda_cos * cosine


def pixel_reward(
    x_pred: np.ndarray,
    x0: np.ndarray,
    decoder: Callable[[np.ndarray], np.ndarray] = decode_latents,
    weights: RewardWeights = RewardWeights(),
) -> float:
    """The latent reward formula applied to decoded frames."""
    return latent_reward(decoder(np.asarray(x_pred)), decoder(np.asarray(x0)), weights)


def make_reward_fn(kind: str, weights: RewardWeights, pool: int = 2) -> RewardFn:
    if kind == "latent":
        return partial(latent_reward, weights=weights)
    if kind == "pixel":
        return partial(pixel_reward, decoder=partial(decode_latents, pool=pool), weights=weights)
    raise InvalidArgumentError(f"unknown reward kind {kind!r} (expected 'latent' or 'pixel')")
