# src/diffcore/optim.py
from __future__ import annotations
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from src.diffcore.params import ParamSet
from src.utils.errors import InvalidArgumentError, NonFiniteError
from src.utils.logger import get_logger

logger = get_logger(__name__)

SFT_LR = 1e-4        # full-scale fine-tuning learning rate
POSTTRAIN_LR = 1e-6  # full-scale post-training learning rate


@dataclass(frozen=True)
class AdamConfig:
    lr: float = SFT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0:
            raise InvalidArgumentError(f"lr must be >= 0, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InvalidArgumentError("beta1 and beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise InvalidArgumentError("eps must be > 0")


@dataclass
class AdamState:
    """First/second moments per parameter, kept in float64."""
    config: AdamConfig
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: ParamSet, config: AdamConfig) -> "AdamState":
        return cls(
            config=config,
            m={n: np.zeros(s, dtype=np.float64) for n, s in params.shapes().items()},
            v={n: np.zeros(s, dtype=np.float64) for n, s in params.shapes().items()},
        )


def adam_step(params: ParamSet, state: AdamState) -> ParamSet:
    """
    One bias-corrected Adam descent step on `params.grads`, then zero the grads.

    Raises NonFiniteError naming the offending parameters if any grad is NaN/inf;
    in that case nothing is updated.
    """
    bad = [name for name, g in params.grads.items() if not np.all(np.isfinite(g))]
    if bad:
        logger.error(f"Adam step {state.step + 1} aborted: non-finite gradients in {bad}")
        raise NonFiniteError(f"non-finite gradients in {bad} at Adam step {state.step + 1}")

    cfg = state.config
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name in params.names():
        g = params.grads[name].astype(np.float64)
        m = state.m.setdefault(name, np.zeros_like(g))
        v = state.v.setdefault(name, np.zeros_like(g))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        params.values[name][...] = params.values[name].astype(np.float64) - update
    params.version += 1
    params.zero_grad()
    return params
