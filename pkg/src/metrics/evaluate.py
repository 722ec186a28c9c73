# src/metrics/evaluate.py
from __future__ import annotations
from dataclasses import dataclass
from typing import Any, Sequence, Tuple

import numpy as np

from src.samplers.hybrid import rollout_ode
from src.samplers.schedules import NoiseSchedule
from src.synthdyn.world import Episode
from src.utils.errors import InvalidArgumentError
from src.utils.helpers import rng_stream
from src.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class EvalConfig:
    eval_episodes: int = 32
    jacobian_mode: str = "reverse"     # "reverse" | "fd"
    fd_eta: float = 1e-4
    er_episodes: int = 16

    def __post_init__(self):
        if self.jacobian_mode not in ("reverse", "fd"):
            raise InvalidArgumentError(f"jacobian_mode must be 'reverse' or 'fd', got {self.jacobian_mode!r}")
        if self.fd_eta <= 0:
            raise InvalidArgumentError(f"fd_eta must be > 0, got {self.fd_eta}")
        if self.eval_episodes < 1 or self.er_episodes < 1:
            raise InvalidArgumentError("episode counts must be >= 1")


def eval_noise(master_seed: int, index: int, shape: Tuple[int, ...], sigma_max: float) -> np.ndarray:
    """Fixed initial noise x_{sigma_I} for eval episode `index`."""
    return rng_stream(master_seed, "eval", 1, index).standard_normal(shape) * sigma_max


def l1_eval(vpm: Any, episodes: Sequence[Episode], schedule: NoiseSchedule, *, master_seed: int = 0) -> float:
    """Mean over episodes of mean|rollout_ode(...) - x0|, with per-episode fixed noise."""
    episodes = list(episodes)
    if not episodes:
        raise InvalidArgumentError("l1_eval needs at least one episode")
    errs = []
    for i, ep in enumerate(episodes):
        x0 = np.asarray(ep.expert_latent, dtype=np.float64)
        pred, _ = rollout_ode(vpm, ep.condition, eval_noise(master_seed, i, x0.shape, schedule.sigma_max), schedule)
        errs.append(float(np.mean(np.abs(pred - x0))))
    value = float(np.mean(errs))
    logger.debug(f"l1_eval over {len(errs)} episodes: {value:.6f}")
    return value
