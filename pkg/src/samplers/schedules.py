# src/samplers/schedules.py
from __future__ import annotations
from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np

from src.utils.errors import InvalidArgumentError


@dataclass(frozen=True)
class ScheduleConfig:
    steps: int = 10           # sampling steps I
    sigma_min: float = 0.02
    sigma_max: float = 10.0
    rho: float = 7.0


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """sigmas = [sigma_I, ..., sigma_1, sigma_0 = 0], strictly decreasing."""
    sigmas: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=np.float64)
        if s.ndim != 1 or s.size < 2:
            raise InvalidArgumentError("a schedule needs at least two noise levels")
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise InvalidArgumentError("noise levels must be finite and >= 0")
        if s[-1] != 0.0:
            raise InvalidArgumentError("the last noise level must be exactly 0")
        if np.any(np.diff(s) >= 0):
            raise InvalidArgumentError("noise levels must be strictly decreasing")
        s.setflags(write=False)
        object.__setattr__(self, "sigmas", s)

    @property
    def steps(self) -> int:
        return self.sigmas.size - 1

    @property
    def sigma_max(self) -> float:
        return float(self.sigmas[0])

    def pairs(self) -> Iterator[Tuple[float, float]]:
        """(sigma_i, sigma_{i-1}) for each denoising step, from noisiest to clean."""
        for k in range(self.steps):
            yield float(self.sigmas[k]), float(self.sigmas[k + 1])

    def to_list(self) -> list:
        return [float(x) for x in self.sigmas]


def karras_schedule(steps: int, sigma_min: float, sigma_max: float, rho: float = 7.0) -> NoiseSchedule:
    """
    EDM schedule: `steps` levels interpolated linearly in sigma^(1/rho) from
    sigma_max down to sigma_min, then 0 appended.
    """
    if steps < 1:
        raise InvalidArgumentError(f"steps must be >= 1, got {steps}")
    if not (0.0 < sigma_min < sigma_max):
        raise InvalidArgumentError(f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")
    if rho <= 0:
        raise InvalidArgumentError(f"rho must be > 0, got {rho}")
    ramp = np.linspace(0.0, 1.0, steps)
    min_inv_rho = sigma_min ** (1.0 / rho)
    max_inv_rho = sigma_max ** (1.0 / rho)
    sigmas = (max_inv_rho + ramp * (min_inv_rho - max_inv_rho)) ** rho
    sigmas[0] = sigma_max
    return NoiseSchedule(np.append(sigmas, 0.0))


def schedule_from_config(config: ScheduleConfig) -> NoiseSchedule:
    return karras_schedule(config.steps, config.sigma_min, config.sigma_max, config.rho)
