# src/samplers/hybrid.py
"""
Euler Hybrid rollouts: ancestral (SDE) transitions for the first `sde_steps`
denoising steps, deterministic Euler Discrete (ODE) steps for the rest.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Protocol, Tuple

import numpy as np

from src.samplers.euler import (
    AncestralCoeffs,
    TransitionGaussian,
    ancestral_coeffs,
    euler_ancestral_step,
    euler_discrete_step,
)
from src.samplers.schedules import NoiseSchedule
from src.utils.errors import InvalidArgumentError


class Denoiser(Protocol):
    def denoise(self, x_sigma: np.ndarray, sigma: float, condition: Any) -> Tuple[np.ndarray, np.ndarray]:
        """Return (x0 prediction, hidden feature)."""
        ...


@dataclass(frozen=True, eq=False)
class StochasticStep:
    step: int                       # 0 is the first (noisiest) denoising step
    sigma_i: float
    sigma_im1: float
    state: np.ndarray               # x_{sigma_i}
    action: np.ndarray              # sampled x_{sigma_{i-1}}
    transition: TransitionGaussian
    coeffs: AncestralCoeffs


@dataclass(frozen=True, eq=False)
class DenoiseTrajectory:
    condition: Any
    initial_noise: np.ndarray
    stochastic: Tuple[StochasticStep, ...]
    hidden: np.ndarray              # captured from the first denoiser call
    states: Tuple[np.ndarray, ...]  # x_{sigma_I}, ..., x_{sigma_0}
    schedule: NoiseSchedule

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def first_action(self) -> np.ndarray:
        return self.stochastic[0].action

    @property
    def first_transition(self) -> TransitionGaussian:
        return self.stochastic[0].transition

    @property
    def stochastic_steps(self) -> int:
        return len(self.stochastic)


def _check_sde_steps(schedule: NoiseSchedule, sde_steps: int) -> None:
    # the step into sigma_0 = 0 has sigma_up = 0 and no density
    if not (0 <= sde_steps <= schedule.steps - 1):
        raise InvalidArgumentError(
            f"sde_steps must lie in [0, {schedule.steps - 1}] for a {schedule.steps}-step schedule, got {sde_steps}"
        )


def replay_deterministic(
    denoiser: Denoiser,
    condition: Any,
    x: np.ndarray,
    schedule: NoiseSchedule,
    start_step: int,
) -> Tuple[List[np.ndarray], Optional[np.ndarray]]:
    """
    Apply the Euler Discrete update from step `start_step` to the end.
    Returns the visited states and the hidden feature of the first call made.
    """
    states = []
    first_hidden = None
    sig = schedule.sigmas
    for k in range(start_step, schedule.steps):
        denoised, h = denoiser.denoise(x, float(sig[k]), condition)
        if first_hidden is None:
            first_hidden = h
        x = euler_discrete_step(x, float(sig[k]), float(sig[k + 1]), denoised)
        states.append(x)
    return states, first_hidden


def rollout_hybrid(
    denoiser: Denoiser,
    condition: Any,
    initial_noise: np.ndarray,
    schedule: NoiseSchedule,
    rng: Optional[np.random.Generator],
    *,
    sde_steps: int = 1,
    ode_substitution: bool = False,
) -> DenoiseTrajectory:
    """
    One trajectory. The hidden feature is taken from the first denoiser call, before
    any noise is injected. With `ode_substitution` the stochastic steps run with
    (sigma_up, sigma_down) := (0, sigma_{i-1}) and zero eps, which reproduces the ODE path.
    """
    _check_sde_steps(schedule, sde_steps)
    if sde_steps > 0 and rng is None and not ode_substitution:
        raise InvalidArgumentError("stochastic steps need an rng stream")

    x = np.asarray(initial_noise, dtype=np.float64)
    states: List[np.ndarray] = [x]
    stochastic: List[StochasticStep] = []
    hidden: Optional[np.ndarray] = None
    for k in range(sde_steps):
        sigma_i, sigma_im1 = float(schedule.sigmas[k]), float(schedule.sigmas[k + 1])
        denoised, h = denoiser.denoise(x, sigma_i, condition)
        if hidden is None:
            hidden = h
        if ode_substitution:
            coeffs = AncestralCoeffs(sigma_up=0.0, sigma_down=sigma_im1)
            eps = np.zeros_like(x)
        else:
            coeffs = ancestral_coeffs(sigma_i, sigma_im1)
            eps = rng.standard_normal(x.shape)
        sample, transition = euler_ancestral_step(x, sigma_i, sigma_im1, denoised, eps, coeffs=coeffs)
        stochastic.append(StochasticStep(
            step=k,
            sigma_i=sigma_i,
            sigma_im1=sigma_im1,
            state=x,
            action=sample,
            transition=transition,
            coeffs=coeffs,
        ))
        x = sample
        states.append(x)

    tail, first_hidden = replay_deterministic(denoiser, condition, x, schedule, sde_steps)
    states.extend(tail)
    if hidden is None:
        hidden = first_hidden
    return DenoiseTrajectory(
        condition=condition,
        initial_noise=np.asarray(initial_noise),
        stochastic=tuple(stochastic),
        hidden=hidden,
        states=tuple(states),
        schedule=schedule,
    )


def rollout_ode(
    denoiser: Denoiser,
    condition: Any,
    initial_noise: np.ndarray,
    schedule: NoiseSchedule,
) -> Tuple[np.ndarray, np.ndarray]:
    """Fully deterministic sampling; returns (x_{sigma_0}, hidden from the first step)."""
    states, hidden = replay_deterministic(
        denoiser, condition, np.asarray(initial_noise, dtype=np.float64), schedule, 0
    )
    return states[-1], hidden


def trajectory_dump(trajectory: DenoiseTrajectory) -> Dict[str, Any]:
    """Debug view: schedule, per-step latent L2 norms, stochastic-step stds."""
    return {
        "schedule": trajectory.schedule.to_list(),
        "latent_norms": [float(np.linalg.norm(s)) for s in trajectory.states],
        "stochastic_steps": trajectory.stochastic_steps,
        "transition_stds": [float(s.transition.std) for s in trajectory.stochastic],
        "hidden_dim": int(np.size(trajectory.hidden)),
    }
