# src/samplers/euler.py
"""
Single-step denoising updates in the sigma (EDM) parameterization.

The update helpers are written with plain arithmetic so they accept numpy arrays
and tape `Var`s alike; the policy-gradient code reuses them to rebuild the
transition mean under trainable parameters with bit-identical arithmetic.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Any, Optional, Tuple
import math

import numpy as np

from src.utils.errors import DegenerateDensityError, InvalidArgumentError


@dataclass(frozen=True)
class AncestralCoeffs:
    sigma_up: float
    sigma_down: float


@dataclass(frozen=True, eq=False)
class TransitionGaussian:
    """N(mean, std^2 I): the explicit density of one ancestral step."""
    mean: Any
    std: float


def _shape(a: Any) -> Tuple[int, ...]:
    return tuple(a.shape) if hasattr(a, "shape") else np.shape(a)


def _check_shapes(a: Any, b: Any, what: str) -> None:
    if _shape(a) != _shape(b):
        raise InvalidArgumentError(f"{what}: shape {_shape(a)} != {_shape(b)}")


def _check_sigmas(sigma_i: float, sigma_im1: float) -> None:
    if sigma_i == 0:
        raise InvalidArgumentError("sigma_i must be > 0 (the update divides by it)")
    if not (sigma_i > sigma_im1 >= 0):
        raise InvalidArgumentError(f"need sigma_i > sigma_im1 >= 0, got {sigma_i}, {sigma_im1}")


def _euler_update(x: Any, sigma_i: float, sigma_target: float, denoised: Any) -> Any:
    # one Euler step of the probability-flow ODE from sigma_i to sigma_target
    return x + (sigma_target - sigma_i) * (x - denoised) / sigma_i


def add_noise(x0: np.ndarray, sigma: float, eps: np.ndarray) -> np.ndarray:
    """x_sigma = x0 + sigma * eps."""
    _check_shapes(x0, eps, "add_noise")
    return x0 + sigma * eps


def euler_discrete_step(x_sigma_i: Any, sigma_i: float, sigma_im1: float, denoised: Any) -> Any:
    _check_sigmas(sigma_i, sigma_im1)
    _check_shapes(x_sigma_i, denoised, "euler_discrete_step")
    return _euler_update(x_sigma_i, sigma_i, sigma_im1, denoised)


def ancestral_coeffs(sigma_i: float, sigma_im1: float) -> AncestralCoeffs:
    """Split sigma_{i-1} into injected noise (up) and the deterministic target level (down)."""
    _check_sigmas(sigma_i, sigma_im1)
    sigma_up = math.sqrt(sigma_im1 ** 2 * (sigma_i ** 2 - sigma_im1 ** 2) / sigma_i ** 2)
    sigma_up = min(sigma_up, sigma_im1)
    sigma_down = math.sqrt(max(sigma_im1 ** 2 - sigma_up ** 2, 0.0))
    return AncestralCoeffs(sigma_up=sigma_up, sigma_down=sigma_down)


def ancestral_mean(x_sigma_i: Any, sigma_i: float, denoised: Any, coeffs: AncestralCoeffs) -> Any:
    """Deterministic component x_det of the ancestral transition."""
    return _euler_update(x_sigma_i, sigma_i, coeffs.sigma_down, denoised)


def euler_ancestral_step(
    x_sigma_i: np.ndarray,
    sigma_i: float,
    sigma_im1: float,
    denoised: np.ndarray,
    eps: np.ndarray,
    coeffs: Optional[AncestralCoeffs] = None,
) -> Tuple[np.ndarray, TransitionGaussian]:
    """
    sample = x_det + sigma_up * eps. `coeffs` overrides the (sigma_up, sigma_down)
    split; (0, sigma_{i-1}) turns the step into `euler_discrete_step`.
    """
    _check_sigmas(sigma_i, sigma_im1)
    _check_shapes(x_sigma_i, denoised, "euler_ancestral_step")
    _check_shapes(x_sigma_i, eps, "euler_ancestral_step")
    c = coeffs if coeffs is not None else ancestral_coeffs(sigma_i, sigma_im1)
    mean = ancestral_mean(x_sigma_i, sigma_i, denoised, c)
    sample = mean + c.sigma_up * eps
    return sample, TransitionGaussian(mean=mean, std=c.sigma_up)


def gaussian_log_prob(x: np.ndarray, transition: TransitionGaussian) -> float:
    """log N(x; mean, std^2 I) summed over all elements."""
    std = transition.std
    if std <= 0:
        raise DegenerateDensityError("log-density of a deterministic transition (std == 0)")
    _check_shapes(x, transition.mean, "gaussian_log_prob")
    d = np.size(x)
    return float(-0.5 * d * math.log(2.0 * math.pi * std * std) - np.sum(np.square(x - transition.mean)) / (2.0 * std * std))
