# src/vpm/train.py
"""
Supervised pretraining of the denoiser and hidden-feature extraction.

    L(theta) = E_{x0, c, sigma, eps} mean((D(x0 + sigma * eps, sigma, c) - x0)^2)

with sigma log-uniform over [sigma_min, sigma_max].
"""
from __future__ import annotations
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple
import math
import time

import numpy as np
from tqdm import tqdm

from src.diffcore import tensor as T
from src.diffcore.checkpoint import load_checkpoint, save_checkpoint
from src.diffcore.gradcheck import grad_check
from src.diffcore.optim import SFT_LR, AdamConfig, AdamState, adam_step
from src.diffcore.tensor import Tape, Var
from src.samplers.schedules import NoiseSchedule
from src.synthdyn.world import Condition, Dataset, Episode
from src.utils.errors import GradientCheckError, InvalidArgumentError, NonFiniteError
from src.utils.helpers import rng_stream
from src.utils.logger import get_logger
from src.vpm.denoiser import DenoiserConfig, DenoiserNet, GraphDenoiser, stack_conditions

logger = get_logger(__name__)

VPM_COMPONENT = "vpm"


@dataclass(frozen=True)
class SftConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = SFT_LR
    sigma_min: float = 0.02
    sigma_max: float = 10.0
    eval_every: int = 100
    eval_batch: int = 32
    grad_check_eps: float = 1e-5
    grad_check_tol: float = 1e-4
    grad_check_batch: int = 2
    progress: bool = False

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.eval_batch < 1:
            raise InvalidArgumentError("steps must be >= 0 and batch sizes >= 1")
        if not (0.0 < self.sigma_min < self.sigma_max):
            raise InvalidArgumentError(f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}")
        if self.eval_every < 1:
            raise InvalidArgumentError("eval_every must be >= 1")


@dataclass(frozen=True, eq=False)
class SftBatch:
    x0: np.ndarray                      # (B, F, C, h, w)
    conditions: Tuple[Condition, ...]
    sigma: np.ndarray                   # (B,)
    eps: np.ndarray                     # (B, F, C, h, w), i.i.d. N(0, 1)

    def __post_init__(self):
        if len(self.conditions) == 0:
            raise InvalidArgumentError("empty SFT batch")
        B = len(self.conditions)
        if self.x0.shape[0] != B or self.sigma.shape != (B,) or self.eps.shape != self.x0.shape:
            raise InvalidArgumentError("SFT batch fields disagree on batch size or shape")

    def __len__(self) -> int:
        return len(self.conditions)

    @property
    def x_sigma(self) -> np.ndarray:
        return self.x0 + self.sigma[:, None, None, None, None] * self.eps


@dataclass
class SftResult:
    net: DenoiserNet
    rows: List[Dict[str, float]] = field(default_factory=list)
    initial_grad_error: float = 0.0


def sample_sigmas(rng: np.random.Generator, n: int, sigma_min: float, sigma_max: float) -> np.ndarray:
    """Log-uniform draws over [sigma_min, sigma_max]."""
    return np.exp(rng.uniform(math.log(sigma_min), math.log(sigma_max), size=n))


def make_sft_batch(
    episodes: Sequence[Episode],
    rng: np.random.Generator,
    batch_size: int,
    sigma_min: float,
    sigma_max: float,
) -> SftBatch:
    if len(episodes) == 0:
        raise InvalidArgumentError("cannot sample an SFT batch from an empty dataset")
    idx = rng.integers(0, len(episodes), size=batch_size)
    x0 = np.stack([np.asarray(episodes[i].expert_latent, dtype=np.float64) for i in idx])
    sigma = sample_sigmas(rng, batch_size, sigma_min, sigma_max)
    eps = rng.standard_normal(x0.shape)
    return SftBatch(x0=x0, conditions=tuple(episodes[i].condition for i in idx), sigma=sigma, eps=eps)


def sft_loss_graph(net: GraphDenoiser, batch: SftBatch):
    """Graph `(tape, pv) -> scalar loss` for `tensor.forward` and `grad_check`."""
    obs, instr = stack_conditions(batch.conditions)
    x_sigma = batch.x_sigma

    def graph(tape: Tape, pv: Dict[str, Var]) -> Var:
        x0_pred, _ = net.graph(tape, pv, x_sigma, batch.sigma, obs, instr)
        return T.mean(T.square(x0_pred - batch.x0))

    return graph


def _predict(net: Any, batch: SftBatch) -> np.ndarray:
    if isinstance(net, GraphDenoiser):
        return net.denoise_batch(batch.x_sigma, batch.sigma, batch.conditions)[0]
    xs = batch.x_sigma
    return np.stack([net.denoise(xs[b], float(batch.sigma[b]), batch.conditions[b])[0] for b in range(len(batch))])


def sft_loss(net: Any, batch: SftBatch) -> float:
    """Mean over elements and batch of (D(x_sigma, sigma, c) - x0)^2."""
    return float(np.mean(np.square(_predict(net, batch) - batch.x0)))


def train_sft(
    train: Dataset,
    config: SftConfig,
    *,
    eval_set: Optional[Dataset] = None,
    net: Optional[DenoiserNet] = None,
    denoiser_config: Optional[DenoiserConfig] = None,
    master_seed: int = 0,
) -> SftResult:
    """
    Minibatch Adam on `sft_loss`. Eval loss is measured on one fixed batch drawn
    from `eval_set` (or `train`) at step 0, every `eval_every` steps, and at the end.
    """
    if len(train) == 0:
        raise InvalidArgumentError("train_sft needs a non-empty dataset")
    world = train.config
    if net is None:
        net = DenoiserNet(
            denoiser_config or DenoiserConfig(),
            world.latent_shape,
            world.num_modes,
            rng=rng_stream(master_seed, "init", 0),
        )

    episodes = train.episodes
    eval_batch = make_sft_batch(
        (eval_set or train).episodes, rng_stream(master_seed, "eval", 0),
        config.eval_batch, config.sigma_min, config.sigma_max,
    )

    probe = make_sft_batch(episodes, rng_stream(master_seed, "sft", 1), config.grad_check_batch,
                           config.sigma_min, config.sigma_max)
    err = grad_check(sft_loss_graph(net, probe), net.params, config.grad_check_eps)
    if err > config.grad_check_tol:
        raise GradientCheckError(f"sft_loss gradient check failed at init: rel err {err:.3e} > {config.grad_check_tol:.0e}")
    logger.info(f"SFT init grad_check rel err {err:.3e}")

    state = AdamState.for_params(net.params, AdamConfig(lr=config.lr))
    rng = rng_stream(master_seed, "sft", 0)
    start = time.time()
    rows: List[Dict[str, float]] = [{
        "step": 0,
        "train_loss": sft_loss(net, probe),
        "eval_loss": sft_loss(net, eval_batch),
        "wallclock_s": 0.0,
    }]
    logger.info(f"Starting SFT: {config.steps} steps, batch {config.batch_size}, lr {config.lr:g}, "
                f"{net.params.size()} params, eval loss {rows[0]['eval_loss']:.5f}")

    for step in tqdm(range(1, config.steps + 1), desc="sft", disable=not config.progress):
        batch = make_sft_batch(episodes, rng, config.batch_size, config.sigma_min, config.sigma_max)
        value, tape = T.forward(sft_loss_graph(net, batch), net.params)
        loss = float(value)
        if not math.isfinite(loss):
            raise NonFiniteError(f"sft loss is {loss} at step {step} (sigmas {np.round(batch.sigma, 4).tolist()})")
        tape.backward()
        adam_step(net.params, state)

        if step % config.eval_every == 0 or step == config.steps:
            row = {
                "step": step,
                "train_loss": loss,
                "eval_loss": sft_loss(net, eval_batch),
                "wallclock_s": time.time() - start,
            }
            rows.append(row)
            logger.info(f"SFT step {step}: train {loss:.5f} eval {row['eval_loss']:.5f}")

    logger.info(f"SFT completed in {time.time() - start:.2f}s")
    return SftResult(net=net, rows=rows, initial_grad_error=err)


def extract_representation(
    net: GraphDenoiser,
    condition: Condition,
    initial_noise: np.ndarray,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """Hidden feature of the first denoising step, the call `rollout_ode` makes first."""
    _, hidden = net.denoise(np.asarray(initial_noise, dtype=np.float64), float(schedule.sigmas[0]), condition)
    return hidden


def save_vpm(path: str | Path, net: DenoiserNet, meta: Optional[Dict[str, Any]] = None) -> Path:
    return save_checkpoint(path, net.params, VPM_COMPONENT, {"architecture": net.architecture(), **(meta or {})})


def load_vpm(path: str | Path) -> Tuple[DenoiserNet, Dict[str, Any]]:
    ckpt = load_checkpoint(path, VPM_COMPONENT)
    return DenoiserNet.from_architecture(ckpt.meta["architecture"], ckpt.params), ckpt.meta
