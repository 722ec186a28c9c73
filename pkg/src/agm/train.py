# src/agm/train.py
"""AGM training on hidden features of a frozen video prediction model, and action evaluation."""
from __future__ import annotations
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple
import math
import time

import numpy as np
from tqdm import tqdm

from src.agm.policy import (
    ActionBatch,
    ActionDenoiser,
    ActionHeadConfig,
    ActionNoiseSchedule,
    action_loss,
    action_loss_graph,
    ddim_sample,
)
from src.diffcore import tensor as T
from src.diffcore.checkpoint import load_checkpoint, save_checkpoint
from src.diffcore.gradcheck import grad_check
from src.diffcore.optim import SFT_LR, AdamConfig, AdamState, adam_step
from src.metrics.evaluate import eval_noise
from src.samplers.schedules import NoiseSchedule
from src.synthdyn.world import Dataset, Episode
from src.utils.errors import GradientCheckError, InvalidArgumentError, NonFiniteError
from src.utils.helpers import rng_stream
from src.utils.logger import get_logger
from src.vpm.train import extract_representation

logger = get_logger(__name__)

AGM_COMPONENT = "agm"


@dataclass(frozen=True)
class AgmConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = SFT_LR
    hidden: int = 128
    step_embed_dim: int = 16
    diffusion_steps: int = 20
    beta_start: float = 0.01
    beta_end: float = 0.5
    ddim_steps: int = 10
    action_scale: float = 20.0
    grad_check_eps: float = 1e-5
    grad_check_tol: float = 1e-4
    progress: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidArgumentError("epochs must be >= 0 and batch_size >= 1")
        if self.action_scale <= 0:
            raise InvalidArgumentError("action_scale must be > 0")
        if not (1 <= self.ddim_steps <= self.diffusion_steps):
            raise InvalidArgumentError("ddim_steps must lie in [1, diffusion_steps]")

    def schedule(self) -> ActionNoiseSchedule:
        return ActionNoiseSchedule.linear(self.diffusion_steps, self.beta_start, self.beta_end)


@dataclass
class AgmModel:
    """Action head plus what is needed to sample from it."""
    net: ActionDenoiser
    schedule: ActionNoiseSchedule
    ddim_steps: int
    action_scale: float
    horizon: int
    dim: int

    @property
    def action_size(self) -> int:
        return self.horizon * self.dim

    def sample(self, hidden: np.ndarray, instruction: np.ndarray, eps: np.ndarray) -> np.ndarray:
        """(horizon, dim) actions in arena units."""
        a = ddim_sample(self.net, hidden, instruction, self.ddim_steps, eps, self.schedule)
        return (a / self.action_scale).reshape(self.horizon, self.dim)


@dataclass
class AgmResult:
    model: AgmModel
    rows: List[Dict[str, float]] = field(default_factory=list)


def ddim_noise(master_seed: int, index: int, size: int) -> np.ndarray:
    """Frozen DDIM start noise for eval episode `index`."""
    return rng_stream(master_seed, "ddim", index).standard_normal(size)


def episode_features(
    vpm: Any,
    episodes: Sequence[Episode],
    schedule: NoiseSchedule,
    *,
    master_seed: int = 0,
    stream: str = "eval",
) -> np.ndarray:
    """Hidden features (N, d_v), one per episode, from fixed initial noise."""
    feats = []
    for i, ep in enumerate(episodes):
        shape = np.shape(ep.expert_latent)
        if stream == "eval":
            noise = eval_noise(master_seed, i, shape, schedule.sigma_max)
        else:
            noise = rng_stream(master_seed, stream, 0, i).standard_normal(shape) * schedule.sigma_max
        feats.append(np.asarray(extract_representation(vpm, ep.condition, noise, schedule), dtype=np.float64))
    return np.stack(feats)


def train_agm(
    train: Dataset,
    vpm: Any,
    vpm_schedule: NoiseSchedule,
    config: AgmConfig,
    *,
    eval_set: Optional[Dataset] = None,
    master_seed: int = 0,
) -> AgmResult:
    """Adam on action_loss over `epochs` passes; eval action MSE logged after each epoch."""
    if len(train) == 0:
        raise InvalidArgumentError("train_agm needs a non-empty dataset")
    world = train.config
    schedule = config.schedule()
    feats = episode_features(vpm, train.episodes, vpm_schedule, master_seed=master_seed, stream="agm")
    a0 = np.stack([np.asarray(ep.expert_actions, dtype=np.float64).reshape(-1) for ep in train]) * config.action_scale
    instr = np.stack([np.asarray(ep.condition.instruction, dtype=np.float64) for ep in train])

    net = ActionDenoiser(
        ActionHeadConfig(config.hidden, config.step_embed_dim),
        action_dim=a0.shape[1],
        hidden_dim=feats.shape[1],
        num_modes=world.num_modes,
        K=schedule.K,
        rng=rng_stream(master_seed, "init", 1),
    )
    model = AgmModel(net, schedule, config.ddim_steps, config.action_scale, world.action_horizon, world.action_dim)
    rng = rng_stream(master_seed, "agm", 1)

    def draw(idx: np.ndarray) -> ActionBatch:
        return ActionBatch(
            a0=a0[idx], hidden=feats[idx], instruction=instr[idx],
            ks=rng.integers(1, schedule.K + 1, size=len(idx)), eps=rng.standard_normal((len(idx), a0.shape[1])),
        )

    probe = draw(np.arange(min(2, len(train))))
    err = grad_check(action_loss_graph(net, probe, schedule), net.params, config.grad_check_eps)
    if err > config.grad_check_tol:
        raise GradientCheckError(f"action_loss gradient check failed at init: rel err {err:.3e}")

    evals = eval_set if eval_set is not None and len(eval_set) else None
    state = AdamState.for_params(net.params, AdamConfig(lr=config.lr))
    start = time.time()
    rows: List[Dict[str, float]] = []
    if evals is not None:
        mse, _ = eval_actions(model, vpm, evals, vpm_schedule, master_seed=master_seed)
        rows.append({"epoch": 0, "train_loss": action_loss(net, probe, schedule), "eval_action_mse": mse, "wallclock_s": 0.0})
    logger.info(f"Starting AGM training: {config.epochs} epochs over {len(train)} episodes, d_v={feats.shape[1]}")

    n_batches = math.ceil(len(train) / config.batch_size)
    for epoch in tqdm(range(1, config.epochs + 1), desc="agm", disable=not config.progress):
        order = rng.permutation(len(train))
        losses = []
        for b in range(n_batches):
            batch = draw(order[b * config.batch_size:(b + 1) * config.batch_size])
            value, tape = T.forward(action_loss_graph(net, batch, schedule), net.params)
            loss = float(value)
            if not math.isfinite(loss):
                raise NonFiniteError(f"action loss is {loss} at epoch {epoch}, batch {b}")
            tape.backward()
            adam_step(net.params, state)
            losses.append(loss)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "eval_action_mse": None, "wallclock_s": time.time() - start}
        if evals is not None:
            row["eval_action_mse"], _ = eval_actions(model, vpm, evals, vpm_schedule, master_seed=master_seed)
        rows.append(row)
        logger.info(f"AGM epoch {epoch}: train {row['train_loss']:.5f} eval mse {row['eval_action_mse']}")

    logger.info(f"AGM training completed in {time.time() - start:.2f}s")
    return AgmResult(model=model, rows=rows)


def eval_actions(
    agm: AgmModel,
    vpm: Any,
    eval_set: Dataset | Sequence[Episode],
    vpm_schedule: NoiseSchedule,
    *,
    master_seed: int = 0,
) -> Tuple[float, Dict[int, float]]:
    """Mean squared error of DDIM actions vs expert actions, overall and per instruction mode."""
    episodes = list(eval_set)
    if not episodes:
        raise InvalidArgumentError("eval_actions needs at least one episode")
    feats = episode_features(vpm, episodes, vpm_schedule, master_seed=master_seed)
    per_mode: Dict[int, List[float]] = {}
    errs = []
    for i, ep in enumerate(episodes):
        pred = agm.sample(feats[i], ep.condition.instruction, ddim_noise(master_seed, i, agm.action_size))
        err = float(np.mean(np.square(pred - np.asarray(ep.expert_actions, dtype=np.float64))))
        errs.append(err)
        per_mode.setdefault(ep.mode, []).append(err)
    return float(np.mean(errs)), {m: float(np.mean(v)) for m, v in sorted(per_mode.items())}


def save_agm(path: str | Path, model: AgmModel, meta: Optional[Dict[str, Any]] = None) -> Path:
    payload = {
        "architecture": model.net.architecture(),
        "beta_bar": model.schedule.to_list(),
        "ddim_steps": model.ddim_steps,
        "action_scale": model.action_scale,
        "horizon": model.horizon,
        "dim": model.dim,
        **(meta or {}),
    }
    return save_checkpoint(path, model.net.params, AGM_COMPONENT, payload)


def load_agm(path: str | Path) -> Tuple[AgmModel, Dict[str, Any]]:
    ckpt = load_checkpoint(path, AGM_COMPONENT)
    m = ckpt.meta
    net = ActionDenoiser.from_architecture(m["architecture"], ckpt.params)
    model = AgmModel(net, ActionNoiseSchedule(np.array(m["beta_bar"])), int(m["ddim_steps"]),
                     float(m["action_scale"]), int(m["horizon"]), int(m["dim"]))
    return model, m
