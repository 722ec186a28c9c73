# src/rl/trainer.py
"""Rollout collection, one policy-gradient update, and the post-training loop."""
from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple
import math
import time

import numpy as np
from tqdm import tqdm

from src.diffcore import tensor as T
from src.diffcore.optim import POSTTRAIN_LR, AdamConfig, AdamState, adam_step
from src.metrics.evaluate import l1_eval
from src.rl.grpo import (
    ClipConfig,
    RewardBaseline,
    RolloutGroup,
    clipped_objective_graph,
    group_advantages,
    objective_stats,
    with_old_log_probs,
)
from src.rl.rewards import RewardFn, RewardWeights, make_reward_fn
from src.samplers.hybrid import rollout_hybrid
from src.samplers.schedules import NoiseSchedule
from src.synthdyn.world import Condition, Dataset
from src.utils.errors import InvalidArgumentError, NonFiniteError
from src.utils.helpers import rng_stream
from src.utils.logger import get_logger
from src.vpm.denoiser import DenoiserNet

logger = get_logger(__name__)

ALGORITHMS = ("grpo", "ddpo")
REWARDS = ("latent", "pixel")


@dataclass(frozen=True)
class PosttrainConfig:
    steps: int = 300                  # desk budget; full-scale runs use ~1.5k
    group_size: int = 8
    conditions_per_step: int = 4
    lr: float = POSTTRAIN_LR
    clip_epsilon: float = 0.2
    lambda_l1: float = 1.0
    lambda_cos: float = 1.0
    reward: str = "latent"
    algorithm: str = "grpo"
    sde_steps: int = 1
    refresh_every: int = 1
    eval_every: int = 50
    eval_episodes: int = 32
    baseline_decay: float = 0.99
    threads: int = 1
    progress: bool = False

    def __post_init__(self):
        if self.group_size < 2:
            raise InvalidArgumentError(f"group_size must be >= 2, got {self.group_size}")
        if self.steps < 0 or self.conditions_per_step < 1 or self.refresh_every < 1 or self.eval_every < 1:
            raise InvalidArgumentError("steps >= 0; conditions_per_step, refresh_every, eval_every >= 1")
        if self.algorithm not in ALGORITHMS:
            raise InvalidArgumentError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.reward not in REWARDS:
            raise InvalidArgumentError(f"reward must be one of {REWARDS}, got {self.reward!r}")
        if self.sde_steps < 1:
            raise InvalidArgumentError("post-training needs at least one stochastic step")
        if self.threads < 1:
            raise InvalidArgumentError("threads must be >= 1")

    @property
    def clip(self) -> ClipConfig:
        return ClipConfig(self.clip_epsilon)

    @property
    def weights(self) -> RewardWeights:
        return RewardWeights(self.lambda_l1, self.lambda_cos)

    @property
    def label(self) -> str:
        return f"{self.algorithm}-{self.sde_steps}sde-{self.reward}"


@dataclass(frozen=True)
class StepStats:
    step: int
    mean_reward: float
    mean_abs_adv: float
    clip_frac: float
    ratio_mean: float
    ratio_max: float
    objective: float

    def as_row(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class PosttrainResult:
    net: DenoiserNet
    rows: List[Dict[str, Any]] = field(default_factory=list)
    stats: List[StepStats] = field(default_factory=list)
    baseline: Optional[RewardBaseline] = None
    label: str = ""


def collect_group(
    net_old: DenoiserNet,
    condition: Condition,
    x0: np.ndarray,
    schedule: NoiseSchedule,
    reward_fn: RewardFn,
    *,
    group_size: int,
    sde_steps: int,
    master_seed: int,
    step: int,
    slot: int,
    pool: Optional[ThreadPoolExecutor] = None,
) -> RolloutGroup:
    """G hybrid rollouts under theta_old from one shared initial noise, scored against x0."""
    noise = rng_stream(master_seed, "rollout", step, slot, 0).standard_normal(np.shape(x0)) * schedule.sigma_max

    def one(g: int):
        rng = rng_stream(master_seed, "rollout", step, slot, g + 1)
        return rollout_hybrid(net_old, condition, noise, schedule, rng, sde_steps=sde_steps)

    trajectories = tuple(pool.map(one, range(group_size))) if pool is not None else tuple(one(g) for g in range(group_size))
    rewards = np.array([reward_fn(t.final, x0) for t in trajectories])
    return RolloutGroup(condition=condition, initial_noise=noise, trajectories=trajectories, rewards=rewards)


def grpo_train_step(
    net: DenoiserNet,
    net_old: DenoiserNet,
    batch: Sequence[Tuple[Condition, np.ndarray]],
    config: PosttrainConfig,
    state: AdamState,
    schedule: NoiseSchedule,
    *,
    master_seed: int = 0,
    step: int = 0,
    baseline: Optional[RewardBaseline] = None,
    reward_fn: Optional[RewardFn] = None,
) -> StepStats:
    """
    Roll out G trajectories per condition under theta_old, compute advantages,
    and take one Adam step on -J(theta). `baseline` switches to DDPO advantages.
    """
    reward_fn = reward_fn or make_reward_fn(config.reward, config.weights)
    if config.algorithm == "ddpo" and baseline is None:
        raise InvalidArgumentError("ddpo needs a RewardBaseline")

    kwargs = dict(group_size=config.group_size, sde_steps=config.sde_steps, master_seed=master_seed, step=step)
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            groups = [collect_group(net_old, c, x0, schedule, reward_fn, slot=i, pool=pool, **kwargs)
                      for i, (c, x0) in enumerate(batch)]
    else:
        groups = [collect_group(net_old, c, x0, schedule, reward_fn, slot=i, **kwargs)
                  for i, (c, x0) in enumerate(batch)]

    if config.algorithm == "ddpo":
        groups = [RolloutGroup(g.condition, g.initial_noise, g.trajectories, g.rewards, baseline.advantages(g.rewards))
                  for g in groups]
    else:
        groups = [RolloutGroup(g.condition, g.initial_noise, g.trajectories, g.rewards, group_advantages(g.rewards))
                  for g in groups]
    groups = with_old_log_probs(groups, net_old)

    objective = clipped_objective_graph(groups, net, config.clip)

    def loss_graph(tape, pv):
        j, ratio = objective(tape, pv)
        return -j, j, ratio

    (_, j_value, ratio), tape = T.forward(loss_graph, net.params)
    j_value = float(j_value)
    if not math.isfinite(j_value):
        raise NonFiniteError(f"objective is {j_value} at step {step} (ratio max {np.nanmax(ratio):.3g})")
    tape.backward()
    adam_step(net.params, state)

    if baseline is not None:
        baseline.update(np.concatenate([g.rewards for g in groups]))

    ostats = objective_stats(groups, j_value, ratio, config.clip)
    return StepStats(
        step=step,
        mean_reward=float(np.mean([g.rewards.mean() for g in groups])),
        mean_abs_adv=ostats.mean_abs_adv,
        clip_frac=ostats.clip_frac,
        ratio_mean=ostats.ratio_mean,
        ratio_max=ostats.ratio_max,
        objective=ostats.objective,
    )


def posttrain(
    net: DenoiserNet,
    train: Dataset,
    config: PosttrainConfig,
    schedule: NoiseSchedule,
    *,
    eval_set: Optional[Dataset] = None,
    master_seed: int = 0,
) -> PosttrainResult:
    """
    The outer loop: `config.steps` updates, theta_old refreshed every
    `refresh_every` steps, eval L1 of ODE rollouts at step 0, every `eval_every`
    steps and at the end. Updates `net` in place.
    """
    if len(train) == 0:
        raise InvalidArgumentError("posttrain needs a non-empty dataset")
    evals = (eval_set or train).episodes[: config.eval_episodes]
    reward_fn = make_reward_fn(config.reward, config.weights, pool=train.config.pool)
    baseline = RewardBaseline(config.baseline_decay) if config.algorithm == "ddpo" else None
    net_old = net.copy()
    state = AdamState.for_params(net.params, AdamConfig(lr=config.lr))

    start = time.time()
    result = PosttrainResult(net=net, baseline=baseline, label=config.label)
    eval_l1 = l1_eval(net, evals, schedule, master_seed=master_seed)
    result.rows.append(_row(0, None, eval_l1, 0.0))
    logger.info(f"Starting post-training [{config.label}]: {config.steps} steps, G={config.group_size}, "
                f"lr {config.lr:g}, eval L1 {eval_l1:.5f}")

    for step in tqdm(range(1, config.steps + 1), desc=config.label, disable=not config.progress):
        pick = rng_stream(master_seed, "rollout", step).integers(0, len(train), size=config.conditions_per_step)
        batch = [(train[i].condition, np.asarray(train[i].expert_latent, dtype=np.float64)) for i in pick]
        stats = grpo_train_step(
            net, net_old, batch, config, state, schedule,
            master_seed=master_seed, step=step, baseline=baseline, reward_fn=reward_fn,
        )
        result.stats.append(stats)
        if step % config.refresh_every == 0:
            net_old.params.load_state(net.params.state())

        eval_l1 = None
        if step % config.eval_every == 0 or step == config.steps:
            eval_l1 = l1_eval(net, evals, schedule, master_seed=master_seed)
            logger.info(f"[{config.label}] step {step}: reward {stats.mean_reward:.4f} "
                        f"clip {stats.clip_frac:.3f} eval L1 {eval_l1:.5f}")
        result.rows.append(_row(step, stats, eval_l1, time.time() - start))

    logger.info(f"Post-training [{config.label}] completed in {time.time() - start:.2f}s")
    return result


def _row(step: int, stats: Optional[StepStats], eval_l1: Optional[float], wallclock: float) -> Dict[str, Any]:
    row: Dict[str, Any] = {
        "step": step, "mean_reward": None, "mean_abs_adv": None, "clip_frac": None,
        "ratio_mean": None, "ratio_max": None, "eval_l1": eval_l1, "wallclock_s": wallclock,
    }
    if stats is not None:
        row.update({k: v for k, v in stats.as_row().items() if k in row and k != "step"})
    return row
