# src/rl/grpo.py
"""
Group-relative policy optimization over the stochastic denoising steps.

Each trajectory's policy is the explicit Gaussian of its ancestral step(s); the
deterministic steps after them carry no density and do not enter the ratio.
Old and current log-probs are evaluated through the same batched graph so that
identical parameters give a ratio of exactly 1.
"""
from __future__ import annotations
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple
import math

import numpy as np

from src.diffcore import tensor as T
from src.diffcore.tensor import Tape, Var
from src.samplers.hybrid import DenoiseTrajectory, StochasticStep
from src.utils.errors import DegenerateDensityError, InvalidArgumentError, PreconditionError
from src.vpm.denoiser import GraphDenoiser, stack_conditions

ADV_EPS = 1e-8
BASELINE_DECAY = 0.99


@dataclass(frozen=True)
class ClipConfig:
    epsilon_c: float = 0.2

    def __post_init__(self):
        if not (0.0 < self.epsilon_c < 1.0):
            raise InvalidArgumentError(f"epsilon_c must lie in (0, 1), got {self.epsilon_c}")


@dataclass(frozen=True, eq=False)
class RolloutGroup:
    condition: Any
    initial_noise: np.ndarray
    trajectories: Tuple[DenoiseTrajectory, ...]
    rewards: np.ndarray
    advantages: Optional[np.ndarray] = None
    old_log_probs: Optional[np.ndarray] = None     # (G, stochastic steps)

    def __post_init__(self):
        G = len(self.trajectories)
        if len(self.rewards) != G:
            raise InvalidArgumentError(f"{len(self.rewards)} rewards for {G} trajectories")
        for traj in self.trajectories:
            if traj.condition is not self.condition or not np.array_equal(traj.initial_noise, self.initial_noise):
                raise InvalidArgumentError("trajectories in a group must share condition and initial noise")
        if self.advantages is not None and len(self.advantages) != G:
            raise InvalidArgumentError(f"{len(self.advantages)} advantages for {G} trajectories")

    @property
    def size(self) -> int:
        return len(self.trajectories)


@dataclass(frozen=True, eq=False)
class MdpStep:
    state: np.ndarray       # x_{sigma_i}
    sigma: float
    condition: Any
    action: np.ndarray      # x_{sigma_{i-1}}
    terminal: bool
    reward: float = 0.0


def to_mdp_steps(trajectory: DenoiseTrajectory, reward: float) -> List[MdpStep]:
    """One step per denoising update; only the step reaching sigma_0 carries the reward."""
    sig = trajectory.schedule.sigmas
    n = trajectory.schedule.steps
    return [
        MdpStep(
            state=trajectory.states[i],
            sigma=float(sig[i]),
            condition=trajectory.condition,
            action=trajectory.states[i + 1],
            terminal=(i == n - 1),
            reward=reward if i == n - 1 else 0.0,
        )
        for i in range(n)
    ]


def group_advantages(rewards: Sequence[float]) -> np.ndarray:
    """(r - mean) / popstd; a group with popstd < 1e-8 gets all-zero advantages."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise InvalidArgumentError(f"group advantages need G >= 2 rewards, got {r.size}")
    std = float(np.std(r))
    if std < ADV_EPS:
        return np.zeros_like(r)
    return (r - r.mean()) / max(std, ADV_EPS)


class RewardBaseline:
    """Exponential moving average of rewards, the DDPO advantage baseline."""

    def __init__(self, decay: float = BASELINE_DECAY, value: Optional[float] = None):
        if not (0.0 <= decay < 1.0):
            raise InvalidArgumentError(f"baseline decay must lie in [0, 1), got {decay}")
        self.decay = decay
        self.value = value

    def advantages(self, rewards: Sequence[float]) -> np.ndarray:
        r = np.asarray(rewards, dtype=np.float64)
        base = float(r.mean()) if self.value is None else self.value
        return r - base

    def update(self, rewards: Sequence[float]) -> float:
        m = float(np.mean(rewards))
        self.value = m if self.value is None else self.decay * self.value + (1.0 - self.decay) * m
        return self.value

    def state(self) -> Dict[str, Any]:
        return {"decay": self.decay, "value": self.value}


# ------------------------ log-densities ------------------------

def _entries(groups: Sequence[RolloutGroup]) -> List[Tuple[StochasticStep, Any]]:
    out = []
    for group in groups:
        for traj in group.trajectories:
            if not traj.stochastic:
                raise PreconditionError("trajectory has no stochastic step to score")
            out.extend((s, traj.condition) for s in traj.stochastic)
    return out


def log_prob_graph(net: GraphDenoiser, entries: Sequence[Tuple[StochasticStep, Any]]):
    """
    Graph `(tape, pv) -> Var (E,)`: log N(action; x_det(theta), sigma_up^2 I) for every
    (step, condition) entry, all evaluated in one batch.
    """
    if not entries:
        raise InvalidArgumentError("no stochastic steps to score")
    steps = [s for s, _ in entries]
    for s in steps:
        if s.coeffs.sigma_up <= 0:
            raise DegenerateDensityError(f"step {s.step} has sigma_up == 0 and no density")
    E = len(steps)
    x = np.stack([s.state for s in steps])
    actions = np.stack([s.action for s in steps])
    sigma = np.array([s.sigma_i for s in steps])
    obs, instr = stack_conditions([c for _, c in entries])
    bshape = (E,) + (1,) * (x.ndim - 1)
    sigma_b = sigma.reshape(bshape)
    down_b = np.array([s.coeffs.sigma_down for s in steps]).reshape(bshape)
    var = np.array([s.coeffs.sigma_up ** 2 for s in steps])
    d = actions[0].size
    norm = -0.5 * d * np.log(2.0 * math.pi * var)

    def graph(tape: Tape, pv: Dict[str, Var]) -> Var:
        denoised, _ = net.graph(tape, pv, x, sigma, obs, instr)
        mean = x + (down_b - sigma_b) * (x - denoised) / sigma_b
        sq = T.sum_(T.reshape(T.square(actions - mean), (E, d)), axis=1)
        return norm - sq / (2.0 * var)

    return graph


def log_probs(net: GraphDenoiser, entries: Sequence[Tuple[StochasticStep, Any]]) -> np.ndarray:
    value, _ = T.forward(log_prob_graph(net, entries), net.params, record=False)
    return np.asarray(value)


def with_old_log_probs(groups: Sequence[RolloutGroup], net_old: GraphDenoiser) -> List[RolloutGroup]:
    """Score every stochastic step under theta_old, in the batch layout the objective uses."""
    flat = log_probs(net_old, _entries(groups))
    out, pos = [], 0
    for group in groups:
        k = group.trajectories[0].stochastic_steps
        n = group.size * k
        out.append(replace(group, old_log_probs=flat[pos:pos + n].reshape(group.size, k)))
        pos += n
    return out


def importance_ratio(trajectory: DenoiseTrajectory, net_theta: GraphDenoiser, net_theta_old: GraphDenoiser, step: int = 0) -> float:
    """exp(log pi_theta(a | s) - log pi_theta_old(a | s)) at one stochastic step."""
    entry = [(trajectory.stochastic[step], trajectory.condition)]
    return float(np.exp(log_probs(net_theta, entry)[0] - log_probs(net_theta_old, entry)[0]))


# ------------------------ clipped objective ------------------------

@dataclass(frozen=True)
class ObjectiveStats:
    objective: float
    clip_frac: float
    ratio_mean: float
    ratio_max: float
    mean_abs_adv: float


def _flat_terms(groups: Sequence[RolloutGroup]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    adv, old, weight = [], [], []
    n_groups = len(groups)
    for group in groups:
        if group.advantages is None:
            raise PreconditionError("advantages must be computed before the objective")
        if group.old_log_probs is None:
            raise PreconditionError("old-policy log-probs missing")
        G, k = group.old_log_probs.shape
        adv.append(np.repeat(np.asarray(group.advantages, dtype=np.float64), k))
        old.append(group.old_log_probs.reshape(-1))
        weight.append(np.full(G * k, 1.0 / (n_groups * G * k)))
    return np.concatenate(adv), np.concatenate(old), np.concatenate(weight)


def clipped_objective_graph(groups: Sequence[RolloutGroup], net: GraphDenoiser, clip: ClipConfig):
    """
    Graph `(tape, pv) -> Var` for J(theta): per group, the mean over trajectories of
    the per-step mean of min(rho A, clip(rho, 1-eps, 1+eps) A); J averages groups.
    """
    adv, old, weight = _flat_terms(groups)
    logp_graph = log_prob_graph(net, _entries(groups))
    lo, hi = 1.0 - clip.epsilon_c, 1.0 + clip.epsilon_c

    def graph(tape: Tape, pv: Dict[str, Var]) -> Tuple[Var, Var]:
        ratio = T.exp(logp_graph(tape, pv) - old)
        terms = T.minimum(ratio * adv, T.clip(ratio, lo, hi) * adv)
        return T.sum_(terms * weight), ratio

    return graph


def objective_stats(groups: Sequence[RolloutGroup], objective: float, ratio: np.ndarray, clip: ClipConfig) -> ObjectiveStats:
    adv = np.concatenate([g.advantages for g in groups])
    return ObjectiveStats(
        objective=float(objective),
        clip_frac=float(np.mean(np.abs(ratio - 1.0) > clip.epsilon_c)),
        ratio_mean=float(np.mean(ratio)),
        ratio_max=float(np.max(ratio)),
        mean_abs_adv=float(np.mean(np.abs(adv))),
    )


def _evaluate(groups: Sequence[RolloutGroup], net_theta: GraphDenoiser, net_theta_old: GraphDenoiser, clip: ClipConfig) -> float:
    if any(g.old_log_probs is None for g in groups):
        groups = with_old_log_probs(groups, net_theta_old)
    (value, _), _ = T.forward(clipped_objective_graph(groups, net_theta, clip), net_theta.params, record=False)
    return float(value)


def grpo_objective(groups: Sequence[RolloutGroup], net_theta: GraphDenoiser, net_theta_old: GraphDenoiser,
                   clip: ClipConfig = ClipConfig()) -> float:
    return _evaluate(groups, net_theta, net_theta_old, clip)


def ddpo_objective(groups: Sequence[RolloutGroup], net_theta: GraphDenoiser, net_theta_old: GraphDenoiser,
                   clip: ClipConfig, baseline: RewardBaseline) -> float:
    """The same clipped surrogate with A = r - baseline instead of group-normalized advantages."""
    centered = [replace(g, advantages=baseline.advantages(g.rewards)) for g in groups]
    return _evaluate(centered, net_theta, net_theta_old, clip)
