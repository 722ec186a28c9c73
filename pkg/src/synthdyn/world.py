# src/synthdyn/world.py
"""
Instruction-conditioned toy dynamics: a single Gaussian blob moving in the unit
arena under one of M laws, rendered to frame grids and encoded to latents by a
fixed linear pooling encoder.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple
import math

import numpy as np

from src.utils.errors import InvalidArgumentError, ResourceLimitError
from src.utils.logger import get_logger

logger = get_logger(__name__)

# size of the full-scale training split; never materialized here
FULL_TRAIN_SAMPLES = 129_454

LAWS = ("drift", "drift", "orbit", "bounce")
ARENA_CENTER = np.array([0.5, 0.5])


@dataclass(frozen=True)
class WorldConfig:
    num_modes: int = 4                  # M, instruction vocabulary
    frames: int = 16                    # F, video length
    frame_size: int = 32                # rendered grid is frame_size x frame_size
    pool: int = 2                       # average-pool factor before the 2x2 channel stack
    action_horizon: int = 10            # 2-D velocities instead of 7-DoF
    speed: float = 0.03                 # arena units / frame
    velocity_noise: float = 0.0         # std of initial velocity jitter
    orbit_omega: float = 0.2            # rad / frame
    orbit_radius: Tuple[float, float] = (0.15, 0.35)
    blob_width: float = 1.5             # std of the blob, in pixels
    max_dataset_bytes: int = 512 * 1024 * 1024

    def __post_init__(self):
        if self.num_modes < 1:
            raise InvalidArgumentError("num_modes must be >= 1")
        if self.frames < 2:
            raise InvalidArgumentError(f"frames must be >= 2, got {self.frames}")
        if self.frame_size % (2 * self.pool) != 0:
            raise InvalidArgumentError("frame_size must be divisible by 2 * pool")
        if not (1 <= self.action_horizon <= self.frames - 1):
            raise InvalidArgumentError("action_horizon must lie in [1, frames - 1]")

    @property
    def latent_hw(self) -> int:
        return self.frame_size // (2 * self.pool)

    @property
    def latent_shape(self) -> Tuple[int, int, int, int]:
        return (self.frames, 4, self.latent_hw, self.latent_hw)

    @property
    def action_dim(self) -> int:
        return 2

    def episode_nbytes(self) -> int:
        frames = self.frames * self.frame_size ** 2 * 8
        latent = int(np.prod(self.latent_shape)) * 4
        return frames + latent + self.action_horizon * self.action_dim * 4 + self.num_modes * 4


@dataclass(frozen=True)
class WorldState:
    position: np.ndarray   # (2,) in [0,1]^2
    velocity: np.ndarray   # (2,) arena units / frame
    mode: int


@dataclass(frozen=True, eq=False)
class Condition:
    observation: np.ndarray   # first-frame latent slice, (4, h, w)
    instruction: np.ndarray   # one-hot over modes, (M,)

    @property
    def mode(self) -> int:
        return int(np.argmax(self.instruction))

    def key(self) -> bytes:
        return self.observation.tobytes() + self.instruction.tobytes()


@dataclass(frozen=True, eq=False)
class Episode:
    condition: Condition
    expert_latent: np.ndarray          # x0 = encode(frames), (F, 4, h, w) float32
    expert_actions: np.ndarray         # (horizon, 2) float32 per-frame velocities
    mode: int
    seed: int
    frames: Optional[np.ndarray] = None      # (F, S, S); absent for episodes read back from disk
    positions: Optional[np.ndarray] = None   # (F, 2)


@dataclass(frozen=True, eq=False)
class Dataset:
    episodes: Tuple[Episode, ...]
    config: WorldConfig
    seed: int = 0

    def __len__(self) -> int:
        return len(self.episodes)

    def __iter__(self) -> Iterator[Episode]:
        return iter(self.episodes)

    def __getitem__(self, i: int) -> Episode:
        return self.episodes[i]

    def modes(self) -> List[int]:
        return [e.mode for e in self.episodes]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def one_hot(mode: int, num_modes: int) -> np.ndarray:
    v = np.zeros(num_modes, dtype=np.float32)
    v[mode] = 1.0
    return v


# ------------------------ dynamics ------------------------

def _rotation(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def _reflect(position: np.ndarray, velocity: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Elastic reflection off the arena walls."""
    p, v = position.copy(), velocity.copy()
    for k in range(2):
        if p[k] < 0.0:
            p[k], v[k] = -p[k], -v[k]
        elif p[k] > 1.0:
            p[k], v[k] = 2.0 - p[k], -v[k]
    return p, v


def _initial_state(rng: np.random.Generator, mode: int, config: WorldConfig) -> WorldState:
    law = LAWS[mode % len(LAWS)]
    turn = (mode // len(LAWS)) * math.pi / 3.0
    if law == "drift":
        direction = _rotation((0.0 if mode % len(LAWS) == 0 else math.pi / 2.0) + turn)
        travel = config.speed * (config.frames - 1)
        start = ARENA_CENTER - direction * travel / 2.0 + rng.uniform(-0.15, 0.15, size=2)
        velocity = direction * config.speed
    elif law == "orbit":
        radius = rng.uniform(*config.orbit_radius)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        start = ARENA_CENTER + radius * _rotation(phase)
        velocity = np.zeros(2)
    else:
        start = rng.uniform(0.2, 0.8, size=2)
        velocity = 1.5 * config.speed * _rotation(math.pi / 5.0 + turn)
    if config.velocity_noise > 0 and law != "orbit":
        velocity = velocity + config.velocity_noise * rng.standard_normal(2)
    return WorldState(position=np.clip(start, 0.0, 1.0), velocity=velocity, mode=mode)


def simulate(state: WorldState, config: WorldConfig) -> np.ndarray:
    """Positions (F, 2) produced by the mode's law starting from `state`."""
    positions = np.empty((config.frames, 2))
    law = LAWS[state.mode % len(LAWS)]
    if law == "orbit":
        offset = state.position - ARENA_CENTER
        radius = float(np.hypot(*offset))
        phase = math.atan2(offset[1], offset[0])
        sign = -1.0 if (state.mode // len(LAWS)) % 2 else 1.0
        for t in range(config.frames):
            positions[t] = ARENA_CENTER + radius * _rotation(phase + sign * config.orbit_omega * t)
        return positions

    p, v = state.position.astype(np.float64), state.velocity.astype(np.float64)
    positions[0] = p
    for t in range(1, config.frames):
        p, v = _reflect(p + v, v)
        positions[t] = p
    return positions


def render(positions: np.ndarray, config: WorldConfig) -> np.ndarray:
    """Gaussian blob per frame on a frame_size x frame_size grid, rows indexed by y."""
    s = config.frame_size
    centers = (np.arange(s) + 0.5) / s
    xx, yy = np.meshgrid(centers, centers)
    width = config.blob_width / s
    dx = xx[None] - positions[:, 0, None, None]
    dy = yy[None] - positions[:, 1, None, None]
    return np.exp(-(dx * dx + dy * dy) / (2.0 * width * width))


# ------------------------ encoder ------------------------

def encode_frames(frames: Sequence[np.ndarray] | np.ndarray, pool: int = 2) -> np.ndarray:
    """
    Parameter-free linear encoder: average-pool by `pool`, then stack each 2x2
    neighbourhood into 4 channels. (F, S, S) -> (F, 4, S/(2 pool), S/(2 pool)) float32.
    """
    if len(frames) == 0:
        raise InvalidArgumentError("encode_frames needs at least one frame")
    shapes = {np.shape(f) for f in frames}
    if len(shapes) != 1:
        raise InvalidArgumentError(f"frames must share one spatial shape, got {sorted(shapes)}")
    arr = np.asarray(frames, dtype=np.float64)
    n, s, s2 = arr.shape
    if s != s2 or s % (2 * pool):
        raise InvalidArgumentError(f"frame shape {(s, s2)} not square or not divisible by {2 * pool}")
    pooled = arr.reshape(n, s // pool, pool, s // pool, pool).mean(axis=(2, 4))
    h = s // (2 * pool)
    stacked = pooled.reshape(n, h, 2, h, 2).transpose(0, 2, 4, 1, 3).reshape(n, 4, h, h)
    return stacked.astype(np.float32)


def decode_latents(latent: np.ndarray, pool: int = 2) -> np.ndarray:
    """Right-inverse of `encode_frames`: encode_frames(decode_latents(z)) == z."""
    z = np.asarray(latent, dtype=np.float64)
    if z.ndim != 4 or z.shape[1] != 4:
        raise InvalidArgumentError(f"latent must be (F, 4, h, w), got {z.shape}")
    n, _, h, w = z.shape
    pooled = z.reshape(n, 2, 2, h, w).transpose(0, 3, 1, 4, 2).reshape(n, 2 * h, 2 * w)
    return np.repeat(np.repeat(pooled, pool, axis=1), pool, axis=2)


# ------------------------ dataset ------------------------

def gen_episode(seed: int, mode: int, config: WorldConfig) -> Episode:
    if not (0 <= mode < config.num_modes):
        raise InvalidArgumentError(f"mode {mode} out of range [0, {config.num_modes})")
    rng = np.random.default_rng(seed)
    state = _initial_state(rng, mode, config)
    positions = simulate(state, config)
    frames = render(positions, config)
    latent = encode_frames(frames, pool=config.pool)
    actions = np.diff(positions, axis=0)[: config.action_horizon].astype(np.float32)
    condition = Condition(
        observation=_freeze(latent[0].copy()),
        instruction=_freeze(one_hot(mode, config.num_modes)),
    )
    return Episode(
        condition=condition,
        expert_latent=_freeze(latent),
        expert_actions=_freeze(actions),
        mode=mode,
        seed=seed,
        frames=_freeze(frames),
        positions=_freeze(positions),
    )


def make_dataset(n: int, seed: int, config: WorldConfig) -> Dataset:
    """Episode i uses seed ^ i and mode i % M."""
    if n < 1:
        raise InvalidArgumentError(f"dataset size must be >= 1, got {n}")
    need = n * config.episode_nbytes()
    if need > config.max_dataset_bytes:
        raise ResourceLimitError(
            f"{n} episodes need ~{need / 2**20:.1f} MiB, cap is {config.max_dataset_bytes / 2**20:.1f} MiB"
        )
    logger.info(f"Generating {n} episodes (seed={seed}, modes={config.num_modes})")
    episodes = tuple(gen_episode(seed ^ i, i % config.num_modes, config) for i in range(n))
    return Dataset(episodes=episodes, config=config, seed=seed)


def split(dataset: Dataset, eval_fraction: float) -> Tuple[Dataset, Dataset]:
    """
    Order-stable split: the last round(n * eval_fraction) episodes form the eval set;
    train episodes whose condition also occurs in eval are dropped.
    """
    if not (0.0 < eval_fraction < 1.0):
        raise InvalidArgumentError(f"eval_fraction must lie in (0, 1), got {eval_fraction}")
    n = len(dataset)
    if n < 2:
        raise InvalidArgumentError("need at least 2 episodes to split")
    n_eval = min(max(1, int(round(n * eval_fraction))), n - 1)
    eval_eps = dataset.episodes[n - n_eval:]
    held_out = {e.condition.key() for e in eval_eps}
    train_eps = tuple(e for e in dataset.episodes[: n - n_eval] if e.condition.key() not in held_out)
    if len(train_eps) != n - n_eval:
        logger.warning(f"Dropped {n - n_eval - len(train_eps)} train episodes sharing an eval condition")
    return (
        Dataset(episodes=train_eps, config=dataset.config, seed=dataset.seed),
        Dataset(episodes=eval_eps, config=dataset.config, seed=dataset.seed),
    )
