# src/cli/config.py
"""
Run configuration: one pydantic model per section, converted to the library's
frozen dataclass configs. Unknown keys are rejected everywhere.
"""
from __future__ import annotations
from pathlib import Path
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.agm.train import AgmConfig
from src.diffcore.optim import POSTTRAIN_LR, SFT_LR
from src.metrics.evaluate import EvalConfig
from src.rl.trainer import PosttrainConfig
from src.samplers.schedules import ScheduleConfig
from src.synthdyn.world import WorldConfig
from src.utils.helpers import content_hash
from src.vpm.denoiser import DenoiserConfig
from src.vpm.train import SftConfig

FULL = "full-scale setting"
DESK = "desk default"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class WorldSection(_Section):
    num_modes: int = Field(4, ge=1, description=f"{DESK}: dynamics modes / instructions")
    frames: int = Field(16, ge=2, description=f"{FULL}: predicted frames per clip")
    frame_size: int = Field(32, ge=4, description=f"{DESK}: rendered frame side in pixels")
    pool: int = Field(2, ge=1, description=f"{DESK}: encoder average-pool factor")
    action_horizon: int = Field(10, ge=1, description=f"{FULL}: action chunk length")
    speed: float = Field(0.03, gt=0, description=f"{DESK}: arena units per frame")
    velocity_noise: float = Field(0.0, ge=0, description=f"{DESK}: per-frame velocity jitter")
    train_episodes: int = Field(256, ge=1, description=f"{DESK}: training episodes")
    eval_episodes: int = Field(64, ge=1, description=f"{DESK}: held-out episodes")

    def to_config(self) -> WorldConfig:
        return WorldConfig(
            num_modes=self.num_modes, frames=self.frames, frame_size=self.frame_size, pool=self.pool,
            action_horizon=self.action_horizon, speed=self.speed, velocity_noise=self.velocity_noise,
        )

    @property
    def eval_fraction(self) -> float:
        return self.eval_episodes / (self.train_episodes + self.eval_episodes)


class ModelSection(_Section):
    hidden: int = Field(64, ge=1, description=f"{DESK}: denoiser hidden width")
    sigma_embed_dim: int = Field(16, ge=2, description=f"{DESK}: sinusoidal log-sigma features")
    sigma_data: float = Field(0.5, gt=0, description=f"{DESK}: EDM data std")
    capture_layers: Tuple[Literal["h1", "h2"], ...] = Field(("h2",), min_length=1,
                                                             description=f"{DESK}: layers forming the hidden feature")

    def to_config(self) -> DenoiserConfig:
        return DenoiserConfig(hidden=self.hidden, sigma_embed_dim=self.sigma_embed_dim,
                              sigma_data=self.sigma_data, capture_layers=tuple(self.capture_layers))


class ScheduleSection(_Section):
    steps: int = Field(10, ge=1, description=f"{FULL}: sampling steps")
    sigma_min: float = Field(0.02, gt=0, description=f"{DESK}: smallest nonzero noise level")
    sigma_max: float = Field(10.0, gt=0, description=f"{DESK}: initial noise level")
    rho: float = Field(7.0, gt=0, description=f"{DESK}: Karras exponent")

    def to_config(self) -> ScheduleConfig:
        return ScheduleConfig(steps=self.steps, sigma_min=self.sigma_min, sigma_max=self.sigma_max, rho=self.rho)


class SftSection(_Section):
    steps: int = Field(2000, ge=0, description=f"{DESK}: SFT optimizer steps")
    batch_size: int = Field(8, ge=1, description=f"{DESK}: SFT minibatch")
    lr: float = Field(SFT_LR, ge=0, description=f"{FULL}: fine-tuning learning rate")
    eval_every: int = Field(100, ge=1, description=f"{DESK}: steps between eval-loss rows")

    def to_config(self, schedule: ScheduleSection, progress: bool = False) -> SftConfig:
        return SftConfig(steps=self.steps, batch_size=self.batch_size, lr=self.lr, eval_every=self.eval_every,
                         sigma_min=schedule.sigma_min, sigma_max=schedule.sigma_max, progress=progress)


class PosttrainSection(_Section):
    algorithm: Literal["grpo", "ddpo"] = Field("grpo", description=f"{FULL}: policy-gradient variant")
    sde_steps: Literal[1, 5] = Field(1, description=f"{FULL}: stochastic denoising steps (5 = ablation)")
    reward: Literal["latent", "pixel"] = Field("latent", description=f"{FULL}: reward space")
    group_size: int = Field(8, ge=2, description=f"{FULL}: rollouts per group (G)")
    epsilon_c: float = Field(0.2, gt=0, lt=1, description=f"{FULL}: PPO clipping parameter")
    lr: float = Field(POSTTRAIN_LR, ge=0, description=f"{FULL}: post-training learning rate")
    steps: int = Field(300, ge=0, description=f"{DESK}: iterations T (full-scale run is ~1.5k)")
    refresh_every: int = Field(1, ge=1, description=f"{DESK}: theta_old refresh cadence K")
    conditions_per_step: int = Field(4, ge=1, description=f"{DESK}: groups per update")
    lambda_l1: float = Field(1.0, ge=0, description=f"{FULL}: L1 reward weight")
    lambda_cos: float = Field(1.0, ge=0, description=f"{FULL}: cosine reward weight")
    eval_every: int = Field(50, ge=1, description=f"{DESK}: steps between eval-L1 rows")
    baseline_decay: float = Field(0.99, ge=0, lt=1, description=f"{DESK}: DDPO reward EMA decay")

    def to_config(self, eval_episodes: int, threads: int = 1, progress: bool = False) -> PosttrainConfig:
        return PosttrainConfig(
            steps=self.steps, group_size=self.group_size, conditions_per_step=self.conditions_per_step,
            lr=self.lr, clip_epsilon=self.epsilon_c, lambda_l1=self.lambda_l1, lambda_cos=self.lambda_cos,
            reward=self.reward, algorithm=self.algorithm, sde_steps=self.sde_steps,
            refresh_every=self.refresh_every, eval_every=self.eval_every, eval_episodes=eval_episodes,
            baseline_decay=self.baseline_decay, threads=threads, progress=progress,
        )


class AgmSection(_Section):
    epochs: int = Field(10, ge=0, description=f"{FULL}: AGM training epochs")
    batch_size: int = Field(32, ge=1, description=f"{DESK}: AGM minibatch")
    lr: float = Field(SFT_LR, ge=0, description=f"{DESK}: AGM learning rate")
    hidden: int = Field(128, ge=1, description=f"{DESK}: action head width")
    diffusion_steps: int = Field(20, ge=1, description=f"{DESK}: action noise levels K")
    beta_start: float = Field(0.01, gt=0, lt=1, description=f"{DESK}: first per-step beta")
    beta_end: float = Field(0.5, gt=0, lt=1, description=f"{DESK}: last per-step beta")
    ddim_steps: int = Field(10, ge=1, description=f"{DESK}: DDIM sampling steps")
    action_scale: float = Field(20.0, gt=0, description=f"{DESK}: action normalization factor")

    def to_config(self, progress: bool = False) -> AgmConfig:
        return AgmConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, hidden=self.hidden,
            diffusion_steps=self.diffusion_steps, beta_start=self.beta_start, beta_end=self.beta_end,
            ddim_steps=self.ddim_steps, action_scale=self.action_scale, progress=progress,
        )


class EvalSection(_Section):
    eval_episodes: int = Field(32, ge=1, description=f"{DESK}: episodes per L1 / MSE evaluation")
    jacobian_mode: Literal["reverse", "fd"] = Field("reverse", description=f"{DESK}: Jacobian method")
    fd_eta: float = Field(1e-4, gt=0, description=f"{DESK}: finite-difference step")
    er_episodes: int = Field(16, ge=1, description=f"{DESK}: episodes in the ER report")

    def to_config(self) -> EvalConfig:
        return EvalConfig(eval_episodes=self.eval_episodes, jacobian_mode=self.jacobian_mode,
                          fd_eta=self.fd_eta, er_episodes=self.er_episodes)


class SeedSection(_Section):
    master: int = Field(0, ge=0, description=f"{DESK}: master seed for every named stream")


class RunConfig(_Section):
    world: WorldSection = WorldSection()
    model: ModelSection = ModelSection()
    schedule: ScheduleSection = ScheduleSection()
    sft: SftSection = SftSection()
    posttrain: PosttrainSection = PosttrainSection()
    agm: AgmSection = AgmSection()
    eval: EvalSection = EvalSection()
    seeds: SeedSection = SeedSection()
    output_dir: Optional[str] = Field(None, description=f"{DESK}: run directory (else $DYNO_OUT/<hash>)")

    @field_validator("output_dir")
    @classmethod
    def _non_empty(cls, v: Optional[str]) -> Optional[str]:
        if v is not None and not v.strip():
            raise ValueError("output_dir must not be blank")
        return v

    def config_hash(self) -> str:
        """Hash of everything that affects results (the output location excluded)."""
        return content_hash(self.model_dump(mode="json", exclude={"output_dir"}))

    def base_hash(self) -> str:
        """Hash of the sections every artifact of one run directory must agree on."""
        return content_hash(self.model_dump(mode="json", include={"world", "model", "schedule", "seeds"}))

    def with_overrides(self, **sections) -> "RunConfig":
        """Replace fields inside sections, e.g. with_overrides(posttrain={"algorithm": "ddpo"})."""
        data = self.model_dump()
        for name, values in sections.items():
            data[name] = {**data[name], **{k: v for k, v in values.items() if v is not None}}
        return RunConfig.model_validate(data)


def load_run_config(path: Optional[str | Path]) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    return RunConfig.model_validate_json(path.read_text(encoding="utf-8"))
