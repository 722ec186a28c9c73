# src/vpm/denoiser.py
"""
Conditional latent denoiser D(x_sigma, sigma, c) with EDM preconditioning.

F_theta is a small MLP shared across frames (plus a learned per-frame embedding)
with one temporal mixing layer; the hidden feature handed to the action head is
read from configurable layers of that MLP.
"""
from __future__ import annotations
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Sequence, Tuple
import math

import numpy as np

from src.diffcore import tensor as T
from src.diffcore.params import ParamSet
from src.diffcore.tensor import Tape, Var
from src.synthdyn.world import Condition
from src.utils.errors import InvalidArgumentError

HIDDEN_LAYERS = ("h1", "h2")


@dataclass(frozen=True)
class DenoiserConfig:
    hidden: int = 64
    sigma_embed_dim: int = 16
    sigma_data: float = 0.5
    capture_layers: Tuple[str, ...] = ("h2",)   # penultimate layer by default
    init_gain: float = 1.0

    def __post_init__(self):
        if self.sigma_embed_dim % 2:
            raise InvalidArgumentError("sigma_embed_dim must be even")
        unknown = set(self.capture_layers) - set(HIDDEN_LAYERS)
        if not self.capture_layers or unknown:
            raise InvalidArgumentError(f"capture_layers must be a non-empty subset of {HIDDEN_LAYERS}")


def edm_coefficients(sigma: np.ndarray, sigma_data: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(c_skip, c_out, c_in); sigma = 0 gives (1, 0, 1/sigma_data)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    total = sigma * sigma + sigma_data * sigma_data
    c_skip = sigma_data * sigma_data / total
    c_out = sigma * sigma_data / np.sqrt(total)
    c_in = 1.0 / np.sqrt(total)
    return c_skip, c_out, c_in


def sigma_embedding(sigma: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal features of log(sigma) / 4, shape (B, dim)."""
    c_noise = np.log(np.maximum(np.asarray(sigma, dtype=np.float64), 1e-12)) / 4.0
    freqs = np.exp(np.linspace(0.0, math.log(64.0), dim // 2))
    angles = c_noise[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def stack_conditions(conditions: Sequence[Condition]) -> Tuple[np.ndarray, np.ndarray]:
    obs = np.stack([np.asarray(c.observation, dtype=np.float64) for c in conditions])
    instr = np.stack([np.asarray(c.instruction, dtype=np.float64) for c in conditions])
    return obs, instr


class GraphDenoiser:
    """
    Base for denoisers defined as a tape graph over a batch.

    Subclasses implement `graph(tape, pv, x, sigma, observation, instruction)`
    returning (x0_pred Var (B, *latent), hidden Var (B, d_v)); inference runs the
    same graph on a non-recording tape.
    """

    params: ParamSet

    def graph(self, tape: Tape, pv: Dict[str, Var], x: np.ndarray, sigma: np.ndarray,
              observation: np.ndarray, instruction: np.ndarray) -> Tuple[Var, Var]:
        raise NotImplementedError

    def denoise_batch(self, x: np.ndarray, sigma: np.ndarray, conditions: Sequence[Condition]) -> Tuple[np.ndarray, np.ndarray]:
        obs, instr = stack_conditions(conditions)
        tape = Tape(record=False)
        pv = tape.bind(self.params)
        x0, hidden = self.graph(tape, pv, np.asarray(x, dtype=np.float64), np.asarray(sigma, dtype=np.float64), obs, instr)
        return x0.value, hidden.value

    def denoise(self, x_sigma: np.ndarray, sigma: float, condition: Condition) -> Tuple[np.ndarray, np.ndarray]:
        if sigma < 0:
            raise InvalidArgumentError(f"sigma must be >= 0, got {sigma}")
        x0, hidden = self.denoise_batch(np.asarray(x_sigma)[None], np.array([sigma]), [condition])
        return x0[0], hidden[0]


class DenoiserNet(GraphDenoiser):
    def __init__(
        self,
        config: DenoiserConfig,
        latent_shape: Tuple[int, int, int, int],
        num_modes: int,
        params: Optional[ParamSet] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        self.config = config
        self.latent_shape = tuple(int(s) for s in latent_shape)
        self.num_modes = int(num_modes)
        frames, c, h, w = self.latent_shape
        self.frames = frames
        self.frame_dim = c * h * w
        self.cond_dim = self.frame_dim + self.num_modes + config.sigma_embed_dim
        self.params = params if params is not None else self._init_params(rng or np.random.default_rng(0))
        expected = self._shapes()
        if self.params.shapes() != expected:
            raise InvalidArgumentError("parameter shapes do not match the architecture")

    # ---------- parameters ----------
    def _shapes(self) -> Dict[str, Tuple[int, ...]]:
        H, D, F = self.config.hidden, self.frame_dim, self.frames
        return {
            "in.w": (D, H), "in.b": (H,),
            "cond.w": (self.cond_dim, H),
            "frame.emb": (F, H),
            "mix.w": (F, F),
            "hid.w": (H, H), "hid.b": (H,),
            "out.w": (H, D), "out.b": (D,),
        }

    def _init_params(self, rng: np.random.Generator) -> ParamSet:
        g = self.config.init_gain
        ps = ParamSet()
        for name, shape in self._shapes().items():
            if name.endswith(".b"):
                ps.add(name, np.zeros(shape))
            elif name == "mix.w":
                ps.add(name, np.eye(shape[0]) + 0.01 * rng.standard_normal(shape))
            elif name == "frame.emb":
                ps.add(name, 0.1 * rng.standard_normal(shape))
            else:
                scale = g / math.sqrt(shape[0]) * (0.1 if name == "out.w" else 1.0)
                ps.add(name, scale * rng.standard_normal(shape))
        return ps

    def architecture(self) -> Dict[str, Any]:
        return {
            "kind": "denoiser_mlp",
            "config": {**asdict(self.config), "capture_layers": list(self.config.capture_layers)},
            "latent_shape": list(self.latent_shape),
            "num_modes": self.num_modes,
        }

    @classmethod
    def from_architecture(cls, arch: Dict[str, Any], params: ParamSet) -> "DenoiserNet":
        cfg = dict(arch["config"])
        cfg["capture_layers"] = tuple(cfg["capture_layers"])
        return cls(DenoiserConfig(**cfg), tuple(arch["latent_shape"]), arch["num_modes"], params=params)

    def copy(self) -> "DenoiserNet":
        return DenoiserNet(self.config, self.latent_shape, self.num_modes, params=self.params.copy())

    @property
    def hidden_dim(self) -> int:
        return self.frames * self.config.hidden * len(self.config.capture_layers)

    # ---------- graph ----------
    def graph(self, tape: Tape, pv: Dict[str, Var], x: np.ndarray, sigma: np.ndarray,
              observation: np.ndarray, instruction: np.ndarray) -> Tuple[Var, Var]:
        if x.ndim != 5 or tuple(x.shape[1:]) != self.latent_shape:
            raise InvalidArgumentError(f"x must be (B, {self.latent_shape}), got {x.shape}")
        B = x.shape[0]
        if sigma.shape != (B,) or observation.shape[0] != B or instruction.shape != (B, self.num_modes):
            raise InvalidArgumentError("sigma / condition batch does not match x")
        F, D, H = self.frames, self.frame_dim, self.config.hidden

        c_skip, c_out, c_in = edm_coefficients(sigma, self.config.sigma_data)
        u = x.reshape(B, F, D) * c_in[:, None, None]
        cond = np.concatenate(
            [observation.reshape(B, -1), instruction, sigma_embedding(sigma, self.config.sigma_embed_dim)], axis=1
        )

        c_proj = T.reshape(T.matmul(cond, pv["cond.w"]), (B, 1, H))
        h1 = T.tanh(T.matmul(u, pv["in.w"]) + pv["in.b"] + c_proj + pv["frame.emb"])
        mixed = T.matmul(pv["mix.w"], h1)
        h2 = T.tanh(T.matmul(mixed, pv["hid.w"]) + pv["hid.b"])
        out = T.matmul(h2, pv["out.w"]) + pv["out.b"]

        skip = x.reshape(B, F, D) * c_skip[:, None, None]
        x0 = T.reshape(skip + out * c_out[:, None, None], (B,) + self.latent_shape)

        layers = {"h1": h1, "h2": h2}
        captured = [T.reshape(layers[name], (B, F * H)) for name in self.config.capture_layers]
        hidden = captured[0] if len(captured) == 1 else T.concat(captured, axis=1)
        return x0, hidden
