# src/agm/policy.py
"""
Diffusion policy over flattened action sequences.

Noising follows a_k = sqrt(bb_k) a0 + sqrt(1 - bb_k) eps with the cumulative
coefficient bb_k written where DDPM writes alpha-bar; bb_0 = 1 is the clean end.
The head predicts a0 directly. `ddim_chain` is written with plain arithmetic so
it runs on numpy arrays or on tape Vars (for d a / d h).
"""
from __future__ import annotations
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple
import math

import numpy as np

from src.diffcore import tensor as T
from src.diffcore.params import ParamSet
from src.diffcore.tensor import Tape, Var
from src.utils.errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class ActionNoiseSchedule:
    beta_bar: np.ndarray    # (K + 1,), beta_bar[0] = 1, non-increasing, in [0, 1]

    def __post_init__(self):
        bb = np.asarray(self.beta_bar, dtype=np.float64)
        if bb.ndim != 1 or bb.size < 2:
            raise InvalidArgumentError("an action noise schedule needs K >= 1")
        if bb[0] != 1.0:
            raise InvalidArgumentError("beta_bar[0] must be 1 (clean actions)")
        if np.any(bb < 0) or np.any(bb > 1) or np.any(np.diff(bb) > 0):
            raise InvalidArgumentError("beta_bar must be non-increasing within [0, 1]")
        bb.setflags(write=False)
        object.__setattr__(self, "beta_bar", bb)

    @property
    def K(self) -> int:
        return self.beta_bar.size - 1

    @classmethod
    def linear(cls, K: int = 20, beta_start: float = 0.01, beta_end: float = 0.5) -> "ActionNoiseSchedule":
        """Per-step betas linear in k, accumulated as bb_k = prod_{j <= k} (1 - beta_j)."""
        if K < 1:
            raise InvalidArgumentError(f"K must be >= 1, got {K}")
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise InvalidArgumentError("need 0 < beta_start <= beta_end < 1")
        betas = np.linspace(beta_start, beta_end, K)
        return cls(np.concatenate([[1.0], np.cumprod(1.0 - betas)]))

    def to_list(self) -> List[float]:
        return [float(b) for b in self.beta_bar]


def ddim_timesteps(K: int, steps: int) -> List[int]:
    """Strided sub-sequence K = k_0 > k_1 > ... > k_steps = 0."""
    if not (1 <= steps <= K):
        raise InvalidArgumentError(f"ddim steps must lie in [1, {K}], got {steps}")
    ks = np.round(np.linspace(K, 0, steps + 1)).astype(int)
    return [int(k) for k in ks]


def noise_actions(a0: np.ndarray, k: int, eps: np.ndarray, schedule: ActionNoiseSchedule) -> np.ndarray:
    if not (0 <= k <= schedule.K):
        raise InvalidArgumentError(f"k must lie in [0, {schedule.K}], got {k}")
    if np.shape(a0) != np.shape(eps):
        raise InvalidArgumentError(f"eps shape {np.shape(eps)} != action shape {np.shape(a0)}")
    bb = schedule.beta_bar[k]
    return math.sqrt(bb) * np.asarray(a0) + math.sqrt(1.0 - bb) * np.asarray(eps)


def noise_actions_batch(a0: np.ndarray, ks: np.ndarray, eps: np.ndarray, schedule: ActionNoiseSchedule) -> np.ndarray:
    bb = schedule.beta_bar[np.asarray(ks)][:, None]
    return np.sqrt(bb) * a0 + np.sqrt(1.0 - bb) * eps


def step_embedding(ks: np.ndarray, K: int, dim: int) -> np.ndarray:
    t = np.asarray(ks, dtype=np.float64)[:, None] / K
    freqs = np.exp(np.linspace(0.0, math.log(100.0), dim // 2))[None, :]
    return np.concatenate([np.sin(t * freqs), np.cos(t * freqs)], axis=1)


@dataclass(frozen=True)
class ActionHeadConfig:
    hidden: int = 128
    step_embed_dim: int = 16
    init_gain: float = 1.0


class ActionDenoiser:
    """D(a_k, k, (h, l)) -> a0 prediction, an MLP with the inputs fused at the first layer."""

    def __init__(
        self,
        config: ActionHeadConfig,
        action_dim: int,
        hidden_dim: int,
        num_modes: int,
        K: int,
        params: Optional[ParamSet] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        self.config = config
        self.action_dim = int(action_dim)     # flattened horizon * dim
        self.hidden_dim = int(hidden_dim)
        self.num_modes = int(num_modes)
        self.K = int(K)
        self.params = params if params is not None else self._init_params(rng or np.random.default_rng(0))
        if self.params.shapes() != self._shapes():
            raise InvalidArgumentError("parameter shapes do not match the action head architecture")

    def _shapes(self) -> Dict[str, Tuple[int, ...]]:
        H = self.config.hidden
        return {
            "a.w": (self.action_dim, H),
            "k.w": (self.config.step_embed_dim, H),
            "h.w": (self.hidden_dim, H),
            "l.w": (self.num_modes, H),
            "in.b": (H,),
            "hid.w": (H, H), "hid.b": (H,),
            "out.w": (H, self.action_dim), "out.b": (self.action_dim,),
        }

    def _init_params(self, rng: np.random.Generator) -> ParamSet:
        ps = ParamSet()
        fan_in = self.action_dim + self.config.step_embed_dim + self.hidden_dim + self.num_modes
        for name, shape in self._shapes().items():
            if name.endswith(".b"):
                ps.add(name, np.zeros(shape))
                continue
            fan = fan_in if name in ("a.w", "k.w", "h.w", "l.w") else shape[0]
            ps.add(name, self.config.init_gain / math.sqrt(fan) * rng.standard_normal(shape))
        return ps

    def architecture(self) -> Dict[str, Any]:
        return {
            "kind": "action_mlp",
            "config": asdict(self.config),
            "action_dim": self.action_dim,
            "hidden_dim": self.hidden_dim,
            "num_modes": self.num_modes,
            "K": self.K,
        }

    @classmethod
    def from_architecture(cls, arch: Dict[str, Any], params: ParamSet) -> "ActionDenoiser":
        return cls(ActionHeadConfig(**arch["config"]), arch["action_dim"], arch["hidden_dim"],
                   arch["num_modes"], arch["K"], params=params)

    def graph(self, tape: Tape, pv: Dict[str, Var], a_k: Any, ks: np.ndarray, hidden: Any, instruction: np.ndarray) -> Var:
        emb = step_embedding(ks, self.K, self.config.step_embed_dim)
        pre = (T.matmul(a_k, pv["a.w"]) + T.matmul(emb, pv["k.w"]) + T.matmul(hidden, pv["h.w"])
               + T.matmul(instruction, pv["l.w"]) + pv["in.b"])
        z = T.tanh(T.matmul(T.tanh(pre), pv["hid.w"]) + pv["hid.b"])
        return T.matmul(z, pv["out.w"]) + pv["out.b"]


def action_head_output(net: Any, a_k: np.ndarray, ks: np.ndarray, hidden: np.ndarray, instruction: np.ndarray) -> np.ndarray:
    tape = Tape(record=False)
    pv = tape.bind(net.params)
    return net.graph(tape, pv, np.asarray(a_k, dtype=np.float64), ks, np.asarray(hidden, dtype=np.float64),
                     np.asarray(instruction, dtype=np.float64)).value


@dataclass(frozen=True, eq=False)
class ActionBatch:
    a0: np.ndarray            # (B, A) normalized actions
    hidden: np.ndarray        # (B, d_v)
    instruction: np.ndarray   # (B, M)
    ks: np.ndarray            # (B,) in [1, K]
    eps: np.ndarray           # (B, A)


def action_loss_graph(net: Any, batch: ActionBatch, schedule: ActionNoiseSchedule):
    a_k = noise_actions_batch(batch.a0, batch.ks, batch.eps, schedule)

    def graph(tape: Tape, pv: Dict[str, Var]) -> Var:
        pred = net.graph(tape, pv, a_k, batch.ks, batch.hidden, batch.instruction)
        return T.mean(T.square(pred - batch.a0))

    return graph


def action_loss(net: Any, batch: ActionBatch, schedule: ActionNoiseSchedule) -> float:
    """Mean over elements and batch of (D(a_k, k, c) - a0)^2."""
    value, _ = T.forward(action_loss_graph(net, batch, schedule), net.params, record=False)
    return float(value)


def _check_ddim(schedule: ActionNoiseSchedule, ks: List[int]) -> None:
    for k in ks[:-1]:
        if k > 0 and schedule.beta_bar[k] >= 1.0:
            raise InvalidArgumentError(f"degenerate action schedule: beta_bar[{k}] == 1")


def ddim_chain(net: Any, tape: Tape, pv: Dict[str, Var], eps: np.ndarray, hidden: Any, instruction: np.ndarray,
               schedule: ActionNoiseSchedule, steps: int) -> Any:
    """Deterministic DDIM recursion from a_K = eps down to k = 0; returns a_0."""
    ks = ddim_timesteps(schedule.K, steps)
    _check_ddim(schedule, ks)
    B = np.shape(eps)[0]
    a: Any = eps
    for k, k_next in zip(ks[:-1], ks[1:]):
        bb, bn = float(schedule.beta_bar[k]), float(schedule.beta_bar[k_next])
        a0_hat = net.graph(tape, pv, a, np.full(B, k), hidden, instruction)
        eps_hat = (a - math.sqrt(bb) * a0_hat) / math.sqrt(1.0 - bb)
        a = math.sqrt(bn) * a0_hat + math.sqrt(1.0 - bn) * eps_hat
    return a


def ddim_sample(net: Any, hidden: np.ndarray, instruction: np.ndarray, steps: int, eps: np.ndarray,
                schedule: ActionNoiseSchedule) -> np.ndarray:
    """Batched (B, A) or single (A,) DDIM sample in normalized action units."""
    if steps < 1:
        raise InvalidArgumentError(f"steps must be >= 1, got {steps}")
    single = np.ndim(eps) == 1
    eps2 = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    h2 = np.atleast_2d(np.asarray(hidden, dtype=np.float64))
    l2 = np.atleast_2d(np.asarray(instruction, dtype=np.float64))
    tape = Tape(record=False)
    pv = tape.bind(net.params)
    out = ddim_chain(net, tape, pv, eps2, h2, l2, schedule, steps)
    value = out.value if isinstance(out, Var) else np.asarray(out)
    return value[0] if single else value
