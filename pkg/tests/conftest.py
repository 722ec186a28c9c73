# tests/conftest.py
import os

os.environ.setdefault("DYNO_LOG_TO_FILE", "0")

from typing import Dict, Tuple

import numpy as np
import pytest

from src.agm.policy import ActionNoiseSchedule
from src.agm.train import AgmModel
from src.diffcore import tensor as T
from src.diffcore.params import ParamSet
from src.diffcore.tensor import Tape, Var
from src.samplers.schedules import NoiseSchedule, karras_schedule
from src.synthdyn.world import Condition, Dataset, WorldConfig, make_dataset
from src.vpm.denoiser import DenoiserConfig, DenoiserNet, GraphDenoiser


# ------------------------ worlds and nets ------------------------

@pytest.fixture(autouse=True)
def isolated_output(tmp_path, monkeypatch):
    monkeypatch.setenv("DYNO_OUT", str(tmp_path / "runs"))
    monkeypatch.setenv("DYNO_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setenv("DYNO_LOG_TO_FILE", "0")


@pytest.fixture
def small_world() -> WorldConfig:
    return WorldConfig(num_modes=2, frames=4, frame_size=8, pool=2, action_horizon=3)


@pytest.fixture
def small_dataset(small_world) -> Dataset:
    return make_dataset(12, seed=3, config=small_world)


@pytest.fixture
def schedule() -> NoiseSchedule:
    return karras_schedule(10, 0.02, 10.0)


@pytest.fixture
def short_schedule() -> NoiseSchedule:
    return karras_schedule(4, 0.02, 10.0)


@pytest.fixture
def tiny_config() -> DenoiserConfig:
    return DenoiserConfig(hidden=8, sigma_embed_dim=4)


@pytest.fixture
def tiny_net(small_world, tiny_config) -> DenoiserNet:
    return DenoiserNet(tiny_config, small_world.latent_shape, small_world.num_modes, rng=np.random.default_rng(1))


@pytest.fixture
def condition(small_dataset) -> Condition:
    return small_dataset[0].condition


# ------------------------ test doubles ------------------------

class ConstantDenoiser:
    """Always predicts the stored x0; the hidden feature is a fixed vector."""

    def __init__(self, x0: np.ndarray, hidden_dim: int = 6):
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.hidden = np.linspace(-1.0, 1.0, hidden_dim)

    def denoise(self, x_sigma, sigma, condition):
        return self.x0.copy(), self.hidden.copy()


class ToyDenoiser(GraphDenoiser):
    """x0_pred = a * x + b with two scalar parameters."""

    def __init__(self, a: float = 0.5, b: float = 0.1):
        self.params = ParamSet.from_arrays({"a": np.array([a]), "b": np.array([b])}, dtype=np.float64)

    def graph(self, tape: Tape, pv: Dict[str, Var], x, sigma, observation, instruction) -> Tuple[Var, Var]:
        x0 = pv["a"] * x + pv["b"]
        return x0, tape.constant(x.reshape(x.shape[0], -1))


class LinearActionHead:
    """Predicts a0 = h @ W whatever the noisy action and step."""

    def __init__(self, w: np.ndarray):
        self.params = ParamSet.from_arrays({"w": np.asarray(w)}, dtype=np.float64)

    def graph(self, tape, pv, a_k, ks, hidden, instruction):
        return T.matmul(hidden, pv["w"])


class OracleActionHead:
    """Predicts the stored clean action for every input."""

    def __init__(self, a0: np.ndarray):
        self.a0 = np.asarray(a0, dtype=np.float64)
        self.params = ParamSet.from_arrays({"unused": np.zeros(1)}, dtype=np.float64)

    def graph(self, tape, pv, a_k, ks, hidden, instruction):
        return tape.constant(np.broadcast_to(self.a0, (len(ks), self.a0.size)))


@pytest.fixture
def linear_agm():
    """Linear head wrapped as an AgmModel with unit action scale: J = W^T exactly."""
    def build(w: np.ndarray, horizon: int, dim: int, K: int = 5, steps: int = 5) -> AgmModel:
        return AgmModel(LinearActionHead(w), ActionNoiseSchedule.linear(K), steps, 1.0, horizon, dim)
    return build
