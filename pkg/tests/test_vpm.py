# tests/test_vpm.py
import numpy as np
import pytest

from src.diffcore.gradcheck import grad_check
from src.samplers.hybrid import rollout_ode
from src.synthdyn.world import WorldConfig, make_dataset
from src.utils.errors import InvalidArgumentError
from src.utils.helpers import rng_stream
from src.vpm.denoiser import DenoiserConfig, DenoiserNet, edm_coefficients
from src.vpm.train import (
    SftBatch,
    SftConfig,
    extract_representation,
    load_vpm,
    make_sft_batch,
    save_vpm,
    sft_loss,
    sft_loss_graph,
    train_sft,
)
from tests.conftest import ConstantDenoiser


def test_edm_coefficients_at_zero_sigma():
    c_skip, c_out, c_in = edm_coefficients(np.array([0.0]), 0.5)
    assert (c_skip[0], c_out[0], c_in[0]) == (1.0, 0.0, 2.0)


def test_zero_sigma_returns_the_input(tiny_net, condition, small_world):
    x = np.random.default_rng(0).standard_normal(small_world.latent_shape)
    x0, _ = tiny_net.denoise(x, 0.0, condition)
    assert np.array_equal(x0, x)


def test_denoise_is_repeatable(tiny_net, condition, small_world):
    x = np.random.default_rng(1).standard_normal(small_world.latent_shape)
    a, ha = tiny_net.denoise(x, 1.3, condition)
    b, hb = tiny_net.denoise(x, 1.3, condition)
    assert np.array_equal(a, b) and np.array_equal(ha, hb)
    assert ha.shape == (tiny_net.hidden_dim,)


def test_denoise_rejects_negative_sigma(tiny_net, condition, small_world):
    with pytest.raises(InvalidArgumentError):
        tiny_net.denoise(np.zeros(small_world.latent_shape), -0.1, condition)


def test_batch_matches_single_calls(tiny_net, small_dataset, small_world):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3,) + small_world.latent_shape)
    sigma = np.array([0.1, 1.0, 5.0])
    conds = [small_dataset[i].condition for i in range(3)]
    batch, _ = tiny_net.denoise_batch(x, sigma, conds)
    for b in range(3):
        single, _ = tiny_net.denoise(x[b], float(sigma[b]), conds[b])
        assert np.allclose(batch[b], single, atol=1e-12)


def test_capture_both_layers(small_world, condition):
    net = DenoiserNet(DenoiserConfig(hidden=8, sigma_embed_dim=4, capture_layers=("h1", "h2")),
                      small_world.latent_shape, small_world.num_modes)
    _, h = net.denoise(np.zeros(small_world.latent_shape), 1.0, condition)
    assert h.shape == (2 * small_world.frames * 8,)


def test_config_rejects_unknown_layer():
    with pytest.raises(InvalidArgumentError):
        DenoiserConfig(capture_layers=("h3",))


def _batch(dataset, n=4, seed=0):
    return make_sft_batch(dataset.episodes, rng_stream(seed, "sft", 0), n, 0.02, 10.0)


def test_oracle_loss_is_zero(small_dataset):
    batch = _batch(small_dataset, n=1)
    oracle = ConstantDenoiser(batch.x0[0])
    assert sft_loss(oracle, batch) == 0.0


def test_offset_oracle_loss_is_delta_squared(small_dataset):
    batch = _batch(small_dataset, n=1)
    oracle = ConstantDenoiser(batch.x0[0] + 0.3)
    assert sft_loss(oracle, batch) == pytest.approx(0.09, rel=1e-12)


def test_loss_is_non_negative(tiny_net, small_dataset):
    for seed in range(3):
        assert sft_loss(tiny_net, _batch(small_dataset, seed=seed)) >= 0.0


def test_batch_rejects_mismatch(small_dataset):
    b = _batch(small_dataset)
    with pytest.raises(InvalidArgumentError):
        SftBatch(x0=b.x0, conditions=b.conditions, sigma=b.sigma[:2], eps=b.eps)


@pytest.mark.parametrize("point", [0, 1, 2])
def test_sft_loss_gradients(small_world, tiny_config, small_dataset, point):
    net = DenoiserNet(tiny_config, small_world.latent_shape, small_world.num_modes, rng=np.random.default_rng(10 + point))
    err = grad_check(sft_loss_graph(net, _batch(small_dataset, n=2, seed=point)), net.params, 1e-5)
    assert err < 1e-4


def test_train_sft_rows_and_repeatability(small_dataset, tiny_config):
    cfg = SftConfig(steps=6, batch_size=4, lr=1e-3, eval_every=3, eval_batch=4)
    a = train_sft(small_dataset, cfg, denoiser_config=tiny_config, master_seed=5)
    b = train_sft(small_dataset, cfg, denoiser_config=tiny_config, master_seed=5)
    assert [r["step"] for r in a.rows] == [0, 3, 6]
    assert [r["eval_loss"] for r in a.rows] == [r["eval_loss"] for r in b.rows]
    assert a.initial_grad_error < 1e-4


def test_train_sft_needs_data(small_dataset, small_world):
    empty = type(small_dataset)(episodes=(), config=small_world)
    with pytest.raises(InvalidArgumentError):
        train_sft(empty, SftConfig(steps=1))


@pytest.mark.slow
def test_sft_halves_eval_loss():
    world = WorldConfig(num_modes=1, frames=4, frame_size=8, action_horizon=3)
    data = make_dataset(8, seed=1, config=world)
    result = train_sft(data, SftConfig(steps=2000, batch_size=8, lr=1e-3, eval_every=500),
                       denoiser_config=DenoiserConfig(hidden=16, sigma_embed_dim=8), master_seed=0)
    assert result.rows[-1]["eval_loss"] <= 0.5 * result.rows[0]["eval_loss"]


def test_representation_matches_rollout_ode(tiny_net, condition, schedule, small_world):
    noise = np.random.default_rng(3).standard_normal(small_world.latent_shape) * schedule.sigma_max
    h = extract_representation(tiny_net, condition, noise, schedule)
    _, h_ode = rollout_ode(tiny_net, condition, noise, schedule)
    assert np.array_equal(h, h_ode)
    assert np.array_equal(h, extract_representation(tiny_net, condition, noise, schedule))


def test_representation_depends_on_condition(tiny_net, small_dataset, schedule, small_world):
    noise = np.random.default_rng(4).standard_normal(small_world.latent_shape) * schedule.sigma_max
    a = extract_representation(tiny_net, small_dataset[0].condition, noise, schedule)
    b = extract_representation(tiny_net, small_dataset[1].condition, noise, schedule)
    assert not np.array_equal(a, b)


def test_vpm_checkpoint(tmp_path, tiny_net, condition, small_world):
    path = save_vpm(tmp_path / "vpm.dynp", tiny_net, {"config_hash": "abc"})
    net, meta = load_vpm(path)
    assert meta["config_hash"] == "abc"
    x = np.ones(small_world.latent_shape)
    assert np.array_equal(net.denoise(x, 1.0, condition)[0], tiny_net.denoise(x, 1.0, condition)[0])
