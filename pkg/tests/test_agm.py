# tests/test_agm.py
import numpy as np
import pytest

from src.agm.policy import (
    ActionBatch,
    ActionDenoiser,
    ActionHeadConfig,
    ActionNoiseSchedule,
    action_head_output,
    action_loss,
    action_loss_graph,
    ddim_sample,
    ddim_timesteps,
    noise_actions,
)
from src.agm.train import AgmConfig, eval_actions, load_agm, save_agm, train_agm
from src.diffcore.gradcheck import grad_check
from src.utils.errors import InvalidArgumentError
from tests.conftest import OracleActionHead


# ------------------------ schedule and noising ------------------------

def test_linear_schedule_shape():
    s = ActionNoiseSchedule.linear(20)
    assert s.K == 20 and s.beta_bar[0] == 1.0
    assert np.all(np.diff(s.beta_bar) < 0)
    assert 0.0 < s.beta_bar[-1] < 1.0


@pytest.mark.parametrize("bb", [[0.9, 0.5], [1.0, 0.5, 0.7], [1.0, -0.1], [1.0]])
def test_schedule_rejects_bad_values(bb):
    with pytest.raises(InvalidArgumentError):
        ActionNoiseSchedule(np.array(bb))


def test_noise_actions_ends():
    a0, eps = np.array([0.5, -1.0]), np.array([2.0, 3.0])
    sched = ActionNoiseSchedule(np.array([1.0, 0.0]))
    assert np.array_equal(noise_actions(a0, 0, eps, sched), a0)
    assert np.array_equal(noise_actions(a0, 1, eps, sched), eps)
    with pytest.raises(InvalidArgumentError):
        noise_actions(a0, 2, eps, sched)


def test_ddim_timesteps():
    ks = ddim_timesteps(20, 10)
    assert ks[0] == 20 and ks[-1] == 0 and len(ks) == 11
    assert np.all(np.diff(ks) < 0)
    with pytest.raises(InvalidArgumentError):
        ddim_timesteps(5, 6)


# ------------------------ loss ------------------------

def _action_batch(a0, B=3, hidden_dim=4, num_modes=2, K=5, seed=0):
    rng = np.random.default_rng(seed)
    A = a0.size
    return ActionBatch(
        a0=np.tile(a0, (B, 1)),
        hidden=rng.standard_normal((B, hidden_dim)),
        instruction=np.eye(num_modes)[rng.integers(0, num_modes, size=B)],
        ks=rng.integers(1, K + 1, size=B),
        eps=rng.standard_normal((B, A)),
    )


def test_oracle_action_loss_is_zero():
    a0 = np.linspace(-1.0, 1.0, 6)
    assert action_loss(OracleActionHead(a0), _action_batch(a0), ActionNoiseSchedule.linear(5)) == 0.0


def test_offset_head_loss_is_offset_squared():
    a0 = np.linspace(-1.0, 1.0, 6)
    loss = action_loss(OracleActionHead(a0 + 0.25), _action_batch(a0), ActionNoiseSchedule.linear(5))
    assert loss == pytest.approx(0.0625, rel=1e-12)


@pytest.mark.parametrize("point", [0, 1, 2])
def test_action_loss_gradients(point):
    net = ActionDenoiser(ActionHeadConfig(hidden=8, step_embed_dim=4), 6, 4, 2, 5, rng=np.random.default_rng(point))
    batch = _action_batch(np.linspace(-1.0, 1.0, 6), seed=point)
    err = grad_check(action_loss_graph(net, batch, ActionNoiseSchedule.linear(5)), net.params, 1e-5)
    assert err < 1e-4


# ------------------------ sampling ------------------------

@pytest.mark.parametrize("K", [1, 5, 20])
def test_ddim_with_an_oracle_head_recovers_a0(K):
    a0 = np.array([0.3, -0.2, 1.5, 0.0])
    eps = np.random.default_rng(K).standard_normal(4)
    out = ddim_sample(OracleActionHead(a0), np.zeros(3), np.array([1.0, 0.0]), min(K, 5), eps,
                      ActionNoiseSchedule.linear(K))
    assert np.allclose(out, a0, atol=1e-6)


def test_single_ddim_step_is_the_head_output():
    net = ActionDenoiser(ActionHeadConfig(hidden=8, step_embed_dim=4), 6, 4, 2, 5, rng=np.random.default_rng(3))
    rng = np.random.default_rng(4)
    h, eps = rng.standard_normal(4), rng.standard_normal(6)
    instr = np.array([0.0, 1.0])
    direct = action_head_output(net, eps[None], np.array([5]), h[None], instr[None])[0]
    assert np.allclose(ddim_sample(net, h, instr, 1, eps, ActionNoiseSchedule.linear(5)), direct, atol=1e-12)


def test_ddim_sample_batch_matches_single():
    net = ActionDenoiser(ActionHeadConfig(hidden=8, step_embed_dim=4), 6, 4, 2, 5, rng=np.random.default_rng(5))
    rng = np.random.default_rng(6)
    h, eps = rng.standard_normal((2, 4)), rng.standard_normal((2, 6))
    instr = np.eye(2)
    sched = ActionNoiseSchedule.linear(5)
    batch = ddim_sample(net, h, instr, 3, eps, sched)
    for b in range(2):
        assert np.allclose(batch[b], ddim_sample(net, h[b], instr[b], 3, eps[b], sched), atol=1e-12)


# ------------------------ training ------------------------

@pytest.fixture
def agm_config():
    return AgmConfig(epochs=2, batch_size=4, hidden=8, step_embed_dim=4, diffusion_steps=5, ddim_steps=3)


def test_agm_config_validation():
    with pytest.raises(InvalidArgumentError):
        AgmConfig(ddim_steps=30, diffusion_steps=20)
    with pytest.raises(InvalidArgumentError):
        AgmConfig(action_scale=0.0)


def test_train_agm_rows_and_repeatability(small_dataset, tiny_net, short_schedule, agm_config):
    evals = small_dataset.episodes[:3]
    a = train_agm(small_dataset, tiny_net, short_schedule, agm_config, eval_set=evals, master_seed=1)
    b = train_agm(small_dataset, tiny_net, short_schedule, agm_config, eval_set=evals, master_seed=1)
    assert [r["epoch"] for r in a.rows] == [0, 1, 2]
    assert [r["train_loss"] for r in a.rows] == [r["train_loss"] for r in b.rows]
    assert [r["eval_action_mse"] for r in a.rows] == [r["eval_action_mse"] for r in b.rows]
    assert a.model.action_size == 6
    assert a.model.net.hidden_dim == tiny_net.hidden_dim


def test_eval_actions_reports_every_mode(small_dataset, tiny_net, short_schedule, agm_config):
    model = train_agm(small_dataset, tiny_net, short_schedule, agm_config).model
    mse, per_mode = eval_actions(model, tiny_net, small_dataset.episodes[:4], short_schedule)
    assert sorted(per_mode) == [0, 1]
    assert mse == pytest.approx(np.mean(list(per_mode.values())), rel=1e-12)
    with pytest.raises(InvalidArgumentError):
        eval_actions(model, tiny_net, [], short_schedule)


def test_frozen_head_sees_a_different_representation(small_dataset, tiny_net, small_world, tiny_config,
                                                     short_schedule, agm_config):
    from src.vpm.denoiser import DenoiserNet
    model = train_agm(small_dataset, tiny_net, short_schedule, agm_config).model
    other = DenoiserNet(tiny_config, small_world.latent_shape, small_world.num_modes, rng=np.random.default_rng(9))
    evals = small_dataset.episodes[:4]
    own, _ = eval_actions(model, tiny_net, evals, short_schedule)
    swapped, _ = eval_actions(model, other, evals, short_schedule)
    assert own != swapped


def test_agm_checkpoint(tmp_path, small_dataset, tiny_net, short_schedule, agm_config):
    model = train_agm(small_dataset, tiny_net, short_schedule, agm_config).model
    path = save_agm(tmp_path / "agm.dynp", model, {"vpm": "vpm_sft"})
    back, meta = load_agm(path)
    assert meta["vpm"] == "vpm_sft"
    assert (back.ddim_steps, back.action_scale, back.horizon, back.dim) == (3, 20.0, 3, 2)
    h = np.ones(model.net.hidden_dim)
    eps = np.linspace(-1.0, 1.0, model.action_size)
    instr = np.array([1.0, 0.0])
    assert np.array_equal(back.sample(h, instr, eps), model.sample(h, instr, eps))


@pytest.mark.slow
def test_training_lowers_action_mse(small_dataset, tiny_net, short_schedule):
    config = AgmConfig(epochs=60, batch_size=4, hidden=32, step_embed_dim=8, diffusion_steps=10, ddim_steps=5, lr=3e-3)
    result = train_agm(small_dataset, tiny_net, short_schedule, config, eval_set=small_dataset, master_seed=0)
    assert result.rows[-1]["eval_action_mse"] < result.rows[0]["eval_action_mse"]


@pytest.mark.slow
def test_posttrained_features_keep_actions_predictable():
    from tests.test_rl import _sft_start
    from src.rl.trainer import PosttrainConfig, posttrain

    config = AgmConfig(epochs=6, batch_size=16, hidden=64, step_embed_dim=8, diffusion_steps=10, ddim_steps=5, lr=1e-3)
    wins = 0
    for seed in range(5):
        sft_net, train, evals, sched = _sft_start(seed)
        post_net = posttrain(sft_net.copy(), train, PosttrainConfig(steps=80, lr=1e-4, conditions_per_step=2,
                                                                   eval_every=80, eval_episodes=16),
                             sched, eval_set=evals, master_seed=seed).net
        base = train_agm(train, sft_net, sched, config, master_seed=seed).model
        retrained = train_agm(train, post_net, sched, config, master_seed=seed).model
        base_mse, _ = eval_actions(base, sft_net, evals, sched, master_seed=seed)
        post_mse, _ = eval_actions(retrained, post_net, evals, sched, master_seed=seed)
        frozen_mse, _ = eval_actions(base, post_net, evals, sched, master_seed=seed)
        assert np.isfinite(frozen_mse)
        wins += post_mse <= base_mse
    assert wins >= 4
