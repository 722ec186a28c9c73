# tests/test_synthdyn.py
import json

import numpy as np
import pytest

from src.synthdyn.dataset_io import decode_dataset, encode_dataset, export_json, load_dataset, save_dataset
from src.synthdyn.world import (
    ARENA_CENTER,
    FULL_TRAIN_SAMPLES,
    WorldConfig,
    decode_latents,
    encode_frames,
    gen_episode,
    make_dataset,
    split,
)
from src.utils.errors import FormatError, InvalidArgumentError, ResourceLimitError


def test_gen_episode_is_deterministic(small_world):
    a = gen_episode(7, 0, small_world)
    b = gen_episode(7, 0, small_world)
    assert np.array_equal(a.expert_latent, b.expert_latent)
    assert np.array_equal(a.expert_actions, b.expert_actions)
    assert np.array_equal(a.frames, b.frames)


def test_drift_mode_moves_at_constant_velocity():
    config = WorldConfig(num_modes=4, frames=8, frame_size=16, action_horizon=5, speed=0.02)
    ep = gen_episode(1, 0, config)
    steps = np.diff(ep.positions[:, 0])
    assert np.allclose(steps, steps[0], atol=1e-12)


def test_orbit_mode_keeps_its_radius():
    config = WorldConfig(num_modes=4, frames=16, frame_size=16, action_horizon=5)
    ep = gen_episode(5, 2, config)
    radii = np.linalg.norm(ep.positions - ARENA_CENTER, axis=1)
    assert np.max(np.abs(radii - radii[0])) < 1e-9


def test_stored_latent_is_the_encoded_frames(small_dataset, small_world):
    for ep in small_dataset:
        assert np.array_equal(encode_frames(ep.frames, pool=small_world.pool), ep.expert_latent)


def test_encode_zero_frames_gives_zero_latent():
    assert not np.any(encode_frames(np.zeros((3, 8, 8)), pool=2))


def test_encode_sees_a_one_cell_shift():
    frames = np.zeros((1, 8, 8))
    frames[0, 2, 2] = 1.0
    shifted = np.roll(frames, 4, axis=2)
    assert not np.array_equal(encode_frames(frames), encode_frames(shifted))


@pytest.mark.parametrize("alpha", [0.5, 2.0, -3.0])
def test_encode_is_linear_in_scale(alpha):
    frames = np.random.default_rng(4).uniform(0.0, 1.0, size=(3, 8, 8))
    scaled = encode_frames(alpha * frames).astype(np.float64)
    assert np.allclose(scaled, alpha * encode_frames(frames).astype(np.float64), atol=1e-6)


def test_encode_rejects_mixed_shapes():
    with pytest.raises(InvalidArgumentError):
        encode_frames([np.zeros((8, 8)), np.zeros((4, 4))])


def test_decode_is_a_right_inverse(small_dataset, small_world):
    z = small_dataset[0].expert_latent
    assert np.allclose(encode_frames(decode_latents(z, small_world.pool), small_world.pool), z, atol=1e-6)


def test_make_dataset_round_robins_modes():
    config = WorldConfig(num_modes=2, frames=4, frame_size=8, action_horizon=3)
    ds = make_dataset(10, seed=0, config=config)
    assert ds.modes().count(0) == 5 and ds.modes().count(1) == 5


def test_make_dataset_respects_memory_cap():
    config = WorldConfig(max_dataset_bytes=1024 * 1024)
    with pytest.raises(ResourceLimitError):
        make_dataset(FULL_TRAIN_SAMPLES, seed=0, config=config)


def test_make_dataset_needs_an_episode(small_world):
    with pytest.raises(InvalidArgumentError):
        make_dataset(0, seed=0, config=small_world)


def test_split_sizes_and_union(small_world):
    ds = make_dataset(10, seed=11, config=small_world)
    train, evals = split(ds, 0.2)
    assert (len(train), len(evals)) == (8, 2)
    assert [e.seed for e in train] + [e.seed for e in evals] == [e.seed for e in ds]
    again = split(ds, 0.2)
    assert [e.seed for e in again[1]] == [e.seed for e in evals]


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1])
def test_split_rejects_bad_fraction(small_dataset, fraction):
    with pytest.raises(InvalidArgumentError):
        split(small_dataset, fraction)


def test_dataset_file_keeps_episode_content(tmp_path, small_dataset):
    path = save_dataset(tmp_path / "d.dyno", small_dataset)
    back = load_dataset(path)
    assert len(back) == len(small_dataset)
    assert back.config == small_dataset.config
    assert np.array_equal(back[3].expert_latent, small_dataset[3].expert_latent)
    assert back[3].frames is None


def test_dataset_bytes_are_identical_across_builds(small_world):
    assert encode_dataset(make_dataset(6, seed=11, config=small_world)) == encode_dataset(
        make_dataset(6, seed=11, config=small_world)
    )


def test_dataset_file_keeps_the_seed(tmp_path, small_world):
    dataset = make_dataset(6, seed=2841337065, config=small_world)
    back = load_dataset(save_dataset(tmp_path / "d.dyno", dataset))
    assert back.seed == 2841337065
    train, evals = split(back, 0.5)
    assert train.seed == evals.seed == 2841337065


def test_dataset_file_rejects_bad_magic(small_dataset):
    data = bytearray(encode_dataset(small_dataset))
    data[:4] = b"NOPE"
    with pytest.raises(FormatError):
        decode_dataset(bytes(data))


def test_dataset_file_rejects_trailing_bytes(small_dataset):
    with pytest.raises(FormatError):
        decode_dataset(encode_dataset(small_dataset) + b"\x00")


def test_json_export(tmp_path, small_dataset):
    payload = json.loads(export_json(tmp_path / "d.json", small_dataset).read_text())
    assert payload["magic"] == "DYNO"
    assert len(payload["episodes"]) == len(small_dataset)
