# tests/test_cli.py
import csv
import json

import pytest

from src.cli.__main__ import main

TINY_CONFIG = {
    "world": {"num_modes": 2, "frames": 4, "frame_size": 8, "pool": 2, "action_horizon": 3,
              "train_episodes": 10, "eval_episodes": 4},
    "model": {"hidden": 8, "sigma_embed_dim": 4},
    "schedule": {"steps": 4},
    "sft": {"steps": 4, "batch_size": 4, "lr": 1e-3, "eval_every": 2},
    "posttrain": {"steps": 2, "group_size": 2, "conditions_per_step": 1, "eval_every": 1, "lr": 1e-4},
    "agm": {"epochs": 1, "batch_size": 4, "hidden": 8, "diffusion_steps": 5, "ddim_steps": 3},
    "eval": {"eval_episodes": 2, "er_episodes": 2},
}

POST = "grpo-1sde-latent"


def _write_config(path, payload=None):
    path.write_text(json.dumps(payload or TINY_CONFIG), encoding="utf-8")
    return str(path)


def _run(config, out, *args):
    return main([args[0], "--config", config, "--out", str(out), *args[1:]])


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """One run directory taken through every stage."""
    base = tmp_path_factory.mktemp("cli")
    config = _write_config(base / "tiny.json")
    out = base / "run"
    for argv in (
        ["gen-data"],
        ["train-sft"],
        ["posttrain"],
        ["train-agm"],
        ["train-agm", "--vpm", str(out / "checkpoints" / f"vpm_{POST}.dynp")],
        ["eval"],
        ["eval", "--vpm", str(out / "checkpoints" / f"vpm_{POST}.dynp")],
        ["eval", "--vpm", str(out / "checkpoints" / f"vpm_{POST}.dynp"), "--frozen-agm"],
        ["er", "--mode", "fd"],
        ["er", "--vpm", str(out / "checkpoints" / f"vpm_{POST}.dynp")],
        ["plot"],
    ):
        assert _run(config, out, *argv) == 0, argv
    return config, out


def test_stages_write_their_artifacts(run_dir):
    _, out = run_dir
    for rel in (
        "data/dataset.dyno",
        "checkpoints/vpm_sft.dynp",
        f"checkpoints/vpm_{POST}.dynp",
        "checkpoints/agm_sft.dynp",
        f"checkpoints/agm_{POST}.dynp",
        "metrics/sft.csv",
        f"metrics/posttrain_{POST}.csv",
        f"reports/posttrain_{POST}_stats.json",
        "plots/posttrain_eval_l1.svg",
        "plots/sft_loss.svg",
        "plots/agm_action_mse.svg",
    ):
        assert (out / rel).exists(), rel
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["commands"][0] == "gen-data"
    assert "plot" in manifest["commands"]


def test_posttrain_metrics_rows(run_dir):
    _, out = run_dir
    with open(out / "metrics" / f"posttrain_{POST}.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["step"] for r in rows] == ["0", "1", "2"]
    assert rows[0]["mean_reward"] == "" and rows[1]["mean_reward"] != ""
    assert all(r["eval_l1"] != "" for r in rows)


def test_eval_reports(run_dir):
    _, out = run_dir
    sft = json.loads((out / "reports" / "eval_sft__agm_sft.json").read_text())
    assert sft["vpm"] == "vpm_sft.dynp" and sft["agm"] == "agm_sft.dynp"
    assert sft["episodes"] == 2 and sft["l1_eval"] > 0
    assert set(sft["per_mode_mse"]) <= {"0", "1"}

    frozen = json.loads((out / "reports" / f"eval_{POST}__agm_sft.json").read_text())
    assert frozen["frozen_agm"] is True
    own = json.loads((out / "reports" / f"eval_{POST}__agm_{POST}.json").read_text())
    assert own["agm"] == f"agm_{POST}.dynp"
    assert own["l1_eval"] == frozen["l1_eval"]


def test_eval_is_repeatable(run_dir):
    config, out = run_dir
    path = out / "reports" / "eval_sft__agm_sft.json"
    before = path.read_text()
    assert _run(config, out, "eval") == 0
    assert path.read_text() == before


def test_er_reports(run_dir):
    _, out = run_dir
    fd = json.loads((out / "reports" / "er_sft__agm_sft.json").read_text())
    assert fd["mode"] == "fd"
    assert 1.0 <= fd["avg_er"] <= min(fd["d_a"], fd["d_v"])
    assert fd["d_a"] == 6
    rev = json.loads((out / "reports" / f"er_{POST}__agm_{POST}.json").read_text())
    assert rev["mode"] == "reverse" and len(rev["per_episode"]) == 2
    assert (out / "metrics" / f"spectrum_{POST}__agm_{POST}.csv").exists()


def test_ddpo_ablation_shares_the_run(run_dir):
    config, out = run_dir
    assert _run(config, out, "posttrain", "--algorithm", "ddpo", "--steps", "1") == 0
    stats = json.loads((out / "reports" / "posttrain_ddpo-1sde-latent_stats.json").read_text())
    assert stats["steps"] == 1
    assert stats["baseline"]["value"] is not None
    assert (out / "checkpoints" / "vpm_ddpo-1sde-latent.dynp").exists()


def test_trajectory_dump(run_dir):
    config, out = run_dir
    assert _run(config, out, "posttrain", "--steps", "1", "--reward", "pixel", "--dump-trajectory") == 0
    dump = json.loads((out / "reports" / "trajectory_grpo-1sde-pixel.json").read_text())
    assert dump["stochastic_steps"] == 1
    assert len(dump["latent_norms"]) == 5


def test_plot_explicit_column(run_dir):
    config, out = run_dir
    csv_path = out / "metrics" / f"posttrain_{POST}.csv"
    assert _run(config, out, "plot", "--metrics", str(csv_path), "--y", "mean_reward") == 0
    assert (out / "plots" / "mean_reward.svg").read_text().lstrip().startswith("<?xml")


def test_schema(tmp_path):
    target = tmp_path / "schema.json"
    assert main(["schema", "--output", str(target)]) == 0
    schema = json.loads(target.read_text())
    assert {"world", "posttrain", "agm", "eval"} <= set(schema["properties"])


def test_unknown_config_key_fails(tmp_path, capsys):
    config = _write_config(tmp_path / "bad.json", {"world": {"num_modes": 2, "bogus": 1}})
    assert main(["gen-data", "--config", config, "--out", str(tmp_path / "run")]) == 1
    assert "world.bogus" in capsys.readouterr().err


def test_missing_config_file_fails(tmp_path):
    assert main(["gen-data", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "run")]) == 1


def test_missing_dataset_fails(tmp_path, capsys):
    config = _write_config(tmp_path / "tiny.json")
    assert _run(config, tmp_path / "run", "train-sft") == 1
    assert "gen-data" in capsys.readouterr().err


def test_foreign_run_directory_is_refused(tmp_path, capsys):
    config = _write_config(tmp_path / "tiny.json")
    out = tmp_path / "run"
    assert _run(config, out, "gen-data") == 0
    other = {**TINY_CONFIG, "world": {**TINY_CONFIG["world"], "speed": 0.05}}
    other_config = _write_config(tmp_path / "other.json", other)
    assert _run(other_config, out, "gen-data") == 1
    assert "ConfigHashMismatchError" in capsys.readouterr().err
    assert _run(other_config, out, "gen-data", "--force") == 0


def test_default_run_directory_comes_from_the_config_hash(tmp_path):
    config = _write_config(tmp_path / "tiny.json")
    assert main(["gen-data", "--config", config]) == 0
    runs = list((tmp_path / "runs").iterdir())
    assert len(runs) == 1 and len(runs[0].name) == 12
    assert (runs[0] / "data" / "dataset.dyno").exists()


def _without_wallclock(path):
    with open(path, newline="") as f:
        return [{k: v for k, v in row.items() if k != "wallclock_s"} for row in csv.DictReader(f)]


@pytest.mark.slow
def test_pipeline_is_reproducible(tmp_path):
    config = _write_config(tmp_path / "tiny.json")
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(config, a, "pipeline") == 0
    assert _run(config, b, "pipeline") == 0
    assert (a / "reports" / "summary.json").read_text() == (b / "reports" / "summary.json").read_text()
    for name in ("sft.csv", f"posttrain_{POST}.csv", "agm_sft.csv"):
        assert _without_wallclock(a / "metrics" / name) == _without_wallclock(b / "metrics" / name)
