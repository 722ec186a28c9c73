# src/cli/commands.py
"""
Subcommand implementations. Every command resolves a run directory, does its
work through the library, writes artifacts atomically and updates manifest.json.
"""
from __future__ import annotations
from argparse import Namespace
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple
import json
import os
import sys
import time

import numpy as np

from src.agm.train import AgmModel, eval_actions, load_agm, save_agm, train_agm
from src.cli.config import RunConfig, load_run_config
from src.cli.manifest import (
    AGM_COLUMNS,
    POSTTRAIN_COLUMNS,
    SFT_COLUMNS,
    SPECTRUM_COLUMNS,
    MetricsRow,
    RunManifest,
    RunPaths,
    write_metrics,
)
from src.cli.plots import plot_metrics, plot_spectrum
from src.metrics.effective_rank import cumulative_contribution, er_report
from src.metrics.evaluate import eval_noise, l1_eval
from src.rl.trainer import posttrain
from src.samplers.hybrid import rollout_hybrid, trajectory_dump
from src.samplers.schedules import NoiseSchedule, schedule_from_config
from src.synthdyn.dataset_io import export_json, load_dataset, save_dataset
from src.synthdyn.world import Dataset, make_dataset, split
from src.utils.errors import ConfigHashMismatchError
from src.utils.helpers import atomic_write_text, rng_stream, stream_int
from src.utils.logger import get_logger
from src.vpm.denoiser import DenoiserNet
from src.vpm.train import load_vpm, save_vpm, train_sft

logger = get_logger(__name__)

SFT_TAG = "sft"


@dataclass
class RunContext:
    config: RunConfig
    paths: RunPaths
    manifest: RunManifest
    threads: int = 1
    progress: bool = False
    force: bool = False

    @property
    def seed(self) -> int:
        return self.config.seeds.master

    @property
    def schedule(self) -> NoiseSchedule:
        return schedule_from_config(self.config.schedule.to_config())

    def artifact_meta(self, stage: str) -> Dict[str, Any]:
        return {"stage": stage, "config_hash": self.config.config_hash(), "base_hash": self.config.base_hash()}

    def finish(self, command: str, *files: Path) -> None:
        self.manifest.record(self.paths, *files)
        self.manifest.commands.append(command)
        self.manifest.save(self.paths)


def _run_root(config: RunConfig, out: Optional[str]) -> Path:
    if out:
        return Path(out)
    if config.output_dir:
        return Path(config.output_dir)
    return Path(os.getenv("DYNO_OUT", "runs")) / config.base_hash()[:12]


def build_context(args: Namespace, **overrides: Dict[str, Any]) -> RunContext:
    config = load_run_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        overrides = {**overrides, "seeds": {"master": args.seed}}
    if overrides:
        config = config.with_overrides(**overrides)
    paths = RunPaths(_run_root(config, getattr(args, "out", None)))
    paths.root.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.load_or_new(paths, config.config_hash(), config.base_hash(), config.seeds.master)
    if manifest.base_hash != config.base_hash() and not getattr(args, "force", False):
        raise ConfigHashMismatchError(
            f"{paths.root} was created with base config {manifest.base_hash[:12]}, "
            f"current config is {config.base_hash()[:12]} (use --force to override)"
        )
    return RunContext(
        config=config,
        paths=paths,
        manifest=manifest,
        threads=getattr(args, "threads", 1) or 1,
        progress=getattr(args, "progress", False),
        force=getattr(args, "force", False),
    )


# ------------------------ shared loading ------------------------

def _load_split(ctx: RunContext) -> Tuple[Dataset, Dataset]:
    if not ctx.paths.dataset.exists():
        raise FileNotFoundError(f"dataset not found: {ctx.paths.dataset} (run `dyno gen-data` first)")
    dataset = load_dataset(ctx.paths.dataset)
    return split(dataset, ctx.config.world.eval_fraction)


def _check_hash(ctx: RunContext, meta: Dict[str, Any], path: Path) -> None:
    found = meta.get("base_hash")
    if found != ctx.config.base_hash():
        msg = f"{path} was produced under config {str(found)[:12]}, current is {ctx.config.base_hash()[:12]}"
        if not ctx.force:
            raise ConfigHashMismatchError(msg + " (use --force to evaluate anyway)")
        logger.warning(msg + " (forced)")


def _load_vpm(ctx: RunContext, path: Optional[str]) -> Tuple[DenoiserNet, Path]:
    ckpt = Path(path) if path else ctx.paths.checkpoint(f"vpm_{SFT_TAG}")
    net, meta = load_vpm(ckpt)
    _check_hash(ctx, meta, ckpt)
    return net, ckpt


def _load_agm(ctx: RunContext, path: Path) -> AgmModel:
    model, meta = load_agm(path)
    _check_hash(ctx, meta, path)
    return model


def _tag(vpm_path: Path) -> str:
    stem = vpm_path.stem
    return stem[4:] if stem.startswith("vpm_") else stem


def _write_json(path: Path, payload: Dict[str, Any]) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ------------------------ commands ------------------------

def cmd_gen_data(args: Namespace) -> Path:
    ctx = build_context(args)
    world = ctx.config.world
    n = world.train_episodes + world.eval_episodes
    start = time.time()
    dataset = make_dataset(n, stream_int(ctx.seed, "data"), world.to_config())
    files = [save_dataset(ctx.paths.dataset, dataset)]
    if getattr(args, "format", "dyno") == "json":
        files.append(export_json(ctx.paths.data / "dataset.json", dataset))
    logger.info(f"gen-data completed in {time.time() - start:.2f}s")
    ctx.finish("gen-data", *files)
    return files[0]


def cmd_train_sft(args: Namespace) -> Path:
    ctx = build_context(args, sft={"steps": getattr(args, "steps", None)})
    train, evals = _load_split(ctx)
    cfg = ctx.config
    result = train_sft(
        train,
        cfg.sft.to_config(cfg.schedule, progress=ctx.progress),
        eval_set=evals,
        denoiser_config=cfg.model.to_config(),
        master_seed=ctx.seed,
    )
    ckpt = save_vpm(ctx.paths.checkpoint(f"vpm_{SFT_TAG}"), result.net,
                    {**ctx.artifact_meta("sft"), "init_grad_error": result.initial_grad_error})
    metrics = write_metrics(ctx.paths.metrics / "sft.csv", result.rows, SFT_COLUMNS)
    ctx.finish("train-sft", ckpt, metrics)
    return ckpt


def cmd_posttrain(args: Namespace) -> Path:
    ctx = build_context(args, posttrain={
        "algorithm": getattr(args, "algorithm", None),
        "sde_steps": getattr(args, "sde_steps", None),
        "reward": getattr(args, "reward", None),
        "steps": getattr(args, "steps", None),
        "group_size": getattr(args, "group_size", None),
    })
    train, evals = _load_split(ctx)
    net, _ = _load_vpm(ctx, getattr(args, "init", None))
    cfg = ctx.config.posttrain.to_config(ctx.config.eval.eval_episodes, threads=ctx.threads, progress=ctx.progress)
    schedule = ctx.schedule

    result = posttrain(net, train, cfg, schedule, eval_set=evals, master_seed=ctx.seed)
    rows = [MetricsRow(**row).model_dump() for row in result.rows]

    label = cfg.label
    ckpt = save_vpm(ctx.paths.checkpoint(f"vpm_{label}"), result.net, {**ctx.artifact_meta("posttrain"), "label": label})
    metrics = write_metrics(ctx.paths.metrics / f"posttrain_{label}.csv", rows, POSTTRAIN_COLUMNS)
    stats = _write_json(ctx.paths.reports / f"posttrain_{label}_stats.json", {
        "label": label,
        "config_hash": ctx.config.config_hash(),
        "steps": cfg.steps,
        "baseline": result.baseline.state() if result.baseline is not None else None,
        "final": result.stats[-1].as_row() if result.stats else None,
        "eval_l1_start": rows[0]["eval_l1"],
        "eval_l1_end": rows[-1]["eval_l1"],
    })
    files = [ckpt, metrics, stats]
    if getattr(args, "dump_trajectory", False) and len(evals):
        ep = evals[0]
        noise = eval_noise(ctx.seed, 0, np.shape(ep.expert_latent), schedule.sigma_max)
        traj = rollout_hybrid(result.net, ep.condition, noise, schedule, rng_stream(ctx.seed, "eval", 2),
                              sde_steps=cfg.sde_steps)
        files.append(_write_json(ctx.paths.reports / f"trajectory_{label}.json", trajectory_dump(traj)))
    ctx.finish(f"posttrain {label}", *files)
    return ckpt


def cmd_train_agm(args: Namespace) -> Path:
    ctx = build_context(args)
    train, evals = _load_split(ctx)
    vpm, vpm_path = _load_vpm(ctx, getattr(args, "vpm", None))
    tag = getattr(args, "tag", None) or _tag(vpm_path)
    result = train_agm(train, vpm, ctx.schedule, ctx.config.agm.to_config(progress=ctx.progress),
                       eval_set=evals[: ctx.config.eval.eval_episodes], master_seed=ctx.seed)
    ckpt = save_agm(ctx.paths.checkpoint(f"agm_{tag}"), result.model,
                    {**ctx.artifact_meta("agm"), "vpm": vpm_path.name})
    metrics = write_metrics(ctx.paths.metrics / f"agm_{tag}.csv", result.rows, AGM_COLUMNS)
    ctx.finish(f"train-agm {tag}", ckpt, metrics)
    return ckpt


def _resolve_agm(ctx: RunContext, args: Namespace, vpm_path: Path) -> Optional[Path]:
    if getattr(args, "agm", None):
        return Path(args.agm)
    if getattr(args, "frozen_agm", False):
        return ctx.paths.checkpoint(f"agm_{SFT_TAG}")
    candidate = ctx.paths.checkpoint(f"agm_{_tag(vpm_path)}")
    return candidate if candidate.exists() else None


def cmd_eval(args: Namespace) -> Path:
    """Eval L1 of the VPM and, when an AGM is available, its action MSE."""
    ctx = build_context(args)
    _, evals = _load_split(ctx)
    vpm, vpm_path = _load_vpm(ctx, getattr(args, "vpm", None))
    agm_path = _resolve_agm(ctx, args, vpm_path)
    episodes = evals.episodes[: ctx.config.eval.eval_episodes]

    report: Dict[str, Any] = {
        "vpm": vpm_path.name,
        "agm": agm_path.name if agm_path else None,
        "frozen_agm": bool(getattr(args, "frozen_agm", False)),
        "episodes": len(episodes),
        "config_hash": ctx.config.config_hash(),
        "l1_eval": l1_eval(vpm, episodes, ctx.schedule, master_seed=ctx.seed),
        "action_mse": None,
        "per_mode_mse": None,
    }
    if agm_path is not None:
        model = _load_agm(ctx, agm_path)
        mse, per_mode = eval_actions(model, vpm, episodes, ctx.schedule, master_seed=ctx.seed)
        report["action_mse"] = mse
        report["per_mode_mse"] = {str(m): v for m, v in per_mode.items()}
    name = f"eval_{_tag(vpm_path)}" + (f"__{agm_path.stem}" if agm_path else "")
    out = _write_json(ctx.paths.reports / f"{name}.json", report)
    logger.info(f"eval {name}: L1 {report['l1_eval']:.5f} action MSE {report['action_mse']}")
    ctx.finish(f"eval {name}", out)
    return out


def cmd_er(args: Namespace) -> Path:
    ctx = build_context(args)
    _, evals = _load_split(ctx)
    vpm, vpm_path = _load_vpm(ctx, getattr(args, "vpm", None))
    agm_path = _resolve_agm(ctx, args, vpm_path)
    if agm_path is None:
        raise FileNotFoundError(f"no AGM checkpoint for {vpm_path.name} (pass --agm or run `dyno train-agm`)")
    model = _load_agm(ctx, agm_path)
    ev = ctx.config.eval
    mode = getattr(args, "mode", None) or ev.jacobian_mode
    report = er_report(model, vpm, evals.episodes[: ev.er_episodes], ctx.schedule,
                       mode=mode, eta=ev.fd_eta, master_seed=ctx.seed)

    name = f"{_tag(vpm_path)}__{agm_path.stem}"
    out = _write_json(ctx.paths.reports / f"er_{name}.json", {**report.to_json(), "mode": mode,
                                                                "config_hash": ctx.config.config_hash()})
    rows: List[Dict[str, Any]] = []
    for e, spec in enumerate(report.spectra):
        for i, (s, c) in enumerate(zip(spec.singular_values, cumulative_contribution(spec))):
            rows.append({"episode": e, "index": i, "singular_value": float(s), "cumulative_contribution": float(c)})
    spectrum = write_metrics(ctx.paths.metrics / f"spectrum_{name}.csv", rows, SPECTRUM_COLUMNS)
    ctx.finish(f"er {name}", out, spectrum)
    return out


def cmd_plot(args: Namespace) -> List[Path]:
    ctx = build_context(args)
    metrics_dir = ctx.paths.metrics
    explicit = getattr(args, "metrics", None)
    outputs: List[Path] = []
    if explicit:
        y = getattr(args, "y", None) or "eval_l1"
        outputs.append(plot_metrics([Path(p) for p in explicit], ctx.paths.plots / f"{y}.svg", y=y))
    else:
        posttrain = sorted(metrics_dir.glob("posttrain_*.csv"))
        if posttrain:
            outputs.append(plot_metrics(posttrain, ctx.paths.plots / "posttrain_eval_l1.svg", y="eval_l1",
                                        labels=[p.stem[len("posttrain_"):] for p in posttrain]))
        if (metrics_dir / "sft.csv").exists():
            outputs.append(plot_metrics([metrics_dir / "sft.csv"], ctx.paths.plots / "sft_loss.svg", y="eval_loss"))
        agm = sorted(metrics_dir.glob("agm_*.csv"))
        if agm:
            outputs.append(plot_metrics(agm, ctx.paths.plots / "agm_action_mse.svg", x="epoch", y="eval_action_mse"))
        for spec in sorted(metrics_dir.glob("spectrum_*.csv")):
            outputs.append(plot_spectrum(spec, ctx.paths.plots / f"{spec.stem}.svg"))
    if not outputs:
        raise FileNotFoundError(f"no metrics CSVs under {metrics_dir}")
    ctx.finish("plot", *outputs)
    return outputs


def cmd_schema(args: Namespace) -> Optional[Path]:
    schema = json.dumps(RunConfig.model_json_schema(), indent=2, sort_keys=True) + "\n"
    target = getattr(args, "output", None)
    if target:
        return atomic_write_text(target, schema)
    sys.stdout.write(schema)
    return None


def cmd_pipeline(args: Namespace) -> Path:
    """gen-data -> train-sft -> posttrain -> train-agm (both VPMs) -> eval -> er -> plot."""
    start = time.time()
    base = vars(args).copy()

    def ns(**extra) -> Namespace:
        return Namespace(**{**base, **extra})

    cmd_gen_data(ns(format="dyno"))
    sft_ckpt = cmd_train_sft(ns(steps=None))
    post_ckpt = cmd_posttrain(ns(init=str(sft_ckpt), steps=None, dump_trajectory=False))
    cmd_train_agm(ns(vpm=str(sft_ckpt), tag=None))
    cmd_train_agm(ns(vpm=str(post_ckpt), tag=None))

    reports = {
        "sft": cmd_eval(ns(vpm=str(sft_ckpt), agm=None, frozen_agm=False)),
        "posttrained": cmd_eval(ns(vpm=str(post_ckpt), agm=None, frozen_agm=False)),
        "posttrained_frozen_agm": cmd_eval(ns(vpm=str(post_ckpt), agm=None, frozen_agm=True)),
    }
    er = {
        "sft": cmd_er(ns(vpm=str(sft_ckpt), agm=None, frozen_agm=False, mode=None)),
        "posttrained": cmd_er(ns(vpm=str(post_ckpt), agm=None, frozen_agm=False, mode=None)),
    }
    cmd_plot(ns(metrics=None, y=None))

    ctx = build_context(args)
    summary = {
        "eval": {k: json.loads(p.read_text(encoding="utf-8")) for k, p in reports.items()},
        "er": {k: json.loads(p.read_text(encoding="utf-8")) for k, p in er.items()},
    }
    out = _write_json(ctx.paths.reports / "summary.json", summary)
    ctx.finish("pipeline", out)
    logger.info(f"Pipeline completed in {time.time() - start:.2f}s under {ctx.paths.root}")
    return out
