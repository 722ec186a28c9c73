# src/cli/manifest.py
"""Run directory layout, metrics CSV rows and the run manifest."""
from __future__ import annotations
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence
import csv
import io
import json

from pydantic import BaseModel, ConfigDict, Field

from src.utils.helpers import atomic_write_text, file_sha256
from src.utils.logger import get_logger

logger = get_logger(__name__)

STREAMS = ("data", "init", "sft", "rollout", "ddim", "eval", "agm")
POSTTRAIN_COLUMNS = ("step", "mean_reward", "mean_abs_adv", "clip_frac", "ratio_mean", "ratio_max", "eval_l1", "wallclock_s")
SFT_COLUMNS = ("step", "train_loss", "eval_loss", "wallclock_s")
AGM_COLUMNS = ("epoch", "train_loss", "eval_action_mse", "wallclock_s")
SPECTRUM_COLUMNS = ("episode", "index", "singular_value", "cumulative_contribution")


def package_version() -> str:
    try:
        return metadata.version("dyno-lab")
    except metadata.PackageNotFoundError:
        return "0.1.0"


@dataclass(frozen=True)
class RunPaths:
    root: Path

    @property
    def data(self) -> Path:
        return self.root / "data"

    @property
    def dataset(self) -> Path:
        return self.data / "dataset.dyno"

    @property
    def checkpoints(self) -> Path:
        return self.root / "checkpoints"

    @property
    def metrics(self) -> Path:
        return self.root / "metrics"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    @property
    def plots(self) -> Path:
        return self.root / "plots"

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    def checkpoint(self, name: str) -> Path:
        return self.checkpoints / f"{name}.dynp"

    def relative(self, path: Path) -> str:
        try:
            return Path(path).resolve().relative_to(self.root.resolve()).as_posix()
        except ValueError:
            return str(path)


class MetricsRow(BaseModel):
    """One post-training metrics row; fields left None are written as empty cells."""
    model_config = ConfigDict(extra="forbid")

    step: int
    mean_reward: Optional[float] = None
    mean_abs_adv: Optional[float] = None
    clip_frac: Optional[float] = None
    ratio_mean: Optional[float] = None
    ratio_max: Optional[float] = None
    eval_l1: Optional[float] = None
    wallclock_s: float = 0.0


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_csv(rows: Iterable[Mapping[str, Any]], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def write_metrics(path: Path, rows: Iterable[Mapping[str, Any]], columns: Sequence[str]) -> Path:
    path = atomic_write_text(path, metrics_csv(rows, columns))
    logger.info(f"Wrote metrics to {path}")
    return path


def read_metrics(path: Path) -> List[Dict[str, Optional[float]]]:
    with open(path, newline="", encoding="utf-8") as f:
        return [{k: (float(v) if v != "" else None) for k, v in row.items()} for row in csv.DictReader(f)]


class RunManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config_hash: str
    base_hash: str
    master_seed: int
    streams: List[str] = Field(default_factory=lambda: list(STREAMS))
    artifacts: Dict[str, str] = Field(default_factory=dict, description="relative path -> sha256")
    commands: List[str] = Field(default_factory=list)
    version: str = Field(default_factory=package_version)

    @classmethod
    def load_or_new(cls, paths: RunPaths, config_hash: str, base_hash: str, master_seed: int) -> "RunManifest":
        if paths.manifest.exists():
            existing = cls.model_validate_json(paths.manifest.read_text(encoding="utf-8"))
            return existing.model_copy(update={"config_hash": config_hash})
        return cls(config_hash=config_hash, base_hash=base_hash, master_seed=master_seed)

    def record(self, paths: RunPaths, *files: Path) -> None:
        for f in files:
            self.artifacts[paths.relative(f)] = file_sha256(f)

    def save(self, paths: RunPaths) -> Path:
        text = json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)
        return atomic_write_text(paths.manifest, text + "\n")
