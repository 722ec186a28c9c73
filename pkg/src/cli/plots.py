# src/cli/plots.py
"""SVG line charts written with matplotlib's Agg backend."""
from __future__ import annotations
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from src.cli.manifest import read_metrics
from src.utils.errors import InvalidArgumentError
from src.utils.logger import get_logger

logger = get_logger(__name__)

# stable element ids and no timestamp, so reruns give identical files
plt.rcParams["svg.hashsalt"] = "dyno"
_SVG_METADATA = {"Date": None, "Creator": None}


def _save(fig, out_path: Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg", metadata=_SVG_METADATA, bbox_inches="tight")
    plt.close(fig)
    logger.info(f"Wrote plot {out_path}")
    return out_path


def plot_series(
    series: Dict[str, Sequence[tuple]],
    out_path: Path,
    *,
    xlabel: str,
    ylabel: str,
    title: str = "",
) -> Path:
    """One line per label; each series is a sequence of (x, y) points."""
    if not series or all(len(points) == 0 for points in series.values()):
        raise InvalidArgumentError("nothing to plot")
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, points in series.items():
        if not points:
            continue
        xs, ys = zip(*points)
        ax.plot(xs, ys, marker="o", markersize=3, linewidth=1.5, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    return _save(fig, out_path)


def plot_metrics(csv_paths: Sequence[Path], out_path: Path, *, x: str = "step", y: str = "eval_l1",
                 labels: Optional[List[str]] = None) -> Path:
    """Curve of column `y` against `x` for each metrics CSV; rows with an empty `y` are skipped."""
    series: Dict[str, List[tuple]] = {}
    for i, path in enumerate(csv_paths):
        rows = read_metrics(Path(path))
        if rows and (x not in rows[0] or y not in rows[0]):
            raise InvalidArgumentError(f"{path} has no '{x}'/'{y}' columns")
        label = labels[i] if labels else Path(path).stem
        series[label] = [(r[x], r[y]) for r in rows if r.get(y) is not None]
    return plot_series(series, out_path, xlabel=x, ylabel=y, title=f"{y} vs {x}")


def plot_spectrum(csv_path: Path, out_path: Path) -> Path:
    """Cumulative contribution of the singular values, one curve per episode."""
    series: Dict[str, List[tuple]] = {}
    for r in read_metrics(Path(csv_path)):
        series.setdefault(f"episode {int(r['episode'])}", []).append((r["index"] + 1, r["cumulative_contribution"]))
    return plot_series(series, out_path, xlabel="singular value index", ylabel="cumulative contribution",
                       title="Jacobian spectrum")
