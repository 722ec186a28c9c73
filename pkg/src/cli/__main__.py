# src/cli/__main__.py
import os

# single-threaded BLAS keeps float reductions in a fixed order; must precede the numpy import
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from typing import List, Optional  # noqa: E402

from dotenv import load_dotenv  # noqa: E402
from pydantic import ValidationError  # noqa: E402

from src.cli import commands  # noqa: E402
from src.utils.errors import DynoError  # noqa: E402
from src.utils.logger import get_logger, set_package_log_level  # noqa: E402

logger = get_logger(__name__)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=os.getenv("DYNO_CONFIG"), help="Run config JSON (defaults built in).")
    parser.add_argument("--out", default=None, help="Run directory (else output_dir, else $DYNO_OUT/<hash>).")
    parser.add_argument("--seed", type=int, default=None, help="Override seeds.master.")
    parser.add_argument("--threads", type=int, default=int(os.getenv("DYNO_THREADS", "1")),
                        help="Rollout worker threads; 1 keeps results bit-exact.")
    parser.add_argument("--force", action="store_true", help="Accept artifacts produced under another config.")
    parser.add_argument("--progress", action="store_true", help="Show tqdm progress bars.")
    parser.add_argument("--debug", action="store_true", help="DEBUG logging.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyno", description="Reward post-training lab for latent video prediction.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="Generate the synthetic dataset.")
    _common(p)
    p.add_argument("--format", choices=("dyno", "json"), default="dyno", help="json also writes dataset.json.")
    p.set_defaults(func=commands.cmd_gen_data)

    p = sub.add_parser("train-sft", help="Supervised denoising fine-tune of the VPM.")
    _common(p)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=commands.cmd_train_sft)

    p = sub.add_parser("posttrain", help="GRPO / DDPO post-training of the VPM.")
    _common(p)
    p.add_argument("--algorithm", choices=("grpo", "ddpo"), default=None)
    p.add_argument("--sde-steps", type=int, choices=(1, 5), default=None)
    p.add_argument("--reward", choices=("latent", "pixel"), default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--group-size", type=int, default=None)
    p.add_argument("--init", default=None, help="Starting VPM checkpoint (default: vpm_sft).")
    p.add_argument("--dump-trajectory", action="store_true", help="Write one eval trajectory as JSON.")
    p.set_defaults(func=commands.cmd_posttrain)

    p = sub.add_parser("train-agm", help="Train the action head on VPM features.")
    _common(p)
    p.add_argument("--vpm", default=None, help="VPM checkpoint providing features (default: vpm_sft).")
    p.add_argument("--tag", default=None, help="Checkpoint tag (default: derived from the VPM name).")
    p.set_defaults(func=commands.cmd_train_agm)

    for name, func, text in (("eval", commands.cmd_eval, "Eval L1 and action MSE."),
                             ("er", commands.cmd_er, "Effective rank of the action Jacobian.")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--vpm", default=None)
        p.add_argument("--agm", default=None)
        p.add_argument("--frozen-agm", action="store_true", help="Pair the VPM with the AGM trained on SFT features.")
        if name == "er":
            p.add_argument("--mode", choices=("reverse", "fd"), default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("plot", help="SVG charts from metrics CSVs.")
    _common(p)
    p.add_argument("--metrics", nargs="*", default=None, help="CSV files (default: everything under metrics/).")
    p.add_argument("--y", default=None, help="Column to plot with --metrics.")
    p.set_defaults(func=commands.cmd_plot)

    p = sub.add_parser("schema", help="JSON Schema of the run config.")
    p.add_argument("--output", default=None, help="Write to file instead of stdout.")
    p.add_argument("--debug", action="store_true")
    p.set_defaults(func=commands.cmd_schema)

    p = sub.add_parser("pipeline", help="gen-data through er and plot in one run directory.")
    _common(p)
    p.set_defaults(func=commands.cmd_pipeline)
    return parser


def _validation_keys(err: ValidationError) -> str:
    return ", ".join(".".join(str(part) for part in e["loc"]) or "<root>" for e in err.errors())


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    if args.debug:
        set_package_log_level(logging.DEBUG)

    try:
        args.func(args)
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        print(f"[ERROR] Invalid configuration keys: {_validation_keys(e)}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        logger.error(str(e))
        print(f"[ERROR] {e}", file=sys.stderr)
        return 1
    except DynoError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"[ERROR] {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
