from __future__ import annotations

import argparse
import json
import logging
from typing import Any, Sequence

from imdd_dsp.config import ExperimentConfig, load_experiment_config
from imdd_dsp.errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    ParameterError,
    ShapeError,
    StorageError,
    TrainingDivergence,
    UsageError,
)
from imdd_dsp.harness import commands
from imdd_dsp.logging_config import setup_logging


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4

_CONFIG_ERRORS = (ConfigError, ParameterError, ShapeError, ContractError, DegenerateInputError, UsageError)


def _grid(value: str) -> list[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid grid: {value}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="config.yaml", help="YAML experiment file")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config and IMDD_SEED)")
    common.add_argument("--out", default=None, help="output directory (must exist)")
    common.add_argument("--threads", type=int, default=None, help="worker threads for loads, rows and sweep points")
    common.add_argument("--log-level", default=None)

    parser = argparse.ArgumentParser(prog="imdd-dsp", description="IM/DD link simulation, receivers and BER experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("generate", parents=[common], help="simulate the link and record train/test datasets")
    gen.add_argument("--csv", action="store_true", help="also export d and l of both sets as CSV")
    sub.add_parser("train", parents=[common], help="train the scheme's model (end-to-end or on recorded data)")
    sub.add_parser("retrain", parents=[common], help="optimize the auto-encoder receiver on the recorded training set")
    sub.add_parser("fit-volterra", parents=[common], help="least-squares Volterra equalizer fit")
    ev = sub.add_parser("eval", parents=[common], help="detect the test set and write eval.csv")
    ev.add_argument("--window", type=int, default=None)
    sw = sub.add_parser("sweep", parents=[common], help="BER versus distance or window size")
    sw.add_argument("--kind", choices=("distance", "window"), default=None)
    sw.add_argument("--grid", type=_grid, default=None, help="comma separated distances (km) or windows")
    sub.add_parser("report", parents=[common], help="collect eval and sweep CSVs into summary.csv")
    return parser


def _run(cfg: ExperimentConfig, args: argparse.Namespace) -> dict[str, Any]:
    job = commands.COMMANDS[args.command]
    if args.command == "generate":
        return job(cfg, csv=args.csv)
    if args.command == "eval":
        return job(cfg, window=args.window)
    if args.command == "sweep":
        return job(cfg, kind=args.kind, grid=args.grid)
    return job(cfg)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        cfg = load_experiment_config(args.config).with_overrides(seed=args.seed, out_dir=args.out, threads=args.threads)
        cfg.validate()
        if cfg.out_path.is_dir():
            setup_logging(args.log_level, log_file=cfg.out_path / "imdd.log")
        logger.info("command_start command=%s scheme=%s seed=%s out=%s", args.command, cfg.scheme.value, cfg.seed, cfg.out_dir)
        summary = _run(cfg, args)
    except TrainingDivergence as exc:
        logger.error("command_failed command=%s code=%s error=%s", args.command, exc.code, exc)
        return EXIT_DIVERGED
    except _CONFIG_ERRORS as exc:
        logger.error("command_failed command=%s code=%s error=%s", args.command, exc.code, exc)
        return EXIT_CONFIG
    except (StorageError, OSError) as exc:
        logger.error("command_failed command=%s error=%s", args.command, exc)
        return EXIT_IO
    except Exception:
        logger.exception("command_failed command=%s", args.command)
        return EXIT_FAILURE

    print(json.dumps(summary, ensure_ascii=False, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
