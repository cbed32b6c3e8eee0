"""Command-line interface: subcommands over the pipeline steps.

Exit codes: 0 success; 2 missing or malformed input file; 3 configuration
error; 4 training divergence; 1 any other pipeline error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import pipeline
from .config import load_run_config
from .errors import (
    ConfigError,
    CoordinateError,
    DivergenceError,
    DuplicateRecordError,
    NotFoundError,
    ParseError,
    StscError,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DATA = 2
EXIT_CONFIG = 3
EXIT_DIVERGED = 4

_SUBCOMMANDS = (
    ("synth", "generate a synthetic speeds/sensors CSV pair"),
    ("clean", "fill missing values and repair outliers"),
    ("neighbors", "rank and select spatio-temporal neighbor sensors"),
    ("dataset", "build the windowed train/test sample archive"),
    ("pretrain-x", "pretrain the history auto-encoder"),
    ("pretrain-y", "pretrain the horizon auto-encoder"),
    ("train", "cross-connect the auto-encoders and train the predictor"),
    ("predict", "forecast the next hour for one sensor"),
    ("evaluate", "score the model and baselines per horizon"),
    ("stats", "rank-based significance tests across techniques"),
    ("all", "run clean through stats in sequence"),
)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=None,
                        help="JSON run configuration file (default: all "
                             "built-in defaults)")
    common.add_argument("--out", metavar="DIR", default=None,
                        help="output directory; overrides the STSC_OUT "
                             "environment variable and the config file")
    common.add_argument("--seed", metavar="U64", type=int, default=None,
                        help="override the run seed")
    common.add_argument("--threads", metavar="N", type=int, default=None,
                        help="cap worker threads; 1 gives the deterministic "
                             "reference path")

    parser = argparse.ArgumentParser(
        prog="stsc",
        description="Traffic speed forecasting pipeline: neighbor "
                    "selection, windowed datasets, cross-connected "
                    "auto-encoder training, and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="SUBCOMMAND")
    parsers = {}
    for name, help_text in _SUBCOMMANDS:
        parsers[name] = sub.add_parser(name, parents=[common],
                                       help=help_text, description=help_text)
    parsers["predict"].add_argument(
        "--at", metavar="TIME", required=True,
        help='anchor timestamp, e.g. "2024-03-19 14:00"')
    parsers["predict"].add_argument(
        "--sensor", metavar="ID", required=True,
        help="target sensor id, e.g. S03")
    parsers["stats"].add_argument(
        "--horizon", metavar="MIN", type=int, default=None,
        help="horizon in minutes for the per-sensor comparison "
             "(default: evaluation.stats_horizon_min)")
    return parser


def _configure(args):
    cfg = load_run_config(args.config)
    out = args.out or os.environ.get("STSC_OUT")
    if out:
        cfg.paths.out_dir = out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg.validate()


def _run(cfg, args):
    command = args.command
    if command == "synth":
        pipeline.step_synth(cfg)
    elif command == "clean":
        pipeline.step_clean(cfg)
    elif command == "neighbors":
        pipeline.step_neighbors(cfg)
    elif command == "dataset":
        pipeline.step_dataset(cfg)
    elif command == "pretrain-x":
        pipeline.step_pretrain_x(cfg)
    elif command == "pretrain-y":
        pipeline.step_pretrain_y(cfg)
    elif command == "train":
        pipeline.step_train(cfg)
    elif command == "predict":
        for stamp, mph in pipeline.step_predict(cfg, args.at, args.sensor):
            print(f"{stamp} {mph:.2f} mph")
    elif command == "evaluate":
        pipeline.step_evaluate(cfg)
    elif command == "stats":
        pipeline.step_stats(cfg, args.horizon)
    else:
        pipeline.step_all(cfg)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _configure(args)
        _run(cfg, args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NotFoundError, ParseError, DuplicateRecordError,
            CoordinateError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except StscError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
