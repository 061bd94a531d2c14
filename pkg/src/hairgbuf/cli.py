"""Command-line entry points.

Exit codes: 0 success, 1 configuration/weight errors, 2 when one or more
frames were skipped as degenerate at runtime.
"""

from __future__ import annotations

import argparse
import sys

from . import weights as weights_mod
from .pipeline import ConfigError, PipelineConfig, load_config, run_make_dataset, \
    run_sequence


def _apply_overrides(config: PipelineConfig, args) -> PipelineConfig:
    if args.mode:
        config.mode = args.mode
    if args.weights:
        config.weights = args.weights
    if args.out:
        config.out_dir = args.out
    if args.dump_debug:
        config.dump_debug = True
    return config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hairgbuf",
        description="strand G-buffer rendering and reconstruction pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="process a frame sequence")
    run_p.add_argument("--config", required=True, help="pipeline config file")
    run_p.add_argument("--mode", choices=("full", "analytic-only", "spatial-only"),
                       default=None)
    run_p.add_argument("--weights", default=None, help="HGBW weight file")
    run_p.add_argument("--dump-debug", action="store_true", dest="dump_debug")
    run_p.add_argument("--out", default=None, help="output directory")

    val_p = sub.add_parser("validate-weights", help="check an HGBW weight file")
    val_p.add_argument("file")

    ds_p = sub.add_parser("make-dataset", help="emit a training dataset")
    ds_p.add_argument("--config", required=True)
    ds_p.add_argument("--out", required=True)

    args = parser.parse_args(argv)

    if args.command == "validate-weights":
        try:
            report = weights_mod.validate_file(args.file)
        except (weights_mod.MalformedContainerError,
                weights_mod.UnknownTensorError,
                weights_mod.ShapeMismatchError,
                weights_mod.MissingTensorError) as exc:
            print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
            return 1
        print(f"ok: {report}")
        return 0

    try:
        config = load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    if args.command == "make-dataset":
        try:
            return run_make_dataset(config, args.out)
        except (ConfigError, OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1

    config = _apply_overrides(config, args)
    try:
        return run_sequence(config)
    except (ConfigError, weights_mod.MalformedContainerError,
            weights_mod.UnknownTensorError, weights_mod.ShapeMismatchError,
            weights_mod.MissingTensorError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
