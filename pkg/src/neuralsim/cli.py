"""Command-line front end.

    neuralsim run --model DIR --input FILE --mode compare [--config cfg.json]
    neuralsim generate --seed 0 --model-out DIR --input-out FILE

Exit codes: 0 ok, 1 compare divergence, 2 load error, 3 config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .container import (
    ConfigError,
    ContainerError,
    InputBundle,
    load_config,
    load_inputs,
    load_model,
    save_inputs,
    save_model,
)
from .generate import random_inputs, toy_qkfresnet
from .runner import MODES, diverged, render_csv, render_text, run_batch

EXIT_OK, EXIT_DIVERGED, EXIT_LOAD, EXIT_CONFIG = 0, 1, 2, 3

log = logging.getLogger("neuralsim")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neuralsim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a model container on an input bundle")
    run.add_argument("--model", required=True, type=Path)
    run.add_argument("--input", required=True, type=Path)
    run.add_argument("--mode", choices=MODES, default="compare")
    run.add_argument("--config", type=Path, help="JSON simulator/power constants")
    run.add_argument("--report", type=Path, help="write the report here instead of stdout")
    run.add_argument("--emit", choices=("text", "csv"), default="text")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--deterministic-output", action="store_true", help="omit timestamps")

    gen = sub.add_parser("generate", help="write a seeded toy model and random inputs")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--model-out", type=Path, required=True)
    gen.add_argument("--input-out", type=Path)
    gen.add_argument("--count", type=int, default=4)
    gen.add_argument("--density", type=float, default=0.3)
    gen.add_argument("--shape", type=int, nargs=3, default=(3, 16, 16), metavar=("C", "H", "W"))
    gen.add_argument("--width", type=int, default=8)
    gen.add_argument("--classes", type=int, default=10)
    return p


def cmd_run(args) -> int:
    try:
        cfg, power = load_config(args.config)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    if args.workers < 1:
        log.error("config error: --workers must be >= 1")
        return EXIT_CONFIG
    try:
        model = load_model(args.model)
        bundle = load_inputs(args.input)
    except (ContainerError, OSError) as exc:
        log.error("load error: %s", exc)
        return EXIT_LOAD
    if bundle.shape != model.input_shape:
        log.error("load error: inputs are %s, model expects %s", bundle.shape, model.input_shape)
        return EXIT_LOAD
    results = run_batch(args.mode, model, bundle.images, bundle.labels, cfg, power, args.workers)
    if args.emit == "csv":
        text = render_csv(results)
    else:
        text = render_text(args.mode, model, results, deterministic=args.deterministic_output)
    if args.report:
        args.report.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.mode == "compare" and diverged(results):
        log.error("event-driven execution diverged from the reference")
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_generate(args) -> int:
    try:
        model = toy_qkfresnet(args.seed, tuple(args.shape), args.width, args.classes)
    except ValueError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    save_model(model, args.model_out)
    if args.input_out:
        images, labels = random_inputs(model.input_shape, args.count, args.density, args.seed, args.classes)
        save_inputs(InputBundle(images, labels), args.input_out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args)
    return cmd_generate(args)


if __name__ == "__main__":
    sys.exit(main())
