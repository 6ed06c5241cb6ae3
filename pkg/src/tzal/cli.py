"""Command line front end.

Subcommands: run (adaptive localization), baseline (frame-wise zero-shot),
eval (tIoU/mAP tables), synth (benchmark generator), grad-check (finite
difference verification of the analytic gradients).

Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure. The TZAL_LOG
environment variable (error|info|debug) sets log verbosity. Given identical
inputs and seed every subcommand writes byte-identical outputs; --threads
only changes wall time.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import featio, metrics, pipeline, synth
from .featio import DataFormatError
from .numcore import NumericError, random_gradient_trial

log = logging.getLogger("tzal.cli")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = os.environ.get("TZAL_LOG", "info").lower()
    if level not in _LOG_LEVELS:
        print(f"warning: TZAL_LOG must be one of {sorted(_LOG_LEVELS)}, got {level!r}",
              file=sys.stderr)
        level = "info"
    logging.basicConfig(level=_LOG_LEVELS[level],
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


class UsageError(Exception):
    pass


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


def _non_negative(kind):
    def parse(text):
        value = kind(text)
        if value < 0:
            raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
        return value
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tzal",
        description="Test-time adaptation for zero-shot temporal action "
                    "localization on pre-extracted embeddings.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="localize every video in a manifest")
    run.add_argument("--manifest", required=True)
    run.add_argument("--out", required=True, help="prediction JSON path")
    run.add_argument("--steps", type=_non_negative(int), default=50,
                     help="adaptation steps per video (0 = no adaptation)")
    run.add_argument("--k", type=_positive(int), default=4,
                     help="positive/negative samples per step")
    run.add_argument("--lr", type=_positive(float), default=1e-5)
    run.add_argument("--alpha", type=float, default=0.5,
                     help="suppression keep fraction threshold")
    run.add_argument("--beta", type=float, default=0.75,
                     help="caption similarity binarization threshold")
    run.add_argument("--jitter", type=_non_negative(int), default=None,
                     help="selection jitter in frames (default: 5%% of bin width)")
    run.add_argument("--window", type=_positive(int), default=5,
                     help="odd moving-average window for frame scores")
    run.add_argument("--subtract-pseudo-label", action="store_true",
                     help="subtract the pseudo-label text from projected frames")
    run.add_argument("--tau-sigmoid", action="store_true",
                     help="score frames with logistic(tau * cos) so tau adapts")
    oracle = run.add_mutually_exclusive_group()
    oracle.add_argument("--oracle-class", action="store_true",
                        help="use the majority ground-truth label as pseudo-label")
    oracle.add_argument("--oracle-count", action="store_true",
                        help="keep exactly the annotated number of proposals")
    oracle.add_argument("--oracle-selection", action="store_true",
                        help="draw positives/negatives from the annotated extent")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--threads", type=_positive(int), default=1)
    run.set_defaults(func=cmd_run)

    base = sub.add_parser("baseline", help="frame-wise zero-shot baseline")
    base.add_argument("--manifest", required=True)
    base.add_argument("--out", required=True)
    base.add_argument("--threshold", type=float, default=0.8,
                      help="foreground probability threshold")
    base.add_argument("--scale", type=_positive(float), default=100.0,
                      help="softmax temperature applied to cosines")
    base.add_argument("--threads", type=_positive(int), default=1)
    base.set_defaults(func=cmd_baseline)

    ev = sub.add_parser("eval", help="score predictions against annotations")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True, help="annotation JSON")
    ev.add_argument("--grid", default="thumos",
                    help="thumos | anet | comma-separated tIoU values")
    ev.add_argument("--per-category", action="store_true")
    ev.add_argument("--out", default=None, help="optional EvalReport JSON path")
    ev.set_defaults(func=cmd_eval)

    sy = sub.add_parser("synth", help="generate a synthetic benchmark")
    sy.add_argument("--spec", default=None, help="SynthSpec JSON (defaults when omitted)")
    sy.add_argument("--out", required=True, help="output directory")
    sy.set_defaults(func=cmd_synth)

    gc = sub.add_parser("grad-check", help="verify analytic gradients")
    gc.add_argument("--trials", type=_positive(int), default=100)
    gc.add_argument("--dims", default="8,8,8",
                    help="max D_v,D_l,D as a comma triple")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_grad_check)
    return parser


def cmd_run(args) -> int:
    config = pipeline.RunConfig(
        steps=args.steps, k=args.k, lr=args.lr, alpha=args.alpha, beta=args.beta,
        jitter=args.jitter, window=args.window,
        subtract_pseudo_label=args.subtract_pseudo_label,
        tau_sigmoid=args.tau_sigmoid, oracle_class=args.oracle_class,
        oracle_count=args.oracle_count, oracle_selection=args.oracle_selection,
        seed=args.seed)
    try:
        config.validate()
    except ValueError as e:
        raise UsageError(str(e)) from e
    manifest = featio.read_manifest(args.manifest)
    t0 = time.perf_counter()
    preds, results = pipeline.run_manifest(manifest, config, threads=args.threads)
    elapsed = time.perf_counter() - t0
    echo = {
        "steps": config.steps, "k": config.k, "lr": config.lr,
        "alpha": config.alpha, "beta": config.beta, "jitter": config.jitter,
        "window": config.window, "patience": config.patience,
        "subtract_pseudo_label": config.subtract_pseudo_label,
        "tau_sigmoid": config.tau_sigmoid, "oracle_class": config.oracle_class,
        "oracle_count": config.oracle_count,
        "oracle_selection": config.oracle_selection, "seed": config.seed,
    }
    featio.write_predictions(preds, args.out, config=echo)
    total = sum(len(p) for p in preds.values())
    log.info("%d videos, %d proposals, %.2fs total", len(preds), total, elapsed)
    print(f"wrote {args.out}: {total} proposals across {len(preds)} videos "
          f"in {elapsed:.2f}s")
    return EXIT_OK


def cmd_baseline(args) -> int:
    if not 0.0 < args.threshold <= 1.0:
        raise UsageError(f"--threshold must be in (0, 1], got {args.threshold}")
    manifest = featio.read_manifest(args.manifest)
    t0 = time.perf_counter()
    preds = pipeline.run_baseline_manifest(manifest, threshold=args.threshold,
                                           scale=args.scale, threads=args.threads)
    elapsed = time.perf_counter() - t0
    echo = {"baseline": "naive", "threshold": args.threshold, "scale": args.scale}
    featio.write_predictions(preds, args.out, config=echo)
    total = sum(len(p) for p in preds.values())
    log.info("baseline threshold=%g scale=%g", args.threshold, args.scale)
    print(f"baseline(threshold={args.threshold}): wrote {args.out}: "
          f"{total} proposals across {len(preds)} videos in {elapsed:.2f}s")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        grid = metrics.parse_grid(args.grid)
    except ValueError as e:
        raise UsageError(str(e)) from e
    preds = featio.read_predictions(args.pred)
    gt = featio.read_annotations(args.gt)
    try:
        report = metrics.evaluate(preds, gt, grid)
    except ValueError as e:
        raise DataFormatError(str(e)) from e
    print(metrics.format_table(report, per_category=args.per_category))
    if args.out:
        metrics.report_to_json(report, args.out)
        log.info("report written to %s", args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = synth.SynthSpec.from_json(args.spec) if args.spec else synth.SynthSpec()
    spec.validate()
    manifest_path = synth.generate(spec, args.out)
    info = synth.describe(spec)
    print(f"wrote {manifest_path}")
    for key, value in info.items():
        print(f"  {key}: {value}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    try:
        dims = [int(x) for x in args.dims.split(",")]
    except ValueError:
        raise UsageError(f"--dims expects a comma triple, got {args.dims!r}") from None
    if len(dims) != 3 or any(d < 2 for d in dims):
        raise UsageError(f"--dims expects three integers >= 2, got {args.dims!r}")
    rng = np.random.default_rng(args.seed)
    max_dim = max(dims)
    worst = 0.0
    failures = 0
    for trial in range(args.trials):
        err = random_gradient_trial(rng, max_dim=max_dim)
        worst = max(worst, err)
        if err > 1e-4:
            failures += 1
            log.error("trial %d: relative error %.3e exceeds 1e-4", trial, err)
    if failures:
        print(f"FAIL {args.trials - failures}/{args.trials} within 1e-4 "
              f"(max relative error {worst:.3e})")
        return EXIT_NUMERIC
    print(f"OK {args.trials}/{args.trials} gradient checks within 1e-4 "
          f"(max relative error {worst:.3e})")
    return EXIT_OK


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataFormatError as e:
        log.error("%s", e)
        return EXIT_DATA
    except NumericError as e:
        log.error("numeric failure: %s", e)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
