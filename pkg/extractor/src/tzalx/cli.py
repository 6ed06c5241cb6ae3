"""Command line front end.

One subcommand: extract, which embeds videos or frame folders plus a
label list into a self-contained dataset directory the localization
engine can run directly.

Exit codes: 0 success, 2 usage, 3 data or environment error. The
TZALX_LOG environment variable (error|info|debug) sets log verbosity.
Given identical inputs the hash backend writes byte-identical outputs.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from .backends import CAPTIONER_PREFIXES, MODEL_PREFIXES
from .container import ExtractError
from .export import run_job
from .jobs import DEFAULT_PROMPT_TEMPLATE, PLACEHOLDER, ExtractJob

log = logging.getLogger("tzalx.cli")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = os.environ.get("TZALX_LOG", "info").lower()
    if level not in _LOG_LEVELS:
        print(f"warning: TZALX_LOG must be one of {sorted(_LOG_LEVELS)}, got {level!r}",
              file=sys.stderr)
        level = "info"
    logging.basicConfig(level=_LOG_LEVELS[level],
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _template(text: str) -> str:
    if text.count(PLACEHOLDER) != 1:
        raise argparse.ArgumentTypeError(
            f"must contain {PLACEHOLDER} exactly once: {text!r}")
    return text


def _model_spec(text: str) -> str:
    if not text.startswith(MODEL_PREFIXES):
        raise argparse.ArgumentTypeError(
            f"unknown model {text!r} (expected hash[:opts] or clip:<id>)")
    return text


def _captioner_spec(text: str) -> str:
    if not text.startswith(CAPTIONER_PREFIXES):
        raise argparse.ArgumentTypeError(
            f"unknown captioner {text!r} (expected blip:<id>)")
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tzalx",
        description="Export frame, caption and label embeddings in the "
                    "localization engine's file formats.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="embed videos or frame folders")
    p.add_argument("sources", nargs="+", metavar="SOURCE",
                   help="video file or directory of image frames")
    p.add_argument("--out", required=True, help="output dataset directory")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--labels", help="comma-separated category names")
    group.add_argument("--labels-file", help="file with one category per line")
    p.add_argument("--model", type=_model_spec, default="hash",
                   help="hash[:vdim=..,ldim=..,edim=..,seed=..] or clip:<id> "
                        "(default: hash)")
    p.add_argument("--captioner", type=_captioner_spec, default=None,
                   help="blip:<id>; defaults to the model's own captioner")
    p.add_argument("--template", type=_template, default=DEFAULT_PROMPT_TEMPLATE,
                   help=f"label prompt with one {PLACEHOLDER} placeholder "
                        f"(default: {DEFAULT_PROMPT_TEMPLATE!r})")
    p.add_argument("--fps", type=_positive_float, default=5.0,
                   help="target sampling rate for video files; declared rate "
                        "for frame folders (default: 5)")
    p.add_argument("--no-captions", action="store_true",
                   help="skip the caption block")
    p.add_argument("--no-fidelity", action="store_true",
                   help="skip re-reading written files for verification")
    p.set_defaults(func=cmd_extract)
    return parser


def _read_labels(args) -> list[str]:
    if args.labels is not None:
        return [part.strip() for part in args.labels.split(",") if part.strip()]
    try:
        text = Path(args.labels_file).read_text()
    except OSError as e:
        raise ExtractError(f"cannot read {args.labels_file}: {e}") from e
    return [line.strip() for line in text.splitlines() if line.strip()]


def cmd_extract(args) -> int:
    start = time.monotonic()
    job = ExtractJob(sources=args.sources, out_dir=args.out, model=args.model,
                     captioner=args.captioner, prompt_template=args.template,
                     fps=args.fps, captions=not args.no_captions,
                     fidelity=not args.no_fidelity)
    summary = run_job(job, _read_labels(args))
    total = sum(entry["frames"] for entry in summary["videos"])
    elapsed = time.monotonic() - start
    print(f"wrote {args.out}: {total} frames across "
          f"{len(summary['videos'])} videos in {elapsed:.2f}s")
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
    except ExtractError as e:
        log.error("%s", e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
