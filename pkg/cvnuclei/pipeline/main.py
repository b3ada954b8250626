#!/usr/bin/env python3

import argparse
import logging
import sys
from pathlib import Path
from typing import List, NoReturn, Optional, Sequence

from cvnuclei.config import ConfigError, load_run_config
from cvnuclei.metrics import AJIMode
from cvnuclei.pipeline import (
    format_loss,
    format_metrics,
    metrics_to_json,
    Pipeline,
    stem_of,
)


LOG = logging.getLogger(__name__)
PROG = "cvnuclei"
# Exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    """Raise instead of exiting so main() owns every exit code"""

    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


def _setup_logging(debug: bool, logfile: Optional[str]) -> None:
    log_level = logging.DEBUG if debug else logging.INFO
    logging.basicConfig(
        filename=logfile,
        format="[%(asctime)s] %(levelname)s: %(message)s (%(filename)s:%(lineno)d)",
        level=log_level,
    )


def _output_dir(value: str) -> Path:
    out_dir = Path(value)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _parser() -> _ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", default=None, help="key = value run config")
    common.add_argument(
        "-s",
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config key (repeatable, wins over --config)",
    )
    common.add_argument(
        "-j", "--jobs", type=int, default=1, help="Images processed in parallel"
    )
    common.add_argument(
        "-d", "--debug", action="store_true", help="Verbose debug output"
    )
    common.add_argument(
        "-l",
        "--logfile",
        default=None,
        help="File to send logs to (Default: stderr)",
    )

    parser = _ArgumentParser(
        prog=PROG, description="Center vector encoding nuclei segmentation pipeline"
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True

    synth = subparsers.add_parser(
        "synth", parents=[common], help="Write synthetic ground truth label maps"
    )
    synth.add_argument("-o", "--output", required=True, help="Output directory")
    synth.add_argument(
        "-n", "--count", type=int, default=1, help="Number of scenes (seed + i)"
    )
    synth.add_argument("--pgm", action="store_true", help="Also export PGM views")

    for name, help_text in (
        ("encode", "Ground truth label maps -> training targets"),
        ("corrupt", "Ground truth label maps -> noisy prediction rasters"),
    ):
        sub = subparsers.add_parser(name, parents=[common], help=help_text)
        sub.add_argument("-o", "--output", required=True, help="Output directory")
        sub.add_argument("gt", nargs="+", help="Ground truth .cvr label maps")

    for name, help_text in (
        ("decode", "Prediction rasters -> instance label maps"),
        ("baseline-rw", "Inside and center rasters -> random walker instances"),
    ):
        sub = subparsers.add_parser(name, parents=[common], help=help_text)
        sub.add_argument("-o", "--output", required=True, help="Output directory")
        sub.add_argument("--pgm", action="store_true", help="Also export PGM views")
        sub.add_argument(
            "prefix", nargs="+", help="Prediction prefixes (<prefix>.inside.cvr ...)"
        )

    evaluate = subparsers.add_parser(
        "eval", parents=[common], help="AJI / IOU / Dice of predictions vs truth"
    )
    evaluate.add_argument("--gt", nargs="+", required=True, help="Truth label maps")
    evaluate.add_argument(
        "--pred", nargs="+", required=True, help="Predicted label maps (same order)"
    )
    evaluate.add_argument(
        "--group", nargs="+", default=None, help="Group name per image, e.g. organ"
    )
    evaluate.add_argument(
        "--loss",
        nargs="+",
        default=None,
        metavar="PREFIX",
        help="Also report the training loss of these prediction rasters",
    )
    evaluate.add_argument(
        "--mode",
        choices=[mode.value for mode in AJIMode],
        default=AJIMode.LITERAL.value,
        help="AJI matching rule",
    )
    evaluate.add_argument("--json", default=None, help="Write a JSON report here")
    return parser


def _run_eval(args: argparse.Namespace, pipeline: Pipeline) -> None:
    gt_paths = [Path(p) for p in args.gt]
    if len(args.pred) != len(gt_paths):
        raise UsageError(f"{len(gt_paths)} --gt files but {len(args.pred)} --pred")
    if args.group is not None and len(args.group) != len(gt_paths):
        raise UsageError(f"{len(gt_paths)} --gt files but {len(args.group)} --group")
    if args.loss is not None and len(args.loss) != len(gt_paths):
        raise UsageError(f"{len(gt_paths)} --gt files but {len(args.loss)} --loss")

    images, summary = pipeline.evaluate(
        gt_paths, [Path(p) for p in args.pred], args.group
    )
    report = format_metrics(images, summary)
    if args.loss is not None:
        for gt_path, prefix in zip(gt_paths, args.loss):
            loss = pipeline.loss(gt_path, Path(prefix))
            report += f"# loss {stem_of(gt_path)}\n" + format_loss(loss)
    sys.stdout.write(report)

    if args.json:
        Path(args.json).write_text(metrics_to_json(images, summary))
        LOG.info(f"Wrote JSON report to {args.json}")


def _run(args: argparse.Namespace) -> None:
    if args.jobs < 1:
        raise UsageError(f"--jobs must be >= 1, got {args.jobs}")
    config = load_run_config(Path(args.config) if args.config else None, args.set)
    LOG.debug(f"Running {args.command} with {config}")

    pipeline = Pipeline(
        config,
        _output_dir(args.output) if hasattr(args, "output") else Path("."),
        jobs=args.jobs,
        export_pgm=getattr(args, "pgm", False),
        aji_mode=AJIMode(getattr(args, "mode", AJIMode.LITERAL.value)),
    )
    try:
        if args.command == "synth":
            if args.count < 1:
                raise UsageError(f"--count must be >= 1, got {args.count}")
            pipeline.synth(args.count)
        elif args.command == "encode":
            pipeline.encode([Path(p) for p in args.gt])
        elif args.command == "corrupt":
            pipeline.corrupt([Path(p) for p in args.gt])
        elif args.command == "decode":
            pipeline.decode([Path(p) for p in args.prefix])
        elif args.command == "baseline-rw":
            pipeline.random_walker([Path(p) for p in args.prefix])
        else:
            _run_eval(args, pipeline)
    finally:
        pipeline.close()


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv_list: List[str] = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parser().parse_args(argv_list)
    except UsageError as ue:
        print(f"{PROG}: usage error: {ue}", file=sys.stderr)
        return EXIT_USAGE

    _setup_logging(args.debug, args.logfile)
    try:
        _run(args)
    except (UsageError, ConfigError) as ue:
        LOG.error(f"{args.command} failed: {ue}")
        print(f"{PROG}: usage error: {ue}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError, OSError) as de:
        LOG.error(f"{args.command} failed: {de}")
        print(f"{PROG}: data error: {de}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    exit(main())  # pragma: no cover
