"""
Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..data import DataError
from ..mitigations.compat import matrix_csv
from ..models.base import TrainingError
from .config import ConfigError, load_config
from .report import emit_report
from .runner import Experiment, StageError

EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 2, 3, 4


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, FileNotFoundError)):
        return EXIT_DATA
    if isinstance(exc, (TrainingError, FloatingPointError)):
        return EXIT_TRAINING
    return 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="recfair", description=__doc__.splitlines()[1])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="experiment configuration file")
        p.add_argument("--cache", help="cache root (overrides RECFAIR_CACHE and [experiment] output)")
        return p

    with_config("prepare", "load, preprocess and split the data")
    p = with_config("train", "grid-search and fit Base models")
    p.add_argument("--model", action="append", help="model section name (default: all)")
    p = with_config("mitigate", "fit mitigated models")
    p.add_argument("--model", action="append")
    p.add_argument("--mitigation", action="append")
    with_config("evaluate", "compute utility and fairness for every cell")
    p = with_config("report", "assemble and print the report")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p = with_config("run", "all stages end to end")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    sub.add_parser("compat", help="print the mitigation x model compatibility matrix")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    if args.command == "compat":
        sys.stdout.write(matrix_csv())
        return 0
    try:
        exp = Experiment(load_config(args.config), args.cache)
        cfg = exp.cfg
        if args.command == "prepare":
            exp.prepare()
            print(exp.dir / "prepared")
        elif args.command == "train":
            for name in args.model or [m.name for m in cfg.models]:
                spec = exp.train(name)
                print(f"{name}\t{dict(spec.params)}")
        elif args.command == "mitigate":
            for name, kind in cfg.cells():
                if kind is None or (args.model and name not in args.model):
                    continue
                if args.mitigation and kind not in args.mitigation:
                    continue
                mit = exp.mitigate(name, kind)
                print(f"{name}\t{kind}\t{dict(mit.params)}")
        elif args.command == "evaluate":
            for name, kind in cfg.cells():
                m = exp.evaluate(name, kind)
                print(f"{name}\t{kind or 'base'}\t{m.utility!r}\t{m.dp!r}\t{m.ks!r}")
        else:
            report = exp.run()
            sys.stdout.write(emit_report(report, args.format))
    except (ConfigError, DataError, TrainingError, StageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
