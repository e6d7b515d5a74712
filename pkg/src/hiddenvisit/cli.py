"""Command-line entry point: ``hiddenvisit [options] STAGE``.

Exit codes: 0 success, 2 invalid configuration, 3 missing prerequisite stage,
4 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import ConfigError, HiddenVisitError, MissingPrerequisiteError
from .stages import STAGES, run_all, run_stage

EXIT_OK, EXIT_CONFIG, EXIT_PREREQ, EXIT_DATA = 0, 2, 3, 4

log = logging.getLogger("hiddenvisit")


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=default, help="INI configuration file")
    parser.add_argument("--seed", type=int, metavar="N", default=default, help="override run.seed")
    parser.add_argument("--workers", type=int, metavar="N", default=default,
                        help="override run.workers (0 = all available cores)")
    parser.add_argument("--set", dest="overrides", action="append", metavar="SECTION.KEY=VALUE",
                        default=argparse.SUPPRESS if suppress else [], help="override one config value (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true", default=default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiddenvisit",
        description="Detect and estimate hidden visits in sparse call-detail-record trajectories.",
    )
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="stage", metavar="STAGE", required=True)
    helps = {
        "synth": "simulate a synthetic population with ground truth",
        "ingest": "parse, window-filter and geolocate the raw CDR file",
        "localize": "classify users and cluster their towers into locations",
        "extract": "detect stays and extract displacements",
        "label": "label ETI displacements of frequent data users",
        "features": "build training and population feature tables",
        "train": "fit the regularized logistic model",
        "evaluate": "cross-validate the model against both baselines",
        "ablate": "cross-validate every feature-group combination",
        "deploy": "score the population and estimate hidden-visit shares",
        "report": "usage statistics and SVG charts",
        "run": "run every stage in order",
    }
    for stage in (*STAGES, "run"):
        sp = sub.add_parser(stage, help=helps[stage])
        _common(sp, suppress=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, args.seed, args.workers)
        if args.stage == "run":
            outputs = run_all(cfg)
        else:
            outputs = run_stage(args.stage, cfg)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingPrerequisiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    except (HiddenVisitError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    for path in outputs:
        log.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
