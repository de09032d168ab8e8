"""Command line entry point.

    randgrating {synthesize,reconstruct,stats,report,run} --config FILE
                [--out DIR] [--workers K] [--seed S]

Exit status: 0 success, 2 config error, 3 numerical failure (including more
than 10% flagged samples), 4 artifact mismatch.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import load_config
from .exceptions import ArtifactMismatchError, ConfigError, NumericalError

COMMANDS = {
    "synthesize": pipeline.cmd_synthesize,
    "reconstruct": pipeline.cmd_reconstruct,
    "stats": pipeline.cmd_stats,
    "report": pipeline.cmd_report,
    "run": pipeline.cmd_run,
}

log = logging.getLogger("randgrating")


def build_parser():
    p = argparse.ArgumentParser(prog="randgrating", description="Statistics of random fluid-solid interfaces from near-field data.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="experiment INI file")
    p.add_argument("--out", help="output directory (default: experiment.output)")
    p.add_argument("--workers", type=int, default=-1, help="worker processes (default: all logical cores)")
    p.add_argument("--seed", type=int, help="override schedule.seed")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        run = pipeline.Run(cfg, out=args.out, workers=args.workers)
        return COMMANDS[args.command](run)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return pipeline.EXIT_CONFIG
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return pipeline.EXIT_NUMERICAL
    except ArtifactMismatchError as exc:
        log.error("artifact mismatch: %s", exc)
        return pipeline.EXIT_ARTIFACT


if __name__ == "__main__":
    sys.exit(main())
