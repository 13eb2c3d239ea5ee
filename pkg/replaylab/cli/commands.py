from __future__ import annotations

import argparse
import json
from collections.abc import Sequence
from pathlib import Path

from loguru import logger

from replaylab.core.config import get_settings, load_study_config
from replaylab.core.errors import ConfigError
from replaylab.schemas.study import StudyConfig
from replaylab.services.reports import emit_report, report_from_dir
from replaylab.services.studies import run_study

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

COMMAND_TO_STUDY = {
    "train": "train",
    "grid": "grid",
    "additive": "additive",
    "ablate": "ablative",
    "ablative": "ablative",
    "offline": "offline",
    "sticky": "sticky",
    "contraction": "contraction",
    "capacity": "capacity",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="replaylab", description="Experience-replay studies on toy environments.")
    commands = parser.add_subparsers(dest="command", required=True)
    for command in COMMAND_TO_STUDY:
        sub = commands.add_parser(command, help=f"run the {COMMAND_TO_STUDY[command]} study")
        sub.add_argument("-c", "--config", type=Path, help="dotted-key config file")
        sub.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        sub.add_argument("--seed-root", type=int, help="root of the per-run seed tree")
        sub.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        sub.add_argument("--workers", type=int, help="worker processes (default REPLAYLAB_WORKERS)")
    report = commands.add_parser("report", help="redraw charts from a finished study directory")
    report.add_argument("directory", type=Path)
    return parser


def parse_config(args: argparse.Namespace) -> StudyConfig:
    settings = get_settings()
    overrides = [f"study.kind={COMMAND_TO_STUDY[args.command]}", *args.overrides]
    if args.seed_root is not None:
        overrides.append(f"study.seed_root={args.seed_root}")
    if args.out is not None:
        overrides.append(f"output.dir={json.dumps(args.out.as_posix())}")
    return load_study_config(
        args.config,
        overrides,
        defaults={"output": {"dir": settings.output_dir.as_posix()}},
    )


def run_command(args: argparse.Namespace) -> int:
    if args.command == "report":
        for path in report_from_dir(args.directory):
            logger.info("Redrew {path}", path=str(path))
        return EXIT_OK

    config = parse_config(args)
    workers = args.workers if args.workers is not None else get_settings().workers
    if workers <= 0:
        raise ConfigError("worker count must be positive", key="--workers")
    out_dir = Path(config.output.dir)
    outcome = run_study(config, out_dir, workers=workers)
    emit_report(outcome, out_dir, config)
    for stats in outcome.stats:
        if stats.median is not None:
            logger.info(
                "{group} {variant}: median={median:.2f}% p25={p25:.2f}% p75={p75:.2f}% reproduced={reproduced}",
                group=stats.group,
                variant=stats.variant,
                median=stats.median,
                p25=stats.p25,
                p75=stats.p75,
                reproduced=stats.reproduced,
            )
    if outcome.diverged:
        logger.error(
            "{count} run(s) diverged; partial results written to {out}",
            count=len(outcome.diverged),
            out=str(out_dir),
        )
        return EXIT_DIVERGED
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run_command(args)
    except ConfigError as exc:
        logger.error("Configuration error: {error}", error=str(exc))
        return EXIT_CONFIG
