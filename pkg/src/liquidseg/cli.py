"""``liquidseg <command> [--config PATH] [--set key=value ...] [--seed N] [--workspace DIR]``"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .pipeline import COMMANDS, PrerequisiteError, SeedMismatchError, run_command

EXIT_OK, EXIT_CONFIG, EXIT_PREREQ, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("liquidseg")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="liquidseg", description="Transparent-liquid segmentation pipeline.")
    parser.add_argument("command", choices=[*COMMANDS, "run-all"])
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, repeatable")
    parser.add_argument("--seed", type=int, help="pipeline seed")
    parser.add_argument("--workspace", help="workspace directory (default: $LIQUIDSEG_WORKSPACE or ./workspace)")
    parser.add_argument("--desk", action="store_true", help="desk-scale preset; this is also the default")
    parser.add_argument("--force", action="store_true", help="report: collate artifacts with mismatched seeds")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.overrides, seed=args.seed, workspace=args.workspace)
        run_command(args.command, cfg, force=args.force)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except PrerequisiteError as exc:
        log.error("%s", exc)
        return EXIT_PREREQ
    except SeedMismatchError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime failure
        log.exception("runtime failure: %s", exc)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
