"""Command line entry point: ``oddm-sim <experiment> --config FILE --set key=value --out DIR``."""
import argparse
import logging
import sys
from pathlib import Path

from src import __version__
from src.conf.config import settings
from src.repository.results import MANIFEST_NAME
from src.services.errors import ConfigError
from src.services.experiments import DESCRIPTIONS, run_experiment, validate_config

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oddm-sim", description="ODDM link-level simulation experiments")
    parser.add_argument("experiment", choices=sorted(DESCRIPTIONS), help="experiment family to run")
    parser.add_argument("--config", type=Path, help="key = value experiment file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one configuration key (repeatable)",
    )
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def main(argv: list[str] | None = None) -> int:
    """
    Run one experiment from the command line.

    :param argv: Arguments without the program name, ``sys.argv[1:]`` when omitted.
    :type argv: list[str] | None
    :return: 0 on success, 2 on configuration errors, 3 on runtime failures.
    :rtype: int
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=settings.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        cfg = validate_config(text, args.overrides, experiment=args.experiment, output_dir=args.out)
    except OSError as exc:
        print(f"cannot read configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        logger.error("%s", exc)
        return EXIT_CONFIG

    try:
        manifest = run_experiment(cfg)
    except Exception as exc:
        logger.exception("experiment %s failed", cfg.experiment)
        print(f"experiment failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(Path(cfg.output_dir) / MANIFEST_NAME)
    logger.info("%d files written", len(manifest.files))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
