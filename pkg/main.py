import atexit
import sys
from collections.abc import Sequence

from cli.commands import COMMANDS
from cli.parser import build_parser
from core.errors import ConfidenceError
from core.executor import sweep_executor
from core.logging import configure_logging, get_logger

logger = get_logger(__name__)


def run(argv: Sequence[str] | None = None) -> int:
    """Parse argv, dispatch the subcommand and map failures to exit codes (0 ok, 1 usage, 2 data)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfidenceError as exc:
        sys.stderr.write(f"{exc.detail}\n")
        return exc.exit_code
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    configure_logging(verbose=args.verbose)
    try:
        return COMMANDS[args.command](args)
    except ConfidenceError as exc:
        logger.error("%s: %s", type(exc).__name__, exc.detail)
        return exc.exit_code


atexit.register(sweep_executor.shutdown)


if __name__ == "__main__":
    sys.exit(run())
    # python main.py train --data mnist --out model.json --seed 7 --epochs 5
