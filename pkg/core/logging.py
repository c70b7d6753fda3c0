import logging
import sys

ROOT_LOGGER = "density_confidence"
_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(f"{ROOT_LOGGER}.{name}")


def configure_logging(verbose: bool = False) -> None:
    """Attach a single stderr handler. stdout stays reserved for command output."""
    root = logging.getLogger(ROOT_LOGGER)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False
    for handler in root.handlers:
        if getattr(handler, "_density_confidence", False):
            # sys.stderr may have been swapped since the last call
            handler.setStream(sys.stderr)  # type: ignore[attr-defined]
            return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(_FORMAT))
    handler._density_confidence = True  # type: ignore[attr-defined]
    root.addHandler(handler)
