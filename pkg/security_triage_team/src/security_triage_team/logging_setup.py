import logging

from rich.console import Console
from rich.logging import RichHandler

PACKAGE_LOGGER = "security_triage_team"


def configure_logging(verbose: bool = False) -> logging.Logger:
    """Attach a single stderr RichHandler to the package logger. Safe to call more than once."""
    logger = logging.getLogger(PACKAGE_LOGGER)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    if not any(isinstance(handler, RichHandler) for handler in logger.handlers):
        handler = RichHandler(console=Console(stderr=True), rich_tracebacks=True, show_path=verbose, markup=False)
        handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
        logger.addHandler(handler)
    logger.propagate = False
    return logger
