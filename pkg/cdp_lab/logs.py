import logging
import os

from rich.console import Console
from rich.logging import RichHandler

logger = logging.getLogger("cdp_lab")

# Section banners in run logs
HEADER = 25  # Between INFO (20) and WARNING (30)
logging.addLevelName(HEADER, "HEADER")


def header(self, message, *args, **kwargs):
    if self.isEnabledFor(HEADER):
        self._log(HEADER, message, args, **kwargs)


logging.Logger.header = header


def setup_logging(console: Console, verbose: bool = False) -> None:
    """Attach a rich console handler to the cdp_lab logger.

    Verbosity comes from `--verbose` or CDP_LAB_LOG_LEVEL; neither affects results.
    """
    level_name = os.environ.get("CDP_LAB_LOG_LEVEL", "DEBUG" if verbose else "INFO")
    level = logging.getLevelName(level_name.upper())
    if not isinstance(level, int):
        level = logging.INFO

    handler = RichHandler(
        console=console,
        rich_tracebacks=True,
        markup=True,
        enable_link_path=False,
        log_time_format="[%H:%M:%S.%f]",
    )

    logger.handlers.clear()
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False
