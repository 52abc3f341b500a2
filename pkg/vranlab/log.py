"""
Logging and console helpers.

Library modules log through ``logging.getLogger(__name__)``; the CLI calls
``setup_logging`` once and prints user-facing status lines through ``console``.
"""

import logging

from rich.console import Console
from rich.logging import RichHandler

console = Console()

_HANDLER_NAME = "vranlab-rich"


def setup_logging(verbose: bool = False) -> logging.Logger:
    """Attach a RichHandler to the package logger (idempotent)"""
    logger = logging.getLogger("vranlab")
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)

    for handler in logger.handlers:
        if handler.get_name() == _HANDLER_NAME:
            handler.setLevel(logger.level)
            return logger

    handler = RichHandler(console=console, show_path=verbose, rich_tracebacks=True)
    handler.set_name(_HANDLER_NAME)
    handler.setLevel(logger.level)
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    logger.addHandler(handler)
    logger.propagate = False
    return logger


def success(message: str):
    console.print(f"✅ {message}")


def failure(message: str):
    console.print(f"❌ {message}", style="red")


def warning(message: str):
    console.print(f"⚠️  {message}", style="yellow")


def report(title: str):
    console.print(f"\n📊 {title}", style="bold")
    console.print("=" * 50)
