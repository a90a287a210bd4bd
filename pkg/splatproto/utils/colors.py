"""
Color output utilities for splatproto.
Colored terminal messages and a color-aware logging formatter.
"""

import logging
import os
import sys
from typing import Optional, TextIO


class Colors:
    """ANSI color codes."""
    RESET = "\033[0m"
    BOLD = "\033[1m"

    RED = "\033[31m"
    GREEN = "\033[32m"
    YELLOW = "\033[33m"
    BLUE = "\033[34m"
    MAGENTA = "\033[35m"
    CYAN = "\033[36m"
    BRIGHT_BLACK = "\033[90m"


def color_enabled(stream: Optional[TextIO] = None) -> bool:
    """Colors only on a TTY and only when NO_COLOR is unset."""
    stream = stream or sys.stdout
    if os.getenv("NO_COLOR"):
        return False
    try:
        return stream.isatty()
    except (AttributeError, ValueError):
        return False


def colorize(text: str, color: str, bold: bool = False, stream: Optional[TextIO] = None) -> str:
    """
    Colorize text if color is enabled.

    Args:
        text: Text to colorize
        color: Color code
        bold: Whether to make text bold
        stream: Stream the text is destined for (stdout by default)

    Returns:
        Colorized text
    """
    if not color_enabled(stream):
        return text
    prefix = f"{Colors.BOLD}{color}" if bold else color
    return f"{prefix}{text}{Colors.RESET}"


def header(text: str) -> str:
    """Section headers (cyan, bold)."""
    return colorize(text, Colors.CYAN, bold=True)


def error(text: str, stream: Optional[TextIO] = None) -> str:
    """Errors (red, bold)."""
    return colorize(text, Colors.RED, bold=True, stream=stream)


def warning(text: str) -> str:
    """Warnings (yellow, bold)."""
    return colorize(text, Colors.YELLOW, bold=True)


def info(text: str) -> str:
    """Info messages (blue)."""
    return colorize(text, Colors.BLUE)


def success(text: str) -> str:
    """Success messages (green, bold)."""
    return colorize(text, Colors.GREEN, bold=True)


def metric(name: str, value: str) -> str:
    """`name: value` with the value highlighted."""
    return f"{name}: {colorize(value, Colors.MAGENTA, bold=True)}"


class ColorFormatter(logging.Formatter):
    """Prefix records with a colored level tag when the stream supports it."""

    LEVEL_COLORS = {
        logging.DEBUG: Colors.BRIGHT_BLACK,
        logging.INFO: Colors.BLUE,
        logging.WARNING: Colors.YELLOW,
        logging.ERROR: Colors.RED,
        logging.CRITICAL: Colors.RED,
    }

    def __init__(self, stream: Optional[TextIO] = None):
        super().__init__("%(levelname)s %(name)s: %(message)s")
        self.stream = stream or sys.stderr

    def format(self, record: logging.LogRecord) -> str:
        text = super().format(record)
        color = self.LEVEL_COLORS.get(record.levelno)
        if color is None:
            return text
        return colorize(text, color, bold=record.levelno >= logging.ERROR, stream=self.stream)
