"""
Helper utilities for splatproto.
"""

import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

from tqdm import tqdm

T = TypeVar("T")
R = TypeVar("R")


def format_duration(seconds: float) -> str:
    """
    Format a duration in seconds as H:MM:SS (or M:SS under an hour).

    Args:
        seconds: Duration in seconds

    Returns:
        Formatted duration string
    """
    total = int(round(seconds))
    hours, rest = divmod(total, 3600)
    minutes, secs = divmod(rest, 60)
    if hours:
        return f"{hours}:{minutes:02d}:{secs:02d}"
    return f"{minutes}:{secs:02d}"


def format_percent(value: float, signed: bool = False) -> str:
    """Percentage with one decimal; signed adds an explicit '+'."""
    return f"{value:+.1f}%" if signed else f"{value:.1f}%"


def format_table(rows: List[List[str]], headers: Optional[List[str]] = None) -> str:
    """
    Format data as an aligned plain-text table.

    Args:
        rows: List of rows (each row is a list of cells)
        headers: Optional list of header strings

    Returns:
        Formatted table string
    """
    if not rows:
        return ""

    all_rows = [headers] + rows if headers else rows
    col_widths = [max(len(str(row[i])) for row in all_rows) for i in range(len(all_rows[0]))]

    lines = []
    if headers:
        header_line = "  ".join(str(headers[i]).ljust(col_widths[i]) for i in range(len(headers)))
        lines.append(header_line.rstrip())
        lines.append("-" * len(header_line.rstrip()))

    for row in rows:
        line = "  ".join(str(row[i]).ljust(col_widths[i]) for i in range(len(row)))
        lines.append(line.rstrip())

    return "\n".join(lines)


def pluralize(count: int, singular: str, plural: Optional[str] = None) -> str:
    """
    Pluralize a word based on count.

    Args:
        count: Count
        singular: Singular form
        plural: Plural form (defaults to singular + 's')

    Returns:
        Pluralized string
    """
    if count == 1:
        return f"{count} {singular}"
    plural = plural or f"{singular}s"
    return f"{count} {plural}"


def ordered_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> List[R]:
    """Map over items on a thread pool; results keep the input order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def progress(iterable: Iterable[T], desc: str, enabled: bool = True, total: Optional[int] = None):
    """tqdm bar on stderr, silent when disabled or when stderr is not a terminal."""
    disable = not enabled or not sys.stderr.isatty()
    return tqdm(iterable, desc=desc, total=total, disable=disable, leave=False, file=sys.stderr)
