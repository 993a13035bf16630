"""Progress display and logging setup."""

from __future__ import annotations

import json
import logging
import sys
from contextlib import contextmanager
from typing import Any, Iterator

from rich.console import Console
from rich.logging import RichHandler
from rich.progress import (
    BarColumn,
    MofNCompleteColumn,
    Progress,
    SpinnerColumn,
    TextColumn,
    TimeElapsedColumn,
)

logger = logging.getLogger("lemmaforge")

# Progress and diagnostics go to stderr; stdout is reserved for reports.
stderr_console = Console(stderr=True)


def configure_logging(verbose: bool = False) -> None:
    """Configure the `lemmaforge` logger.

    Args:
        verbose: If True, set DEBUG level; otherwise INFO.
    """
    level = logging.DEBUG if verbose else logging.INFO
    handler = RichHandler(
        console=stderr_console,
        show_path=verbose,
        rich_tracebacks=verbose,
        markup=False,
    )
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))

    logger.handlers.clear()
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False


def format_duration(seconds: float) -> str:
    """Format seconds as "5s", "2m 5s" or "1h 1m 1s"."""
    total = int(seconds)
    hours, rest = divmod(total, 3600)
    minutes, secs = divmod(rest, 60)
    if hours:
        return f"{hours}h {minutes}m {secs}s"
    if minutes:
        return f"{minutes}m {secs}s"
    return f"{secs}s"


class ProgressTracker:
    """Tracks completed items of one long-running stage.

    In porcelain mode each completed item is written to stdout as one JSON
    object and no progress bar is drawn.
    """

    def __init__(self, progress: Progress | None, porcelain: bool = False) -> None:
        self._progress = progress
        self._porcelain = porcelain
        self._task: Any = None

    def start_stage(self, description: str, total: int | None = None) -> None:
        if self._progress is None:
            return
        if self._task is not None:
            self._progress.update(self._task, visible=False)
        self._task = self._progress.add_task(description, total=total)

    def advance(self, **item: Any) -> None:
        """Mark one item complete."""
        if self._porcelain:
            sys.stdout.write(json.dumps(item, sort_keys=True, ensure_ascii=False) + "\n")
            sys.stdout.flush()
        if self._progress is not None and self._task is not None:
            self._progress.advance(self._task)


@contextmanager
def track_progress(porcelain: bool = False) -> Iterator[ProgressTracker]:
    """Context manager yielding a ProgressTracker bound to stderr."""
    if porcelain:
        yield ProgressTracker(None, porcelain=porcelain)
        return

    progress = Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=stderr_console,
        transient=False,
    )
    with progress:
        yield ProgressTracker(progress)
