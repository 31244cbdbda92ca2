"""
Utils - Helper functions shared across the toolkit
"""

import os
import sys
import logging
import logging.handlers
from typing import Iterable, List, Optional, Sequence

import numpy as np

# Marks handlers installed by setup_logger so repeated calls stay idempotent
_HANDLER_TAG = "_vidlang_handler"


def setup_logger(log_file: str, log_level: str, max_size: int, backup_count: int) -> None:
    """
    Setup logging configuration for the application

    Args:
        log_file: Path to the log file
        log_level: Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        max_size: Maximum size of the log file in bytes
        backup_count: Number of backup log files to keep
    """
    # Create logs directory if it doesn't exist
    log_dir = os.path.dirname(log_file)
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)

    # Set up root logger
    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, log_level.upper()))
    for handler in list(root_logger.handlers):
        if getattr(handler, _HANDLER_TAG, False):
            root_logger.removeHandler(handler)
            handler.close()

    # Create formatters
    file_formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    console_formatter = logging.Formatter(
        '%(levelname)s: %(message)s'
    )

    # Setup file handler with rotation
    file_handler = logging.handlers.RotatingFileHandler(
        log_file,
        maxBytes=max_size,
        backupCount=backup_count
    )
    file_handler.setFormatter(file_formatter)
    setattr(file_handler, _HANDLER_TAG, True)
    root_logger.addHandler(file_handler)

    # Setup console handler
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(console_formatter)
    setattr(console_handler, _HANDLER_TAG, True)
    root_logger.addHandler(console_handler)

    logging.info(f"Logging initialized. Level: {log_level}, File: {log_file}")


def format_duration(seconds: float) -> str:
    """
    Format a duration in seconds to a readable string

    Args:
        seconds: Elapsed time in seconds

    Returns:
        Formatted time string
    """
    if seconds < 1:
        return f"{seconds * 1000:.0f} ms"
    elif seconds < 120:
        return f"{seconds:.1f} sec"
    else:
        return f"{seconds / 60:.1f} min"


def derive_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    Deterministic sub-generator for (seed, stream...) coordinates

    Sub-seeds depend only on the coordinates, never on call order, so work
    prepared on another thread reproduces exactly.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(s) for s in stream]]))


def format_float(value: float) -> str:
    """Round-trip exact float formatting used in metric files"""
    return repr(float(value))


class MetricsLog:
    """
    Tab-separated metrics file with a header row

    Args:
        path: Output file
        columns: Column names, written once as the header
        append: Continue an existing file instead of truncating it
    """
    def __init__(self, path: str, columns: Sequence[str], append: bool = False):
        self.path = path
        self.columns: List[str] = list(columns)
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        resume = append and os.path.exists(path) and os.path.getsize(path) > 0
        self._handle = open(path, "a" if resume else "w", encoding="utf-8", newline="\n")
        if not resume:
            self._handle.write("\t".join(self.columns) + "\n")
            self._handle.flush()

    def write(self, values: Iterable) -> None:
        cells = [format_float(v) if isinstance(v, float) else str(v) for v in values]
        if len(cells) != len(self.columns):
            raise ValueError(f"Expected {len(self.columns)} metric values, got {len(cells)}")
        self._handle.write("\t".join(cells) + "\n")
        self._handle.flush()

    def close(self) -> None:
        if self._handle and not self._handle.closed:
            self._handle.close()

    def __enter__(self) -> "MetricsLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_metrics_file(path: str, metrics: dict, header: Optional[Sequence[str]] = None) -> None:
    """Write a two-column ``metric<TAB>value`` evaluation file"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\t".join(header or ("metric", "value")) + "\n")
        for key, value in metrics.items():
            f.write(f"{key}\t{format_float(value) if isinstance(value, float) else value}\n")
