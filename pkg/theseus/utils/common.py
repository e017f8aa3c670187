"""
Theseus - Common Utilities
==========================

Output directory handling, JSON-lines / CSV writers, medians and config
hashing shared by the experiment drivers.
"""

import csv
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)


def ensure_dir_exists(directory: str) -> None:
    """
    Ensure that a directory exists, creating it if necessary.

    Args:
        directory: Path to the directory
    """
    if directory and not os.path.exists(directory):
        os.makedirs(directory, exist_ok=True)


def is_nonempty_dir(directory: str) -> bool:
    path = Path(directory)
    return path.is_dir() and any(path.iterdir())


def append_jsonl(record: Dict[str, Any], file_path: str) -> None:
    """Append one JSON object as a line to ``file_path``."""
    ensure_dir_exists(os.path.dirname(file_path))
    with open(file_path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def write_csv(rows: Sequence[Dict[str, Any]], file_path: str, columns: Optional[Sequence[str]] = None) -> str:
    """
    Write dictionaries as a CSV table with a header row.

    Args:
        rows: Table rows
        file_path: Destination file
        columns: Column order; defaults to first-seen key order over all rows

    Returns:
        Path to the written file
    """
    if columns is None:
        columns = []
        for row in rows:
            columns.extend(key for key in row if key not in columns)
    ensure_dir_exists(os.path.dirname(file_path))
    with open(file_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _csv_value(row.get(key, "")) for key in columns})
    logger.info(f"Wrote {len(rows)} rows to {file_path}")
    return file_path


def _csv_value(value: Any) -> Any:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return " ".join(str(v) for v in value)
    return value


def median(values: Iterable[Optional[float]]) -> float:
    """Median of the finite values; NaN when there are none."""
    finite = [float(v) for v in values if v is not None and np.isfinite(v)]
    if not finite:
        return float("nan")
    return float(np.median(finite))


def config_hash(text: str) -> str:
    """Short SHA-256 digest linking result rows to the config they came from."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def format_size(size_bytes: float) -> str:
    """
    Format a size in bytes to a human-readable string.

    Args:
        size_bytes: Size in bytes

    Returns:
        Human-readable size string
    """
    if size_bytes == 0:
        return "0 B"

    size_names = ("B", "KB", "MB", "GB", "TB")
    i = 0
    while size_bytes >= 1024 and i < len(size_names) - 1:
        size_bytes /= 1024
        i += 1

    return f"{size_bytes:.2f} {size_names[i]}"
