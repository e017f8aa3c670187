#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Theseus - Performance
=====================

Timing decorator, process-parallel map for sweep grid points, forward-pass
wall-clock benchmarking and host information for benchmark reports.
"""

import concurrent.futures
import functools
import logging
import multiprocessing
import os
import platform
import time
from typing import Any, Callable, Dict, List, Optional, Sequence, TypeVar, Union

import numpy as np
import psutil

from .common import format_size

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def timed(func):
    """Decorator to measure function execution time."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.perf_counter()
        result = func(*args, **kwargs)
        execution_time = time.perf_counter() - start_time
        logger.info(f"{func.__name__} executed in {execution_time:.4f} seconds")
        return result
    return wrapper


def parallel_map(func: Callable[[T], R], items: Sequence[T], max_workers: Optional[int] = None) -> List[R]:
    """
    Execute a function on items in worker processes, preserving order.

    ``func`` and the items must be picklable. With one worker (or one
    item) everything runs in the calling process.
    """
    if not items:
        return []

    if max_workers is None:
        max_workers = multiprocessing.cpu_count()
    max_workers = max(1, min(max_workers, len(items)))

    if max_workers == 1:
        return [func(item) for item in items]

    logger.info(f"Running {len(items)} tasks on {max_workers} worker processes")
    with concurrent.futures.ProcessPoolExecutor(max_workers=max_workers) as executor:
        return list(executor.map(func, items))


def bench(fn: Callable[[], Any], reps: int, warmup: int = 2) -> Dict[str, float]:
    """
    Median wall-clock time of ``fn`` over ``reps`` timed calls.

    The first ``warmup`` calls are run and discarded.
    """
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return {
        "median_s": float(np.median(times)),
        "min_s": float(np.min(times)),
        "max_s": float(np.max(times)),
        "reps": float(reps),
    }


def get_system_info() -> Dict[str, Union[str, int]]:
    """
    Host description attached to benchmark output.

    Returns:
        Dictionary with platform, CPU and memory information
    """
    try:
        memory = psutil.virtual_memory()
        return {
            "system": platform.system(),
            "machine": platform.machine(),
            "processor": platform.processor() or "unknown",
            "python_version": platform.python_version(),
            "numpy_version": np.__version__,
            "cpu_logical": psutil.cpu_count() or 0,
            "cpu_physical": psutil.cpu_count(logical=False) or psutil.cpu_count() or 0,
            "memory_total": format_size(memory.total),
            "memory_available": format_size(memory.available),
            "process_rss": format_size(psutil.Process(os.getpid()).memory_info().rss),
        }
    except Exception as e:
        logger.error(f"Failed to get system information: {str(e)}")
        return {"system": platform.system(), "error": str(e)}
