#!/usr/bin/env python3
"""
Worker Management Module for the attribution pipeline
Provides functions to run independent work units (contexts, TRs, folds)
in parallel with results merged back in input order
"""

import concurrent.futures
import logging
import os
import time
from typing import Any, Callable, Dict, List, Optional, Sequence, TypeVar

import psutil
import setproctitle

logger = logging.getLogger('worker_management')

T = TypeVar("T")
R = TypeVar("R")

# Memory budget per worker process in GB; toy models are small but numpy copies add up
MEMORY_PER_WORKER_GB = 0.5

# Fraction of logical cores used when --jobs 0 asks for automatic sizing
CPU_FRACTION = 0.9


def calculate_optimal_workers(n_items: Optional[int] = None) -> int:
    """
    Calculate the number of worker processes based on system resources.

    Args:
        n_items: Number of work units; never start more workers than this

    Returns:
        Worker count, at least 1
    """
    try:
        cpu_count = psutil.cpu_count(logical=True) or 1
        memory_gb = psutil.virtual_memory().total / (1024 * 1024 * 1024)
        base_workers = max(1, int(cpu_count * CPU_FRACTION))
        max_by_memory = max(1, int((memory_gb * 0.9) / MEMORY_PER_WORKER_GB))
        optimal_workers = min(base_workers, max_by_memory)
        logger.debug(f"Calculated optimal workers: {optimal_workers} (CPU: {cpu_count}, Memory: {memory_gb:.1f}GB)")
    except Exception as e:
        logger.warning(f"Error calculating optimal workers: {e}, using a single worker")
        optimal_workers = 1
    if n_items is not None:
        optimal_workers = min(optimal_workers, max(1, n_items))
    return optimal_workers


def resolve_workers(jobs: int, n_items: Optional[int] = None) -> int:
    """Map the --jobs knob to a worker count (0 means automatic)."""
    if jobs <= 0:
        return calculate_optimal_workers(n_items)
    if n_items is not None:
        return max(1, min(jobs, n_items))
    return jobs


def _run_unit(payload):
    func, index, item, title = payload
    setproctitle.setproctitle(f"{title}-worker-{os.getpid()}")
    return index, func(item)


def run_parallel(
    func: Callable[[T], R],
    items: Sequence[T],
    max_workers: int = 1,
    title: str = "brain-attrib",
    progress_callback: Optional[Callable[[Dict[str, Any]], None]] = None
) -> List[R]:
    """
    Apply func to every item, in worker processes when max_workers > 1.

    Results always come back in input order whatever the completion order, so reductions
    over them are deterministic. The first failing item (in input order) re-raises its
    exception after all units finish.

    Args:
        func: Picklable module-level function of one argument
        items: Work units
        max_workers: Worker process cap; <= 1 runs serially in this process
        title: Process title prefix shown by ps/top
        progress_callback: Called with {'completed', 'total'} after each unit

    Returns:
        List of results aligned with items
    """
    items = list(items)
    total = len(items)
    if total == 0:
        return []

    start_time = time.time()
    if max_workers <= 1 or total == 1:
        results = []
        for i, item in enumerate(items):
            results.append(func(item))
            if progress_callback:
                progress_callback({'completed': i + 1, 'total': total})
        return results

    workers = min(max_workers, total)
    logger.info(f"Starting {total} work units on {workers} worker processes")
    setproctitle.setproctitle(f"{title}-main-{os.getpid()}")

    results: List[Any] = [None] * total
    errors: Dict[int, BaseException] = {}
    completed = 0
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
        futures = {
            executor.submit(_run_unit, (func, i, item, title)): i
            for i, item in enumerate(items)
        }
        for future in concurrent.futures.as_completed(futures):
            index = futures[future]
            try:
                _, result = future.result()
                results[index] = result
            except Exception as e:
                logger.error(f"Work unit {index} failed: {e}")
                errors[index] = e
            completed += 1
            if progress_callback:
                progress_callback({'completed': completed, 'total': total})

    elapsed = time.time() - start_time
    logger.debug(f"Finished {total} work units in {elapsed:.2f}s")
    if errors:
        raise errors[min(errors)]
    return results
