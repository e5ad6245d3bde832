#!/usr/bin/env python3
"""
Test script for worker management module
Tests ordered parallel execution of independent work units
"""

import os
import sys
import time
import unittest
from unittest.mock import patch

# Add project root to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.core.worker_management import (
    calculate_optimal_workers,
    resolve_workers,
    run_parallel
)


def slow_square(value: int) -> int:
    """Later items finish first so completion order differs from input order"""
    time.sleep(0.01 * (5 - value % 5))
    return value * value


def fail_on_odd(value: int) -> int:
    if value % 2:
        raise ValueError(f"odd input {value}")
    return value


class TestRunParallel(unittest.TestCase):
    """Test cases for run_parallel"""

    def test_serial_results_in_order(self):
        self.assertEqual(run_parallel(slow_square, [1, 2, 3]), [1, 4, 9])

    def test_parallel_results_in_input_order(self):
        items = list(range(10))
        self.assertEqual(run_parallel(slow_square, items, max_workers=3), [i * i for i in items])

    def test_empty_input(self):
        self.assertEqual(run_parallel(slow_square, [], max_workers=4), [])

    def test_progress_callback(self):
        seen = []
        run_parallel(slow_square, [1, 2, 3, 4], max_workers=2, progress_callback=seen.append)
        self.assertEqual(len(seen), 4)
        self.assertEqual(seen[-1], {'completed': 4, 'total': 4})
        self.assertEqual(sorted(info['completed'] for info in seen), [1, 2, 3, 4])

    def test_first_failure_in_input_order_is_raised(self):
        with self.assertRaises(ValueError) as ctx:
            run_parallel(fail_on_odd, [0, 3, 4, 1], max_workers=2)
        self.assertIn("odd input 3", str(ctx.exception))

    def test_serial_failure_propagates(self):
        with self.assertRaises(ValueError):
            run_parallel(fail_on_odd, [0, 1])


class TestWorkerCount(unittest.TestCase):
    """Test cases for worker count resolution"""

    def test_explicit_jobs_capped_by_items(self):
        self.assertEqual(resolve_workers(8, 3), 3)
        self.assertEqual(resolve_workers(2, 10), 2)
        self.assertEqual(resolve_workers(4), 4)

    def test_at_least_one_worker(self):
        self.assertEqual(resolve_workers(3, 0), 1)

    def test_automatic_sizing(self):
        workers = resolve_workers(0, 1000)
        self.assertGreaterEqual(workers, 1)
        self.assertLessEqual(workers, os.cpu_count() or 1)

    @patch('src.core.worker_management.psutil.cpu_count', return_value=16)
    def test_automatic_sizing_capped_by_items(self, _):
        self.assertEqual(calculate_optimal_workers(2), 2)

    @patch('src.core.worker_management.psutil.virtual_memory', side_effect=RuntimeError("no /proc"))
    def test_sizing_falls_back_to_one(self, _):
        self.assertEqual(calculate_optimal_workers(), 1)


if __name__ == "__main__":
    unittest.main()
