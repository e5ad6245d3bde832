#!/usr/bin/env python3
"""
Brain Attribution - Main Entry Point
Compares which context words drive brain alignment against which drive next-word prediction
in a small causal language model.
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
