#!/usr/bin/env python3
"""Run the full 50-seed median-descent ensemble (about 1.5 h on one core)."""
import pathlib
import sys

from medianflow.cli import main

HERE = pathlib.Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(main(["median", str(HERE / "configs" / "median_descent.cfg"), *sys.argv[1:]]))
