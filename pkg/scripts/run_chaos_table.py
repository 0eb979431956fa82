#!/usr/bin/env python3
"""Evaluate the first-chaos variance table (closed form vs Monte Carlo)."""
import pathlib
import sys

from medianflow.cli import main

HERE = pathlib.Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(main(["chaos", str(HERE / "configs" / "chaos_table.cfg"), *sys.argv[1:]]))
