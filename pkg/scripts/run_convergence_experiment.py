#!/usr/bin/env python3
"""Run the headline convergence experiment with the default configuration.

Writes trajectories, per-cell diagnostics, plot data and an SVG chart under
results/convergence (override with the usual CLI flags, e.g. --out).
"""

import sys

from cdanneal.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    if not any(a == "--out" for a in args):
        args = ["--out", "results/convergence", *args]
    sys.exit(main(["run", "--svg", *args]))
