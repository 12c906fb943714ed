#!/usr/bin/env python3
"""Sweep sample sizes, fit the tail-error rate and print the verdict.

Writes rate/rate_summary.csv and rate/rate_fit.json under results/rate by
default; exits 3 when the fitted slopes fall outside the expected band.
"""

import sys

from cdanneal.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    if not any(a == "--out" for a in args):
        args = ["--out", "results/rate", *args]
    sys.exit(main(["rate", *args]))
