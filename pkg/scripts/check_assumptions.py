#!/usr/bin/env python3
"""Report the model, kernel and schedule assumption checks and constants.

Prints the smallest admissible chain length and writes assumptions.json
plus per-(n, m) constant files under results/assumptions by default.
"""

import json
import sys

from cdanneal.cli import main
from cdanneal.config import RunConfig, default_config
from cdanneal.harness import verify_assumptions

if __name__ == "__main__":
    args = sys.argv[1:]
    if "--print" in args:
        args.remove("--print")
        config = default_config()
        for i, a in enumerate(args):
            if a == "--config":
                config = RunConfig.from_file(args[i + 1])
        report = verify_assumptions(config)
        print(json.dumps(report, indent=2, sort_keys=True, default=str))
        sys.exit(0)
    if not any(a == "--out" for a in args):
        args = ["--out", "results/assumptions", *args]
    sys.exit(main(["verify", *args]))
