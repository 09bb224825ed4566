#!/usr/bin/env python3
"""Run the full three-stage pipeline at toy scale and print the reports.

Equivalent to `styleswap --preset toy pipeline`; kept as a script so the
default experiment is one command from a fresh checkout.
"""

import sys

from styleswap.cli import main

if __name__ == "__main__":
    sys.exit(main(["--preset", "toy", *sys.argv[1:], "pipeline"]))
