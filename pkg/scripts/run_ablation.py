#!/usr/bin/env python3
"""Reproduce the two ablation grids on the headline task.

Runs {inverse-para, denoise} x {enc, enc+catt, enc+catt+dec} plus the
no-s0 variant and prints the comparison table. Reuses artifacts in the
workdir, so run the pipeline first to share its adapters.
"""

import sys

from styleswap.cli import main

if __name__ == "__main__":
    sys.exit(main(["--preset", "toy", *sys.argv[1:], "ablate", "--task", "headline"]))
