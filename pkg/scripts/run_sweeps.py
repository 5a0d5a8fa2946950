#!/usr/bin/env python3
"""Hyperparameter robustness sweeps: regularization, buffer size, latent
width, and mixing temperature, each on a shared data seed."""
from __future__ import annotations

import argparse
import sys

from noisemix.cli import main as cli_main

SWEEPS = {
    "lambda": ["10", "50", "100", "500", "1000"],
    "buffer_size": ["1024", "2048", "4096", "8192"],
    "d2": ["8", "16", "96", "192"],
    "tau": ["0.5", "1.0", "1.5", "2.0"],
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/sweeps")
    parser.add_argument("--only", choices=sorted(SWEEPS), help="run a single sweep")
    args = parser.parse_args()
    for parameter, values in SWEEPS.items():
        if args.only and parameter != args.only:
            continue
        rc = cli_main(
            ["sweep", "--parameter", parameter, "--values", *values, "--out", args.out]
        )
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
