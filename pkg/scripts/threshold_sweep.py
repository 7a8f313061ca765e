#!/usr/bin/env python3
"""Reproduce the threshold study: optimize, then sweep and train.

Solves for the optimal truncation threshold under the configured system,
then trains across a gamma grid (fixed thresholds plus the adaptive
policies) and writes the sweep table + manifest.  With default settings
this is the experiment behind the accuracy-vs-threshold figure.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from airfl.cli import main as cli_main


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=None)
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)

    common = ["--out", args.out, "--jobs", str(args.jobs)]
    if args.config is not None:
        common += ["--config", args.config]
    if args.seed is not None:
        common += ["--seed", str(args.seed)]

    rc = cli_main(["optimize-threshold"] + common)
    if rc != 0:
        return rc
    return cli_main(["sweep-threshold"] + common)


if __name__ == "__main__":
    sys.exit(run())
