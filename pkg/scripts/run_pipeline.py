#!/usr/bin/env python3
"""Run the full cohort -> scores -> adjustment -> survival pipeline.

Thin wrapper over the CLI so the canonical experiment is one command:

    python scripts/run_pipeline.py --out-dir runs/demo --seed 7 --n 400
"""

import sys

from qcausal.cli import main

if __name__ == "__main__":
    argv = sys.argv[1:]
    sys.exit(main(["pipeline", *argv]))
