#!/usr/bin/env python3
"""Analytical chain versus Monte Carlo simulation on one scenario family.

Runs compare mode: each sweep point gets a simulated aggregate row and a
"#chain" row from the fixed point of the backoff chain coupled to the
reception abstraction; the report appends the per-point BLER deltas.
"""

import sys
from pathlib import Path

from gonora.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "smoke.toml"

if __name__ == "__main__":
    argv = [
        "--config", str(CONFIG),
        "--mode", "compare",
        "--sweep", "overload_factor=0.5,1,2",
        "--output", "chain_vs_sim.csv",
        *sys.argv[1:],
    ]
    sys.exit(main(argv))
