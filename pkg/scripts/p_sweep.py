#!/usr/bin/env python3
"""RU-selection-probability sweep at low and high overload.

At light load a larger p means more repetition diversity per packet and a
lower BLER; under congestion the extra occupancy feeds interference and the
ordering is allowed to flip.  Writes p_sweep.csv and prints the report.
"""

import sys
from pathlib import Path

from gonora.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "default.toml"

if __name__ == "__main__":
    argv = [
        "--config", str(CONFIG),
        "--sweep", "overload_factor=0.5,4",
        "--sweep", "p=0.1,0.3,0.6",
        "--output", "p_sweep.csv",
        *sys.argv[1:],
    ]
    sys.exit(main(argv))
