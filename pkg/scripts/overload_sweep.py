#!/usr/bin/env python3
"""Overload-factor sweep at several RRH pool sizes.

Shows the congestion behaviour: BLER rises with the device/RU ratio and
falls with the number of combining radio heads, throughput the other way
around.  Writes overload_sweep.csv and prints the trend report.
"""

import sys
from pathlib import Path

from gonora.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "default.toml"

if __name__ == "__main__":
    argv = [
        "--config", str(CONFIG),
        "--sweep", "rrh_count=1,2,4",
        "--sweep", "overload_factor=0.5,1,2,4,8",
        "--output", "overload_sweep.csv",
        *sys.argv[1:],
    ]
    sys.exit(main(argv))
