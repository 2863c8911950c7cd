"""Coverage grid for the ten reference sizes, with and without Monte Carlo columns.

    python scripts/coverage_tables.py --out-dir runs/coverage --mc-trials 200
"""

import argparse
import sys
from pathlib import Path

from glass.cli import main as glass

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out-dir", type=Path, default=Path("runs/coverage"))
    ap.add_argument("--mc-trials", type=int, default=0,
                    help="Monte Carlo trials per cell; the 4320x7680 bitmap makes this slow")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    argv = ["coverage-table", "--out-dir", str(args.out_dir), "--seed", str(args.seed)]
    if args.mc_trials:
        # 7680x4320 exceeds the bitmap cap and 5120x2880 is slow, so both are left out
        argv += ["--mc-trials", str(args.mc_trials), "--sizes",
                 "224x224,256x256,640x480,1024x768,1280x720,1920x1080,2560x1440,3840x2160"]
    sys.exit(glass(argv))
