"""Wall time and activation count against the number of crops.

    python scripts/scaling_probe.py --out-dir runs/scaling --repeats 3
"""

import argparse
import sys
from pathlib import Path

from glass.cli import main as glass

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out-dir", type=Path, default=Path("runs/scaling"))
    ap.add_argument("--n-values", default="1,2,4,8,16")
    ap.add_argument("--probe-batches", type=int, default=1)
    ap.add_argument("--repeats", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    sys.exit(glass(["scaling", "--n-values", args.n_values, "--probe-batches", str(args.probe_batches),
                    "--repeats", str(args.repeats), "--seed", str(args.seed), "--out-dir", str(args.out_dir)]))
