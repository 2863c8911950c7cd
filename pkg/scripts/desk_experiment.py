"""Train GLASS and the global-only baseline on a fresh synthetic corpus.

    python scripts/desk_experiment.py --out-dir runs/desk

Writes the corpus under OUT/corpus and every artifact of ``glass compare``
under OUT/compare (checkpoints, histories, per-image predictions, compare.md).
"""

import argparse
import sys
import time
from pathlib import Path

from glass.cli import main as glass


def run(out_dir: Path, seed: int, epochs: int, per_class: tuple[int, int, int], size: int) -> int:
    t0 = time.perf_counter()
    train, val, test = per_class
    code = glass(["synth", "--count", str(train), "--val-count", str(val), "--test-count", str(test),
                  "--size", str(size), "--seed", str(seed), "--out-dir", str(out_dir / "corpus")])
    if code:
        return code
    code = glass(["-v", "compare", "--data", str(out_dir / "corpus"), "--epochs", str(epochs),
                  "--seed", str(seed), "--out-dir", str(out_dir / "compare")])
    print(f"total {(time.perf_counter() - t0) / 60:.1f} min")
    return code


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out-dir", type=Path, default=Path("runs/desk"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=25)
    ap.add_argument("--per-class", type=int, nargs=3, default=(250, 50, 100), metavar=("TRAIN", "VAL", "TEST"))
    ap.add_argument("--size", type=int, default=448)
    args = ap.parse_args()
    sys.exit(run(args.out_dir, args.seed, args.epochs, tuple(args.per_class), args.size))
