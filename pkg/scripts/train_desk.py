"""Train (or reuse) the cached desk-scale networks used by the acceptance tests.

    python3 scripts/train_desk.py s1-oriented s2-unoriented --seeds 0
"""
import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from desk import RUNS, run_dir, trained  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("runs", nargs="*", default=list(RUNS), choices=list(RUNS))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()
    for name in args.runs:
        for seed in args.seeds:
            t0 = time.perf_counter()
            ck = trained(name, seed)
            print(f"{name} seed {seed}: best epoch {ck.epoch} E_l {ck.validation_score:.4e} "
                  f"({time.perf_counter() - t0:.0f} s) -> {run_dir(name, seed)}")


if __name__ == "__main__":
    main()
