"""Run gen-data, search, train, eval and report for one JSON config.

    python3 scripts/run_pipeline.py scripts/configs/quick.json --out runs/quick
"""

import argparse
import time

from fednasmri import pipeline
from fednasmri.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out")
    ap.add_argument("--seed", type=int)
    args = ap.parse_args()
    cfg = load_config(args.config, out_dir=args.out, seed=args.seed)
    start = time.perf_counter()
    rows = pipeline.run_all(cfg)
    print(pipeline.format_summary(rows))
    print(f"outputs in {cfg.out_dir} ({time.perf_counter() - start:.0f}s)")


if __name__ == "__main__":
    main()
