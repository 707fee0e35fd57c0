"""Per-client test-loss spread with and without fairness adjustment, over seeds.

    python3 scripts/fairness_sweep.py scripts/configs/fairness16.json --seeds 0 1 2 3 4
"""

import argparse
import os

from fednasmri import pipeline
from fednasmri.config import load_config
from fednasmri.metrics import fairness_stats, read_records_jsonl
from fednasmri.search_space import DiscreteArch


def client_losses(cfg, arch):
    pipeline.gen_data(cfg)
    pipeline.run_train(cfg, arch)
    pipeline.run_eval(cfg, scenarios=["in_distribution"])
    recs = read_records_jsonl(os.path.join(cfg.out_dir, "metrics.jsonl"))
    return [r.loss for r in recs if r.recon == "model"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default="runs/fairness_sweep")
    ap.add_argument("--ops", type=int, nargs="+", default=[0, 3, 6, 1, 7],
                    help="operation index per edge of the fixed architecture")
    args = ap.parse_args()
    wins = 0
    print(f"{'seed':>4} {'std on':>12} {'std off':>12} {'mean on':>12} {'mean off':>12}")
    for seed in args.seeds:
        stats = {}
        for fair in (True, False):
            cfg = load_config(args.config, seed=seed,
                              out_dir=os.path.join(args.out, f"seed{seed}_{'on' if fair else 'off'}"))
            cfg = cfg.replace(fairness_enabled=fair)
            arch = DiscreteArch(tuple(args.ops), channels=cfg.channels, cells=cfg.cells)
            stats[fair] = fairness_stats(client_losses(cfg, arch))
        wins += stats[True][1] <= stats[False][1]
        print(f"{seed:>4} {stats[True][1]:>12.4e} {stats[False][1]:>12.4e} "
              f"{stats[True][0]:>12.4e} {stats[False][0]:>12.4e}")
    print(f"fairness std <= baseline std in {wins}/{len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
