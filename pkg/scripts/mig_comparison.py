#!/usr/bin/env python3
"""Train VAEs with the standard-normal and ISA priors on mini-sprites and compare MIG.

    python scripts/mig_comparison.py --seeds 10 --epochs 50 --out results/mig_scores.json
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from lpnest.experiments import load_train_config, mig_comparison

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=None, help="override the config epochs")
    ap.add_argument("--normal-config", default=ROOT / "configs" / "vae_normal.json")
    ap.add_argument("--isa-config", default=ROOT / "configs" / "vae_isa.json")
    ap.add_argument("--out", default=ROOT / "results" / "mig_scores.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    configs = {"normal": load_train_config(args.normal_config), "isa": load_train_config(args.isa_config)}
    if args.epochs is not None:
        configs = {k: replace(c, epochs=args.epochs) for k, c in configs.items()}
    res = mig_comparison(configs, range(args.seeds), archive=args.out)
    for name, r in res["priors"].items():
        migs = " ".join(f"{row['mig']:.3f}" for row in r["runs"])
        print(f"{name:>6}: mean MIG {r['mig_mean']:.3f} +- {r['mig_std']:.3f}  [{migs}]")
    n, i = res["priors"]["normal"]["mig_mean"], res["priors"]["isa"]["mig_mean"]
    print(f"isa >= normal: {i >= n}  (scores archived in {args.out})")


if __name__ == "__main__":
    main()
