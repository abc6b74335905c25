#!/usr/bin/env python3
"""Rotation, pruning and beta-sweep experiments for mean-field factor analysis."""

import argparse
import json

from lpnest import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="JSON overrides of the benchmark config")
    ap.add_argument("--out", default="results/fa")
    args = ap.parse_args()
    argv = ["fa-lab", "--out", args.out] + (["--config", args.config] if args.config else [])
    code = cli.main(argv)
    if code == 0:
        with open(f"{args.out}/summary.json", encoding="utf-8") as fh:
            s = json.load(fh)
        print(f"logL {s['logL']:.4f}  F(pi/4) {s['F_at_pi_over_4']:.4f}")
        print(f"argmax theta {s['argmax_theta']}  argmax alpha {s['argmax_alpha']}")
        print("amplitude of F/beta per beta:", {k: round(v, 3) for k, v in s["amplitude_per_beta"].items()})
    raise SystemExit(code)


if __name__ == "__main__":
    main()
