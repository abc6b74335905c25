#!/usr/bin/env python3
"""Generate mini-sprites, train one VAE, report MIG and dump a traversal per latent."""

import argparse
from pathlib import Path

from lpnest import cli
from lpnest.experiments import load_train_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/vae_isa.json")
    ap.add_argument("--data-config", default="configs/data_mini_sprites.json")
    ap.add_argument("--out", default="results/run")
    args = ap.parse_args()
    out = Path(args.out)
    data = out / "data.mspr"
    steps = [
        ["gen-data", "--config", args.data_config, "--out", data],
        ["train-vae", "--config", args.config, "--data", data, "--out", out],
        ["eval-mig", "--ckpt", out / "model.nnc", "--data", data, "--out", out / "mig.json"],
    ]
    for s in steps:
        code = cli.main([str(a) for a in s])
        if code:
            raise SystemExit(code)
    K = load_train_config(args.config).latent_dim
    for k in range(K):
        cli.main(["traverse", "--ckpt", str(out / "model.nnc"), "--data", str(data), "--dim", str(k),
                  "--out", str(out / f"traverse_dim{k}.mspr")])
    print((out / "mig.json").read_text())


if __name__ == "__main__":
    main()
