"""Multi-seed experiment drivers shared by scripts/ and the acceptance suite."""

from __future__ import annotations

import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .metrics import evaluate_model
from .sprites import MINI_SPRITES, SpritesConfig, generate
from .vae import TrainConfig, VaeModel, train


def load_train_config(path) -> TrainConfig:
    return TrainConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def mig_scores(config: TrainConfig, seeds, dataset=None) -> list[dict]:
    """Train one model per seed and evaluate it (MIG, recon LL, final ELBO)."""
    ds = dataset if dataset is not None else generate(SpritesConfig.from_dict(MINI_SPRITES))
    x = ds.flat
    rows = []
    for seed in seeds:
        cfg = replace(config, seed=int(seed))
        t0 = time.perf_counter()
        model = VaeModel.init(x.shape[1], cfg, np.random.default_rng(cfg.seed))
        trace = train(model, x, cfg)
        ev = evaluate_model(model, ds)
        rows.append(
            {
                "seed": int(seed),
                "mig": ev["mig"],
                "recon_ll": ev["recon_ll"],
                "final_elbo": trace[-1]["elbo"],
                "seconds": time.perf_counter() - t0,
            }
        )
    return rows


def mig_comparison(configs: dict[str, TrainConfig], seeds=range(10), archive=None) -> dict:
    """Per-prior score distributions plus their means; optionally written to ``archive``."""
    ds = generate(SpritesConfig.from_dict(MINI_SPRITES))
    out = {"seeds": [int(s) for s in seeds], "priors": {}}
    for name, cfg in configs.items():
        rows = mig_scores(cfg, seeds, ds)
        migs = [r["mig"] for r in rows]
        out["priors"][name] = {
            "config": cfg.to_dict(),
            "runs": rows,
            "mig_mean": float(np.mean(migs)),
            "mig_std": float(np.std(migs, ddof=1)) if len(migs) > 1 else 0.0,
        }
    if archive is not None:
        Path(archive).parent.mkdir(parents=True, exist_ok=True)
        Path(archive).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out
