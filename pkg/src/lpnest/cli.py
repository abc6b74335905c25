"""Command-line driver: every experiment from a JSON config, results as CSV/JSON/MSPR.

Exit codes: 0 success, 2 configuration or input error, 3 runtime/numerical failure.
Set ``LPNEST_LOG`` to ``error``, ``info`` or ``debug`` to control logging.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import sprites
from .decomposition import GridSpec, kl_decomposition_check
from .dist import LpNestedDistribution
from .metrics import evaluate_model, mig_from_codes
from .nn import NumericalError, load_checkpoint, save_checkpoint
from .tree import make_isa_tree, flat_tree
from .vae import PriorSpec, TrainConfig, TrainingDiverged, VaeModel, latent_traversal, train
from .vilab import fa, ica

log = logging.getLogger("lpnest")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class ConfigError(ValueError):
    pass


# -- io helpers ------------------------------------------------------------


def _read_json(path_or_text: str | None, default: dict | None = None) -> dict:
    if path_or_text is None:
        return dict(default or {})
    p = Path(path_or_text)
    if p.is_file():
        text = p.read_text(encoding="utf-8")
    elif path_or_text.lstrip().startswith("{"):
        text = path_or_text
    else:
        raise ConfigError(f"config file not found: {path_or_text}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def _merge(defaults: dict, given: dict, what: str) -> dict:
    extra = set(given) - set(defaults)
    if extra:
        raise ConfigError(f"unknown {what} config keys: {sorted(extra)}")
    out = dict(defaults)
    out.update(given)
    return out


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(path: Path, data) -> None:
    Path(path).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _outdir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# -- distribution specs ----------------------------------------------------


def distribution_from_spec(spec: dict) -> LpNestedDistribution:
    """``{"tree": {...}, "s": 2}``, ``{"flat": {"n": 3, "p": 2}}`` or
    ``{"isa": {"sizes": [2, 2], "p0": 2.1, "p_sub": [2.2, 2.2]}}``."""
    s = spec.get("s", 2.0)
    if "tree" in spec:
        return LpNestedDistribution.from_dict(spec)
    if "flat" in spec:
        f = spec["flat"]
        return LpNestedDistribution(flat_tree(int(f["n"]), float(f["p"])), s)
    if "isa" in spec:
        i = spec["isa"]
        return LpNestedDistribution(make_isa_tree(i["sizes"], i["p0"], i.get("p_sub", [2.0] * len(i["sizes"]))), s)
    raise ConfigError("distribution spec needs one of 'tree', 'flat' or 'isa'")


# -- subcommands -------------------------------------------------------------


def cmd_dist_sample(args) -> int:
    spec = _read_json(args.spec)
    try:
        dist = distribution_from_spec(spec)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid spec: {exc}") from exc
    if args.n < 1:
        raise ConfigError("count must be positive")
    z = dist.sample(np.random.default_rng(args.seed), args.n)
    _write_csv(Path(args.out), [f"z{i}" for i in range(dist.n)], z.tolist())
    log.info("wrote %d samples to %s", args.n, args.out)
    return EXIT_OK


FA_DEFAULTS = {
    "W_ML": [[1.5, 0.0], [0.0, 0.7]],
    "D": [0.1, 0.1],
    "N": 200,
    "seed": 7,
    "beta": 1.0,
    "theta_points": 73,
    "beta_list": [1.0, 2.0, 5.0],
    "alpha_points": 51,
    "rho": 0.5,
    "pruning_D": [0.1, 0.1],
}


def fa_benchmark(cfg: dict) -> tuple[fa.FaModel, fa.DataStats, np.ndarray]:
    model = fa.FaModel(np.asarray(cfg["W_ML"], dtype=float), np.asarray(cfg["D"], dtype=float))
    X = model.sample(np.random.default_rng(cfg["seed"]), int(cfg["N"]))
    theta = np.linspace(0.0, math.pi, int(cfg["theta_points"]))
    return model, fa.DataStats.from_data(X), theta


def _offset_half_pi(t: float) -> float:
    """Distance from ``t`` to the nearest multiple of pi/2."""
    r = float(t) % (math.pi / 2)
    return min(r, math.pi / 2 - r)


def run_fa_lab(cfg: dict) -> dict:
    model, stats, theta = fa_benchmark(cfg)
    res = {}
    rot = fa.fa_rotation_experiment(model, stats, cfg["beta"], theta)
    alpha = np.linspace(0.0, 0.5, int(cfg["alpha_points"]))
    pr = fa.fa_pruning_experiment(alpha, cfg["rho"], D=cfg["pruning_D"], beta=cfg["beta"])
    sweep = fa.fa_beta_sweep(model, stats, cfg["beta_list"], theta)
    amps = {str(b): fa.amplitude(c) for b, c in sweep.items()}
    amp_vals = [fa.amplitude(sweep[float(b)]) for b in cfg["beta_list"]]
    res["rotation"] = rot
    res["pruning"] = pr
    res["sweep"] = sweep
    res["summary"] = {
        "logL": float(rot[0, 1]),
        "argmax_theta": fa.argmax_set(rot[:, 2], theta).tolist(),
        "argmax_theta_max_offset": max(_offset_half_pi(t) for t in fa.argmax_set(rot[:, 2], theta)),
        "F_at_pi_over_4": float(fa.fa_rotation_experiment(model, stats, cfg["beta"], [math.pi / 4])[0, 2]),
        "argmax_alpha": fa.argmax_set(pr[:, 2], alpha).tolist(),
        "argmax_theta_per_beta": {str(b): fa.argmax_set(c[:, 2], theta).tolist() for b, c in sweep.items()},
        "amplitude_per_beta": amps,
        "amplitude_raw_per_beta": {str(b): fa.amplitude(c, column=2) for b, c in sweep.items()},
        "amplitude_decreasing": bool(all(a > b for a, b in zip(amp_vals, amp_vals[1:]))),
    }
    return res


def cmd_fa_lab(args) -> int:
    cfg = _merge(FA_DEFAULTS, _read_json(args.config), "fa")
    res = run_fa_lab(cfg)
    out = _outdir(args.out)
    _write_csv(out / "rotation.csv", ["theta", "logL", "F"], res["rotation"].tolist())
    _write_csv(out / "pruning.csv", ["alpha", "logL", "F"], res["pruning"].tolist())
    rows = [[b, *r] for b, c in res["sweep"].items() for r in c.tolist()]
    _write_csv(out / "beta_sweep.csv", ["beta", "theta", "logL", "F", "F_over_beta"], rows)
    _write_json(out / "summary.json", res["summary"])
    log.info("fa-lab results in %s", out)
    return EXIT_OK


ICA_DEFAULTS = {
    "angles_deg": [0.0, 60.0, 120.0],
    "noise": 0.01,
    "sigma": 1.0,
    "v": 3.5,
    "N": 2000,
    "seed": 0,
    "betas": [1.0, 5.0],
    "max_iters": 200,
    "order": 64,
    "prune_ratio": 0.05,
}


def ica_data(cfg: dict) -> tuple[ica.IcaModel, np.ndarray]:
    model = ica.default_ica_model(cfg["angles_deg"], cfg["noise"], cfg["sigma"], cfg["v"])
    return model, model.sample(np.random.default_rng(cfg["seed"]), int(cfg["N"]))


def run_ica_fit(cfg: dict, beta: float) -> dict:
    model, X = ica_data(cfg)
    fit_cfg = ica.IcaFitConfig(max_iters=int(cfg["max_iters"]), order=int(cfg["order"]))
    r = ica.ica_fit(model, X, beta, fit_cfg)
    summary = ica.summarize_components(r.model.W, cfg["prune_ratio"])
    summary.update(
        beta=beta,
        true_min_line_angle_deg=ica.min_line_angle(model.W),
        iterations=r.iterations,
        converged=r.converged,
        stalled=r.stalled,
        message=r.message,
        final_F=r.trace[-1],
        monotone=bool(np.all(np.diff(r.trace) >= 0)),
        components=r.components(),
    )
    return {"trace": r.trace, "summary": summary}


def _ica_job(item):
    cfg, beta = item
    return run_ica_fit(cfg, beta)


def cmd_ica_lab(args) -> int:
    cfg = _merge(ICA_DEFAULTS, _read_json(args.config), "ica")
    betas = [float(b) for b in cfg["betas"]]
    if any(not b > 0 for b in betas):
        raise ConfigError("betas must be positive")
    jobs = [(cfg, b) for b in betas]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_ica_job, jobs))
    else:
        results = [_ica_job(j) for j in jobs]
    out = _outdir(args.out)
    summary = {}
    for b, res in zip(betas, results):
        tag = f"beta{b:g}"
        _write_csv(out / f"trace_{tag}.csv", ["iter", "F"], list(enumerate(res["trace"])))
        comps = res["summary"]["components"]
        _write_csv(
            out / f"components_{tag}.csv",
            ["component", "angle_deg", "norm"],
            [[i, c["angle_deg"], c["norm"]] for i, c in enumerate(comps)],
        )
        summary[tag] = res["summary"]
    _write_json(out / "summary.json", summary)
    log.info("ica-lab results in %s", out)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    given = _read_json(args.config)
    try:
        cfg = sprites.SpritesConfig.from_dict(given)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    ds = sprites.generate(cfg)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    sprites.save(args.out, ds)
    log.info("wrote %d images (%s) to %s", ds.n, "x".join(map(str, ds.factor_cardinalities)), args.out)
    return EXIT_OK


def _load_data(path: str) -> sprites.FactorDataset:
    if not Path(path).is_file():
        raise ConfigError(f"data file not found: {path}")
    return sprites.load(path)


def cmd_train_vae(args) -> int:
    given = _read_json(args.config)
    ds = _load_data(args.data)
    out = _outdir(args.out)
    if given.get("oracle"):
        # test fixture: a checkpoint whose codes are the ground-truth factors
        save_checkpoint(out / "model.nnc", {}, {"oracle": True})
        _write_csv(out / "trace.csv", ["epoch", "elbo", "recon_ll", "kl_mc"], [])
        return EXIT_OK
    try:
        cfg = TrainConfig.from_dict(given)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    model = VaeModel.init(ds.flat.shape[1], cfg, np.random.default_rng(cfg.seed))
    try:
        trace = train(model, ds.flat, cfg)
    except TrainingDiverged as exc:
        _write_trace(out / "trace.csv", exc.trace)
        raise
    _write_trace(out / "trace.csv", trace)
    model.save(out / "model.nnc", {"train_config": cfg.to_dict(), "image_shape": list(ds.images.shape[1:])})
    _write_json(out / "config.json", cfg.to_dict())
    log.info("final epoch elbo %.4f", trace[-1]["elbo"])
    return EXIT_OK


def _write_trace(path: Path, trace: list[dict]) -> None:
    keys = list(trace[0]) if trace else ["epoch", "elbo", "recon_ll", "kl_mc"]
    _write_csv(path, keys, [[r[k] for k in keys] for r in trace])


def _load_model(path: str):
    if not Path(path).is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    nets, meta = load_checkpoint(path)
    if meta.get("oracle"):
        return None, meta
    return VaeModel.load(path)


def cmd_eval_mig(args) -> int:
    model, meta = _load_model(args.ckpt)
    ds = _load_data(args.data)
    if model is None:
        mig, m = mig_from_codes(ds.factors.astype(float), ds.factors, args.bins)
        res = {"mig": mig, "recon_ll": None, "mi_matrix": m.mi.tolist(), "factor_entropies": m.factor_entropies.tolist()}
    else:
        res = evaluate_model(model, ds, n_bins=args.bins, seed=args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    _write_json(Path(args.out), res)
    log.info("MIG %.4f", res["mig"])
    return EXIT_OK


KL_DEFAULTS = {"instances": 20, "N": 4, "K": 2, "seed": 0, "points": 401, "mu_scale": 1.5, "prior": None}


def run_kl_decompose(cfg: dict) -> dict:
    rng = np.random.default_rng(cfg["seed"])
    prior = None if cfg["prior"] is None else distribution_from_spec(cfg["prior"])
    rows = []
    for i in range(int(cfg["instances"])):
        mu = rng.normal(0.0, cfg["mu_scale"], (cfg["N"], cfg["K"]))
        logvar = rng.uniform(-2.0, 0.5, (cfg["N"], cfg["K"]))
        d = kl_decomposition_check(mu, logvar, prior, GridSpec(points=int(cfg["points"])))
        row = d.as_dict()
        row["residual"] = abs(d.mi_term + d.tc_term + d.dimwise_term - d.total_kl)
        rows.append(row)
    return {"instances": rows, "max_residual": max(r["residual"] for r in rows)}


def cmd_kl_decompose(args) -> int:
    cfg = _merge(KL_DEFAULTS, _read_json(args.config), "kl-decompose")
    res = run_kl_decompose(cfg)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    _write_json(Path(args.out), res)
    log.info("max identity residual %.3e", res["max_residual"])
    return EXIT_OK


def cmd_traverse(args) -> int:
    model, _ = _load_model(args.ckpt)
    if model is None:
        raise ConfigError("the oracle checkpoint has no decoder")
    ds = _load_data(args.data)
    if not 0 <= args.index < ds.n:
        raise ConfigError(f"index must be in [0, {ds.n})")
    values = [float(v) for v in args.values.split(",")] if args.values else np.linspace(-3, 3, 9).tolist()
    try:
        imgs = latent_traversal(model, ds.flat[args.index], args.dim, values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    H, W = ds.images.shape[1:]
    stack = sprites.FactorDataset(
        imgs.reshape(len(values), H, W).astype(np.float32),
        np.arange(len(values))[:, None],
        ("step",),
        (len(values),),
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    sprites.save(args.out, stack)
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lpnest", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dist-sample", help="draw samples from an L^p-nested distribution")
    p.add_argument("--spec", required=True, help="JSON file or inline JSON")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dist_sample)

    p = sub.add_parser("fa-lab", help="factor-analysis rotation, pruning and beta sweep")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fa_lab)

    p = sub.add_parser("ica-lab", help="over-complete Student-t ICA fits")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_ica_lab)

    p = sub.add_parser("gen-data", help="render a mini-sprites dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-vae", help="train a VAE")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_vae)

    p = sub.add_parser("eval-mig", help="MIG and reconstruction LL of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval_mig)

    p = sub.add_parser("kl-decompose", help="quadrature check of the KL decomposition")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_kl_decompose)

    p = sub.add_parser("traverse", help="decode a latent traversal")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--values", help="comma-separated latent values")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_traverse)
    return ap


def _setup_logging() -> None:
    level = os.environ.get("LPNEST_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.INFO), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (TrainingDiverged, NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
