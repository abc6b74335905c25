"""Mutual Information Gap and reconstruction quality."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MI_FLOOR = 1e-9


@dataclass
class MiMatrix:
    mi: np.ndarray  # (K, F) nats
    factor_entropies: np.ndarray  # (F,) nats


def discrete_entropy(labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty input")
    _, counts = np.unique(labels, return_counts=True)
    N = labels.size
    return math.fsum(-(c / N) * math.log(c / N) for c in counts.tolist())


def discrete_mutual_information(latent_bins, factor_values) -> float:
    """Plug-in mutual information (nats) of two discrete label vectors."""
    a = np.asarray(latent_bins)
    b = np.asarray(factor_values)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty input")
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("inputs must be 1-D and of equal length")
    N = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(joint, (ai, bi), 1)
    ca = joint.sum(axis=1)
    cb = joint.sum(axis=0)
    rows, cols = np.nonzero(joint)
    # fsum is correctly rounded, and ca*cb commutes, so MI(a,b) == MI(b,a) bitwise
    terms = [
        (c / N) * math.log(c * N / (int(ca[i]) * int(cb[j])))
        for c, i, j in zip(joint[rows, cols].tolist(), rows.tolist(), cols.tolist())
    ]
    return max(math.fsum(terms), 0.0)


def quantile_bins(codes: np.ndarray, n_bins: int = 20) -> np.ndarray:
    """Per-column quantile binning of a ``(N, K)`` code matrix.

    Edges are sample order statistics, so any strictly increasing transform
    of a column leaves its bin assignment unchanged.
    """
    codes = np.asarray(codes, dtype=float)
    if codes.ndim != 2:
        raise ValueError("codes must be (N, K)")
    qs = np.linspace(0.0, 1.0, n_bins + 1)[1:-1]
    out = np.empty(codes.shape, dtype=np.int64)
    for k in range(codes.shape[1]):
        col = codes[:, k]
        edges = np.quantile(col, qs, method="lower")
        out[:, k] = np.searchsorted(edges, col, side="right")
    return out


def mutual_info_matrix(codes, factors, n_bins: int = 20) -> MiMatrix:
    bins = quantile_bins(codes, n_bins)
    factors = np.asarray(factors)
    K, F = bins.shape[1], factors.shape[1]
    mi = np.zeros((K, F))
    for k in range(K):
        for f in range(F):
            mi[k, f] = discrete_mutual_information(bins[:, k], factors[:, f])
    mi[mi < MI_FLOOR] = 0.0
    H = np.array([discrete_entropy(factors[:, f]) for f in range(F)])
    return MiMatrix(mi, H)


def mig_score(m: MiMatrix) -> float:
    """Mean over factors of (top MI - second MI) / H(factor).

    Constant factors (zero entropy) are skipped.
    """
    mi = np.asarray(m.mi, dtype=float)
    if mi.ndim != 2 or mi.shape[0] < 2:
        raise ValueError("MIG needs at least two latents")
    top2 = -np.sort(-mi, axis=0)[:2]
    H = np.asarray(m.factor_entropies, dtype=float)
    keep = H > 0
    if not keep.any():
        return 0.0
    gaps = (top2[0, keep] - top2[1, keep]) / H[keep]
    return float(np.clip(gaps.mean(), 0.0, 1.0))


def mig_from_codes(codes, factors, n_bins: int = 20) -> tuple[float, MiMatrix]:
    m = mutual_info_matrix(codes, factors, n_bins)
    return mig_score(m), m


def evaluate_model(model, dataset, n_bins: int = 20, seed: int = 0) -> dict:
    """MIG from posterior means plus the mean per-image reconstruction LL.

    The reconstruction term is a one-sample Monte-Carlo estimate of
    ``E_q[log p(x|z)]`` with a fixed seed.
    """
    from .vae import bernoulli_recon_loglik

    if model.latent_dim < 2:
        raise ValueError("MIG needs at least two latents")
    x = dataset.flat
    mu, logvar = model.encode(x)
    mig, m = mig_from_codes(mu, dataset.factors, n_bins)
    rng = np.random.default_rng(seed)
    z = mu + np.exp(0.5 * logvar) * rng.standard_normal(mu.shape)
    recon = bernoulli_recon_loglik(model.decode_logits(z), x)
    return {
        "mig": mig,
        "recon_ll": float(np.mean(recon)),
        "mi_matrix": m.mi.tolist(),
        "factor_entropies": m.factor_entropies.tolist(),
    }
