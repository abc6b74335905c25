"""Grid-quadrature check of the three-term split of the average KL.

For a tiny dataset of Gaussian posteriors ``q(z|x_n)`` and a factorial prior,

    E_n KL(q(z|x_n) || p(z)) = I(n; z) + KL(q(z) || prod_j q(z_j))
                                + sum_j KL(q(z_j) || p(z_j)),

where ``q(z)`` is the aggregate posterior.  Every term is integrated on the
same dense grid, so the identity holds up to floating-point rounding and the
grid only needs to carry the mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .dist import LpNestedDistribution, generalized_gaussian

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GridSpec:
    points: int = 401
    half_width: float | None = None  # None: cover every posterior and the prior
    min_mass: float = 0.999


@dataclass(frozen=True)
class KlDecomposition:
    mi_term: float
    tc_term: float
    dimwise_term: float
    total_kl: float

    def as_dict(self) -> dict:
        return {
            "mi_term": self.mi_term,
            "tc_term": self.tc_term,
            "dimwise_term": self.dimwise_term,
            "total_kl": self.total_kl,
        }


def _marginal_prior(prior: LpNestedDistribution | None, K: int):
    """1-D log-density and a support half-width for each latent."""
    if prior is None:
        return (lambda z: -0.5 * (LOG_2PI + z**2)), 8.5
    tree = prior.tree
    if tree.n != K:
        raise ValueError(f"prior has {tree.n} dims, q has {K}")
    if tree.depth() != 1:
        # only a single-level tree factorises into identical 1-D marginals
        raise ValueError("the decomposition needs a factorial prior (a flat L^p tree)")
    one = generalized_gaussian(1, tree.p0, 1.0 / prior.s)
    width = (45.0 * prior.s) ** (1.0 / tree.p0)
    return (lambda z: one.log_density(z[:, None])), width


def kl_decomposition_check(mu, logvar, prior: LpNestedDistribution | None = None, grid: GridSpec = GridSpec()) -> KlDecomposition:
    """``mu``/``logvar`` are ``(N, K)`` posterior parameters (K <= 2, N <= 8).

    ``prior=None`` is the standard normal.
    """
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    logvar = np.atleast_2d(np.asarray(logvar, dtype=float))
    if mu.shape != logvar.shape:
        raise ValueError("mu and logvar must have the same shape")
    N, K = mu.shape
    if not 1 <= K <= 2:
        raise ValueError("quadrature check supports K = 1 or 2")
    if not 1 <= N <= 8:
        raise ValueError("quadrature check supports 1 to 8 data points")
    log_p1, prior_width = _marginal_prior(prior, K)
    sd = np.exp(0.5 * logvar)
    width = grid.half_width
    if width is None:
        width = max(prior_width, float(np.max(np.abs(mu) + 8.5 * sd)))
    axis = np.linspace(-width, width, grid.points)
    dz = axis[1] - axis[0]
    log_dz = np.log(dz)

    # per-dimension log q_n(z_j) on the axis: (N, K, G)
    lq1 = -0.5 * (LOG_2PI + logvar[:, :, None] + (axis[None, None, :] - mu[:, :, None]) ** 2 / np.exp(logvar)[:, :, None])
    lp1 = log_p1(axis)  # (G,)
    if K == 1:
        lq = lq1[:, 0, :]  # (N, G)
        lp = lp1
    else:
        lq = lq1[:, 0, :, None] + lq1[:, 1, None, :]  # (N, G, G)
        lp = lp1[:, None] + lp1[None, :]
    flat_q = lq.reshape(N, -1)
    mass = np.exp(logsumexp(flat_q, axis=1) + K * log_dz)
    prior_mass = float(np.exp(logsumexp(lp) + K * log_dz))
    # a Riemann sum can overshoot as well as miss mass
    worst = max(float(np.max(np.abs(mass - 1.0))), abs(prior_mass - 1.0))
    if worst > 1.0 - grid.min_mass:
        raise ValueError(
            f"grid too coarse or narrow: captured mass off by {worst:.6f} (tolerance {1.0 - grid.min_mass:g})"
        )

    cell = dz**K
    lagg = logsumexp(lq, axis=0) - np.log(N)
    q_n = np.exp(lq)
    q_agg = np.exp(lagg)
    total = float(np.sum(q_n * (lq - lp)) * cell / N)
    mi = float(np.sum(q_n * (lq - lagg)) * cell / N)
    if K == 1:
        tc = 0.0
        dimwise = float(np.sum(q_agg * (lagg - lp1)) * cell)
    else:
        # grid marginals of the aggregate, consistent with the 2-D sums
        lm0 = logsumexp(lagg, axis=1) + log_dz
        lm1 = logsumexp(lagg, axis=0) + log_dz
        tc = float(np.sum(q_agg * (lagg - lm0[:, None] - lm1[None, :])) * cell)
        dimwise = float(
            np.sum(np.exp(lm0) * (lm0 - lp1)) * dz + np.sum(np.exp(lm1) * (lm1 - lp1)) * dz
        )
    return KlDecomposition(mi, tc, dimwise, total)
