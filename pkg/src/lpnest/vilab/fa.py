"""Closed-form mean-field (beta-)VI for linear factor analysis.

Generative model: ``z ~ N(0, I_K)``, ``x | z ~ N(W z, D)`` with diagonal ``D``.
Everything is evaluated from the sufficient statistics (mean, covariance, N),
never by looping over data points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FaModel:
    W: np.ndarray  # (L, K)
    D: np.ndarray  # (L,) noise variances

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        D = np.asarray(self.D, dtype=float).reshape(-1)
        if D.shape[0] != W.shape[0]:
            raise ValueError("D must have one variance per observed dimension")
        if np.any(D <= 0):
            raise ValueError("noise variances must be positive")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "D", D)

    @property
    def L(self) -> int:
        return self.W.shape[0]

    @property
    def K(self) -> int:
        return self.W.shape[1]

    def sample(self, rng, N: int) -> np.ndarray:
        rng = np.random.default_rng(rng)
        z = rng.standard_normal((N, self.K))
        return z @ self.W.T + rng.standard_normal((N, self.L)) * np.sqrt(self.D)


@dataclass(frozen=True)
class DataStats:
    mu_x: np.ndarray
    sigma_x: np.ndarray
    N: int

    def __post_init__(self):
        mu = np.asarray(self.mu_x, dtype=float).reshape(-1)
        S = np.atleast_2d(np.asarray(self.sigma_x, dtype=float))
        if S.shape != (mu.size, mu.size):
            raise ValueError("sigma_x must be L x L")
        if not np.allclose(S, S.T, atol=1e-12):
            raise ValueError("sigma_x must be symmetric")
        if np.linalg.eigvalsh(S).min() < -1e-10:
            raise ValueError("sigma_x must be positive semi-definite")
        if self.N < 1:
            raise ValueError("N must be positive")
        object.__setattr__(self, "mu_x", mu)
        object.__setattr__(self, "sigma_x", S)

    @classmethod
    def from_data(cls, X) -> "DataStats":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mu = X.mean(axis=0)
        Xc = X - mu
        return cls(mu, Xc.T @ Xc / len(X), len(X))

    @property
    def second_moment(self) -> np.ndarray:
        return self.sigma_x + np.outer(self.mu_x, self.mu_x)


@dataclass(frozen=True)
class MeanFieldQ:
    R: np.ndarray  # (K, L) recognition weights, mean_n = R x_n
    sigma_q: np.ndarray  # (K,) posterior variances

    def __post_init__(self):
        if np.any(np.asarray(self.sigma_q) <= 0):
            raise ValueError("posterior variances must be positive")


def _check(model: FaModel, stats: DataStats) -> None:
    if stats.mu_x.size != model.L:
        raise ValueError(f"data has {stats.mu_x.size} dims, model expects {model.L}")


def fa_log_likelihood(model: FaModel, stats: DataStats) -> float:
    _check(model, stats)
    C = model.W @ model.W.T + np.diag(model.D)
    _, logdet = np.linalg.slogdet(2 * np.pi * C)
    quad = np.trace(np.linalg.solve(C, stats.second_moment))
    return float(-0.5 * stats.N * (logdet + quad))


def fa_posterior(model: FaModel, x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    WtDi = model.W.T / model.D
    cov = np.linalg.inv(WtDi @ model.W + np.eye(model.K))
    return cov @ WtDi @ x, cov


def fa_mean_field(model: FaModel, beta: float = 1.0) -> MeanFieldQ:
    """Optimal factorised q for the beta-tempered FA posterior.

    With ``M = 1/beta`` the tempered posterior has covariance
    ``(M W^T D^-1 W + I)^-1``; q keeps its mean and its diagonal precision.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    M = 1.0 / beta
    WtDi = model.W.T / model.D
    prec = M * WtDi @ model.W + np.eye(model.K)
    R = np.linalg.solve(prec, M * WtDi)
    return MeanFieldQ(R=R, sigma_q=1.0 / np.diag(prec))


def fa_reconstruction(model: FaModel, q: MeanFieldQ, stats: DataStats) -> float:
    """``sum_n E_q[log p(x_n | z_n)]`` in closed form."""
    _check(model, stats)
    W, R = model.W, q.R
    Di = 1.0 / model.D
    A = np.diag(Di) - 2 * R.T @ (W.T * Di) + R.T @ ((W.T * Di) @ W) @ R
    quad = np.trace(A @ stats.second_moment)
    logdet = np.sum(np.log(2 * np.pi * model.D))
    var = np.sum(np.diag((W.T * Di) @ W) * q.sigma_q)
    return float(-0.5 * stats.N * (quad + logdet + var))


def fa_kl(q: MeanFieldQ, stats: DataStats) -> float:
    """``sum_n KL(q(z_n) || N(0, I))`` in closed form."""
    K = q.sigma_q.size
    S = q.sigma_q
    mean_sq = np.trace(q.R.T @ q.R @ stats.second_moment)
    return float(-0.5 * stats.N * (K + np.sum(np.log(S)) - np.sum(S) - mean_sq))


def fa_free_energy(model: FaModel, q: MeanFieldQ, stats: DataStats, beta: float = 1.0) -> float:
    return fa_reconstruction(model, q, stats) - beta * fa_kl(q, stats)


# -- experiments -----------------------------------------------------------


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotated_model(model: FaModel, theta: float) -> FaModel:
    """Mix the two latent directions by ``R(theta)``; ``W W^T`` is unchanged."""
    return FaModel(model.W @ rotation(theta), model.D)


def fa_rotation_experiment(
    model: FaModel, stats: DataStats, beta: float, theta_grid
) -> np.ndarray:
    """Rows ``(theta, logL, F_beta)`` for latent-rotated copies of ``model``."""
    if model.W.shape != (2, 2):
        raise ValueError("rotation experiment expects L = K = 2")
    G = (model.W.T / model.D) @ model.W
    if abs(G[0, 1]) > 1e-10 * max(1.0, abs(G[0, 0]), abs(G[1, 1])):
        raise ValueError("W_ML must have orthogonal columns (W^T D^-1 W diagonal)")
    rows = []
    for theta in np.asarray(theta_grid, dtype=float):
        m = rotated_model(model, theta)
        q = fa_mean_field(m, beta)
        rows.append((theta, fa_log_likelihood(m, stats), fa_free_energy(m, q, stats, beta)))
    return np.array(rows)


def pruning_model(alpha: float, rho: float, D) -> FaModel:
    """Two observed dims, three latents; components 1 and 2 share a direction
    with weights ``alpha`` and ``sqrt(1 - alpha^2)``."""
    b = np.sqrt(1.0 - alpha**2)
    W = np.array([[alpha, b, rho], [alpha, b, -rho]]) / np.sqrt(2.0)
    return FaModel(W, D)


def pruning_stats(rho: float, D, N: int = 200) -> DataStats:
    """Statistics whose covariance equals the (alpha-independent) model covariance."""
    m = pruning_model(0.0, rho, D)
    return DataStats(np.zeros(2), m.W @ m.W.T + np.diag(m.D), N)


def fa_pruning_experiment(
    alpha_grid, rho: float, stats: DataStats | None = None, D=(0.1, 0.1), beta: float = 1.0
) -> np.ndarray:
    """Rows ``(alpha, logL, F_beta)`` over the over-complete family."""
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    if np.any(alpha_grid < 0) or np.any(alpha_grid > 0.5):
        raise ValueError("alpha must lie in [0, 1/2]")
    stats = stats or pruning_stats(rho, D)
    rows = []
    for alpha in alpha_grid:
        m = pruning_model(alpha, rho, D)
        q = fa_mean_field(m, beta)
        rows.append((alpha, fa_log_likelihood(m, stats), fa_free_energy(m, q, stats, beta)))
    return np.array(rows)


def fa_beta_sweep(model: FaModel, stats: DataStats, beta_list, theta_grid) -> dict[float, np.ndarray]:
    """Rotation curves per beta with rows ``(theta, logL, F_beta, F_beta / beta)``.

    The last column is the free energy of the likelihood-tempered model
    (reconstruction scaled by ``1/beta``, unit-weight KL); fluctuation
    amplitudes are compared on that scale.
    """
    out = {}
    for b in beta_list:
        curve = fa_rotation_experiment(model, stats, b, theta_grid)
        out[float(b)] = np.column_stack([curve, curve[:, 2] / b])
    return out


def argmax_set(values, grid, rtol: float = 1e-9) -> np.ndarray:
    """Grid points whose value ties the maximum up to ``rtol``."""
    values = np.asarray(values)
    top = values.max()
    return np.asarray(grid)[values >= top - rtol * max(1.0, abs(top))]


def amplitude(curve: np.ndarray, column: int = -1) -> float:
    """Peak-to-trough range of one free-energy column (default: the last)."""
    return float(curve[:, column].max() - curve[:, column].min())
