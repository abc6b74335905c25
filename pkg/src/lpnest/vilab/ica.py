"""Mean-field (beta-)VI for linear ICA with a Student-t source prior.

Generative model: ``z_nk ~ t(0, sigma, v)``, ``x_n ~ N(W z_n, D)``.  The
approximate posterior is a product of Gaussians per data point; its
cross-entropy with the prior is evaluated by Gauss-Hermite quadrature.
The q variances are parameterised by their logarithms in all gradients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


def _check_t(sigma: float, v: float) -> None:
    if not (sigma > 0 and v > 0 and math.isfinite(sigma) and math.isfinite(v)):
        raise ValueError("Student-t needs sigma > 0 and v > 0")


def student_t_log_density(z, sigma: float = 1.0, v: float = 3.5):
    _check_t(sigma, v)
    z = np.asarray(z, dtype=float)
    c = gammaln((v + 1) / 2) - gammaln(v / 2) - 0.5 * math.log(v * math.pi * sigma**2)
    out = c - (v + 1) / 2 * np.log1p(z * z / (v * sigma**2))
    return float(out) if out.ndim == 0 else out


def _t_d1(z, sigma, v):
    a = v * sigma**2
    return -(v + 1) * z / (a + z * z)


def _t_d2(z, sigma, v):
    a = v * sigma**2
    return -(v + 1) * (a - z * z) / (a + z * z) ** 2


@dataclass(frozen=True)
class IcaModel:
    W: np.ndarray  # (L, K)
    D: np.ndarray  # (L,)
    sigma: float = 1.0
    v: float = 3.5

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        D = np.asarray(self.D, dtype=float).reshape(-1)
        if D.shape[0] != W.shape[0]:
            raise ValueError("D must have one variance per observed dimension")
        if np.any(D <= 0):
            raise ValueError("noise variances must be positive")
        _check_t(self.sigma, self.v)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "D", D)

    @property
    def L(self) -> int:
        return self.W.shape[0]

    @property
    def K(self) -> int:
        return self.W.shape[1]

    def with_weights(self, W) -> "IcaModel":
        return IcaModel(W, self.D, self.sigma, self.v)

    def sample(self, rng, N: int) -> np.ndarray:
        rng = np.random.default_rng(rng)
        z = rng.standard_t(self.v, size=(N, self.K)) * self.sigma
        return z @ self.W.T + rng.standard_normal((N, self.L)) * np.sqrt(self.D)


@dataclass(frozen=True)
class IcaQ:
    mu: np.ndarray  # (N, K)
    sigma2: np.ndarray  # (N, K)

    def __post_init__(self):
        mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        s2 = np.atleast_2d(np.asarray(self.sigma2, dtype=float))
        if mu.shape != s2.shape:
            raise ValueError("mu and sigma2 must have the same shape")
        if np.any(~(s2 > 0)):
            raise ValueError("q variances must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", s2)


@lru_cache(maxsize=16)
def gauss_hermite(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes ``t_i`` and weights for ``E_{N(0,1)}[h(u)] ~ sum_i w_i h(sqrt2 t_i)``."""
    if order < 2:
        raise ValueError("quadrature order must be >= 2")
    t, w = np.polynomial.hermite.hermgauss(order)
    return t, w / math.sqrt(math.pi)


def cross_entropy(mu, sigma2, sigma: float = 1.0, v: float = 3.5, order: int = 64) -> np.ndarray:
    """Elementwise ``-E_{N(mu, sigma2)}[log t(z)]``."""
    t, w = gauss_hermite(order)
    mu = np.asarray(mu, dtype=float)
    s = np.sqrt(np.asarray(sigma2, dtype=float))
    z = mu[..., None] + math.sqrt(2.0) * s[..., None] * t
    return -np.sum(w * student_t_log_density(z, sigma, v), axis=-1)


def _check_shapes(model: IcaModel, q: IcaQ, X: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[1] != model.L:
        raise ValueError(f"data must be (N, {model.L})")
    if q.mu.shape != (X.shape[0], model.K):
        raise ValueError(f"q must be ({X.shape[0]}, {model.K})")


def _point_terms(W, Dinv, mu, s2, X, beta, sigma, v, order):
    """Per-point free energy without the constants shared by every q."""
    G_diag = np.einsum("lk,l,lk->k", W, Dinv, W)
    res = X - mu @ W.T
    recon = -0.5 * np.sum(res**2 * Dinv, axis=1) - 0.5 * s2 @ G_diag
    kl = np.sum(cross_entropy(mu, s2, sigma, v, order) - 0.5 * np.log(s2), axis=1)
    return recon - beta * kl


def _constants(model: IcaModel, N: int, beta: float) -> float:
    K = model.K
    return -0.5 * N * float(np.sum(np.log(2 * np.pi * model.D))) + beta * N * K * 0.5 * (LOG_2PI + 1.0)


def ica_reconstruction(model: IcaModel, q: IcaQ, X) -> float:
    X = np.asarray(X, dtype=float)
    _check_shapes(model, q, X)
    Dinv = 1.0 / model.D
    G_diag = np.einsum("lk,l,lk->k", model.W, Dinv, model.W)
    res = X - q.mu @ model.W.T
    total = -0.5 * np.sum(res**2 * Dinv) - 0.5 * np.sum(q.sigma2 @ G_diag)
    return float(total - 0.5 * X.shape[0] * np.sum(np.log(2 * np.pi * model.D)))


def ica_kl(model: IcaModel, q: IcaQ, order: int = 64) -> float:
    """``sum_n KL(q_n || prior)`` = cross-entropy minus Gaussian entropy."""
    ce = cross_entropy(q.mu, q.sigma2, model.sigma, model.v, order)
    entropy = 0.5 * (LOG_2PI + 1.0 + np.log(q.sigma2))
    return float(np.sum(ce - entropy))


def ica_free_energy(model: IcaModel, q: IcaQ, X, beta: float = 1.0, order: int = 64) -> float:
    if not beta >= 0:
        raise ValueError("beta must be non-negative")
    X = np.asarray(X, dtype=float)
    _check_shapes(model, q, X)
    return ica_reconstruction(model, q, X) - beta * ica_kl(model, q, order)


@dataclass
class IcaGrads:
    value: float
    W: np.ndarray
    mu: np.ndarray
    log_sigma2: np.ndarray


def ica_free_energy_grads(model: IcaModel, q: IcaQ, X, beta: float = 1.0, order: int = 64) -> IcaGrads:
    """Free energy and its gradient w.r.t. ``W``, ``mu`` and ``log sigma2``."""
    X = np.asarray(X, dtype=float)
    _check_shapes(model, q, X)
    W, Dinv = model.W, 1.0 / model.D
    mu, s2 = q.mu, q.sigma2
    t, w = gauss_hermite(order)
    s = np.sqrt(s2)
    z = mu[..., None] + math.sqrt(2.0) * s[..., None] * t
    d1 = _t_d1(z, model.sigma, model.v)
    res = X - mu @ W.T
    G_diag = np.einsum("lk,l,lk->k", W, Dinv, W)
    dW = (res * Dinv).T @ mu - W * Dinv[:, None] * s2.sum(axis=0)
    dmu = (res * Dinv) @ W + beta * np.sum(w * d1, axis=-1)
    # dz/dlog(s2) = (sqrt2 t s) / 2
    dz_drho = math.sqrt(2.0) * t * s[..., None] / 2.0
    drho = -0.5 * s2 * G_diag + beta * (np.sum(w * d1 * dz_drho, axis=-1) + 0.5)
    value = ica_free_energy(model, q, X, beta, order)
    return IcaGrads(value, dW, dmu, drho)


# -- fitting ---------------------------------------------------------------


@dataclass(frozen=True)
class IcaFitConfig:
    max_iters: int = 300
    order: int = 64
    armijo_c: float = 1e-4
    max_halvings: int = 30
    rel_tol: float = 1e-10  # stop when the relative gain of one sweep falls below this
    overrelax: bool = True
    overrelax_growth: float = 1.5
    init_log_sigma2: float = math.log(0.1)


@dataclass
class IcaFitResult:
    model: IcaModel
    q: IcaQ
    trace: list[float]
    converged: bool
    stalled: bool
    message: str
    iterations: int = 0
    extrapolated: int = 0
    history: list = field(default_factory=list)

    def components(self) -> list[dict]:
        return component_table(self.model.W)


def component_table(W) -> list[dict]:
    """Direction (degrees in [0, 180)) and norm of every column of ``W``."""
    W = np.asarray(W, dtype=float)
    ang = np.degrees(np.arctan2(W[1], W[0])) % 180.0 if W.shape[0] == 2 else np.full(W.shape[1], np.nan)
    return [{"angle_deg": float(a), "norm": float(n)} for a, n in zip(ang, np.linalg.norm(W, axis=0))]


def _newton_q(model: IcaModel, mu, rho, X, beta, cfg: IcaFitConfig):
    """One damped Newton step per data point, each with its own Armijo search.

    Every point's free-energy term is non-decreasing, hence so is the total.
    """
    W, Dinv = model.W, 1.0 / model.D
    sig, v = model.sigma, model.v
    N, K = mu.shape
    t_nodes, w = gauss_hermite(cfg.order)
    s2 = np.exp(rho)
    s = np.sqrt(s2)
    G = (W.T * Dinv) @ W
    G_diag = np.diag(G)
    z = mu[..., None] + math.sqrt(2.0) * s[..., None] * t_nodes
    dz = math.sqrt(2.0) * t_nodes * s[..., None] / 2.0
    d1 = _t_d1(z, sig, v)
    d2 = _t_d2(z, sig, v)
    res = X - mu @ W.T
    g_mu = (res * Dinv) @ W + beta * np.sum(w * d1, axis=-1)
    g_rho = -0.5 * s2 * G_diag + beta * (np.sum(w * d1 * dz, axis=-1) + 0.5)
    H = np.zeros((N, 2 * K, 2 * K))
    H[:, :K, :K] = -G
    idx = np.arange(K)
    H[:, idx, idx] += beta * np.sum(w * d2, axis=-1)
    h_mr = beta * np.sum(w * d2 * dz, axis=-1)
    H[:, idx, K + idx] = h_mr
    H[:, K + idx, idx] = h_mr
    H[:, K + idx, K + idx] = -0.5 * s2 * G_diag + beta * np.sum(w * (d2 * dz * dz + d1 * dz / 2.0), axis=-1)
    g = np.concatenate([g_mu, g_rho], axis=1)
    # ascent direction from the negative-definite modification of the Hessian
    lam, U = np.linalg.eigh(H)
    lam = -np.maximum(np.abs(lam), 1e-8)
    step = -np.einsum("nij,nj->ni", U, np.einsum("nji,nj->ni", U, g) / lam)
    slope = np.sum(g * step, axis=1)

    F0 = _point_terms(W, Dinv, mu, s2, X, beta, sig, v, cfg.order)
    mu, rho = mu.copy(), rho.copy()
    todo = np.flatnonzero(slope > 0)
    t = 1.0
    for _ in range(cfg.max_halvings):
        if todo.size == 0:
            break
        m2 = mu[todo] + t * step[todo, :K]
        r2 = rho[todo] + t * step[todo, K:]
        with np.errstate(over="ignore", invalid="ignore"):
            F1 = _point_terms(W, Dinv, m2, np.exp(r2), X[todo], beta, sig, v, cfg.order)
        ok = np.isfinite(F1) & (F1 >= F0[todo] + cfg.armijo_c * t * slope[todo])
        acc = todo[ok]
        mu[acc] = m2[ok]
        rho[acc] = r2[ok]
        todo = todo[~ok]
        t *= 0.5
    return mu, rho


def _w_star(mu, rho, X) -> np.ndarray:
    """Exact maximiser of the free energy over ``W`` for fixed q."""
    A = mu.T @ mu + np.diag(np.exp(rho).sum(axis=0))
    return np.linalg.solve(A, mu.T @ X).T


def _total(model, mu, rho, X, beta, order):
    return ica_free_energy(model, IcaQ(mu, np.exp(rho)), X, beta, order)


def ica_fit(model_init: IcaModel, X, beta: float = 1.0, config: IcaFitConfig = IcaFitConfig()) -> IcaFitResult:
    """Monotone block ascent from ``model_init`` (the noise ``D`` stays fixed).

    One sweep is a Newton/Armijo step on every q factor followed by the exact
    ``W`` update.  With ``overrelax`` the sweep's displacement is also tried
    with an adaptive extrapolation factor, accepted only if it beats the plain
    sweep.  Every accepted iterate increases the free energy.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    X = np.asarray(X, dtype=float)
    model = model_init
    cfg = config
    N, K = X.shape[0], model.K
    if X.ndim != 2 or X.shape[1] != model.L:
        raise ValueError(f"data must be (N, {model.L})")
    mu = X @ np.linalg.pinv(model.W).T
    rho = np.full((N, K), cfg.init_log_sigma2)
    F = _total(model, mu, rho, X, beta, cfg.order)
    if not math.isfinite(F):
        raise FloatingPointError("non-finite free energy at initialisation")
    trace = [F]
    eta = 1.0
    extrapolated = 0
    converged = stalled = False
    message = "max_iters reached"
    for it in range(cfg.max_iters):
        mu1, rho1 = _newton_q(model, mu, rho, X, beta, cfg)
        W1 = _w_star(mu1, rho1, X)
        if not np.all(np.isfinite(W1)):
            raise FloatingPointError(f"non-finite weights in iteration {it}")
        m1 = model.with_weights(W1)
        F1 = _total(m1, mu1, rho1, X, beta, cfg.order)
        if F1 < F:
            # the W step is exact and the q step never decreases F, so this is rounding
            stalled = True
            message = f"no ascent in iteration {it}"
            break
        new = (m1, mu1, rho1, F1)
        if cfg.overrelax and eta > 1.0:
            Wx = model.W + eta * (W1 - model.W)
            mux = mu + eta * (mu1 - mu)
            rhox = rho + eta * (rho1 - rho)
            with np.errstate(over="ignore", invalid="ignore"):
                mx = model.with_weights(Wx)
                Fx = _total(mx, mux, rhox, X, beta, cfg.order) if np.all(np.isfinite(rhox)) else -np.inf
            if math.isfinite(Fx) and Fx > F1:
                new = (mx, mux, rhox, Fx)
                extrapolated += 1
                eta *= cfg.overrelax_growth
            else:
                eta = 1.0
        elif cfg.overrelax:
            eta = cfg.overrelax_growth
        gain = new[3] - F
        model, mu, rho, F = new
        trace.append(F)
        if gain <= cfg.rel_tol * abs(F):
            converged = True
            message = "converged"
            break
    log.debug("ica_fit: %s after %d iterations (%d extrapolated)", message, len(trace) - 1, extrapolated)
    return IcaFitResult(model, IcaQ(mu, np.exp(rho)), trace, converged, stalled, message, len(trace) - 1, extrapolated)


def min_line_angle(W) -> float:
    """Smallest pairwise angle (degrees, in [0, 90]) between column directions."""
    W = np.asarray(W, dtype=float)
    U = W / np.linalg.norm(W, axis=0)
    best = 90.0
    for i in range(W.shape[1]):
        for j in range(i + 1, W.shape[1]):
            c = min(1.0, abs(float(U[:, i] @ U[:, j])))
            best = min(best, math.degrees(math.acos(c)))
    return best


def summarize_components(W, prune_ratio: float = 0.05) -> dict:
    """Pruned count (norm below ``prune_ratio`` times the largest) and the
    angle between the surviving pair when exactly two survive."""
    norms = np.linalg.norm(np.asarray(W, dtype=float), axis=0)
    keep = norms >= prune_ratio * norms.max()
    out = {"n_pruned": int((~keep).sum()), "min_line_angle_deg": min_line_angle(W)}
    if keep.sum() == 2:
        out["surviving_angle_deg"] = min_line_angle(np.asarray(W)[:, keep])
    return out


def default_ica_model(angles_deg=(0.0, 60.0, 120.0), noise: float = 0.01, sigma: float = 1.0, v: float = 3.5) -> IcaModel:
    a = np.radians(np.asarray(angles_deg, dtype=float))
    return IcaModel(np.stack([np.cos(a), np.sin(a)]), np.full(2, noise), sigma, v)
