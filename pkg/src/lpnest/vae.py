"""MLP VAEs with a standard-normal or L^p-nested (ISA) latent prior.

Objectives are returned as batch means together with the gradients of the
*objective* (to be maximised).  Reparameterisation noise is passed in
explicitly so every estimate is reproducible and finite-difference checkable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .dist import LpNestedDistribution
from .nn import AdamState, ForwardCache, Mlp, NumericalError, adam_step, load_checkpoint, save_checkpoint
from .tree import LpTree, make_isa_tree

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


def softplus(u):
    return np.logaddexp(0.0, u)


def inv_softplus(y: float) -> float:
    return float(y + math.log(-math.expm1(-y)))


@dataclass
class PriorSpec:
    """``kind`` is "normal", "isa" (depth-two layout) or "tree" (any LpTree)."""

    kind: str = "normal"
    subspace_sizes: Sequence[int] = ()
    p0: float = 2.1
    p_sub: Sequence[float] = ()
    s: float = 2.0
    tree: dict | None = None

    def __post_init__(self):
        if self.kind not in ("normal", "isa", "tree"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "isa" and not self.p_sub:
            self.p_sub = [2.0] * len(self.subspace_sizes)

    def build(self) -> LpNestedDistribution | None:
        if self.kind == "normal":
            return None
        if self.kind == "isa":
            tree = make_isa_tree(self.subspace_sizes, self.p0, self.p_sub)
        else:
            if self.tree is None:
                raise ValueError("prior kind 'tree' needs a tree")
            tree = LpTree.from_dict(self.tree)
        return LpNestedDistribution(tree, self.s)

    @classmethod
    def from_dict(cls, data: dict) -> "PriorSpec":
        data = dict(data)
        if "type" in data:
            data["kind"] = data.pop("type")
        extra = set(data) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown prior keys: {sorted(extra)}")
        return cls(**data)


@dataclass
class TrainConfig:
    beta: float = 1.0
    epochs: int = 20
    batch_size: int = 64
    lr: float = 0.001
    seed: int = 0
    latent_dim: int = 8
    mc_samples: int = 1
    hidden: int = 256
    prior: PriorSpec = field(default_factory=PriorSpec)
    trainable_exponents: bool = False
    exponent_lr: float | None = None  # defaults to lr
    p_min: float = 1.0

    def __post_init__(self):
        if isinstance(self.prior, dict):
            self.prior = PriorSpec.from_dict(self.prior)
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.epochs < 1 or self.batch_size < 1 or self.mc_samples < 1:
            raise ValueError("epochs, batch_size and mc_samples must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        extra = set(data) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown training config keys: {sorted(extra)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


class VaeModel:
    def __init__(
        self,
        encoder: Mlp,
        decoder: Mlp,
        prior: LpNestedDistribution | None = None,
        trainable_exponents: bool = False,
        p_min: float = 1.0,
    ):
        K = decoder.input_dim
        if encoder.output_dim != 2 * K:
            raise ValueError("encoder must output 2K values (means, log-variances)")
        if prior is not None and prior.n != K:
            raise ValueError(f"prior has {prior.n} dims but the latent space has {K}")
        if trainable_exponents and prior is None:
            raise ValueError("trainable exponents need an L^p-nested prior")
        self.encoder = encoder
        self.decoder = decoder
        self.p_min = p_min
        self.trainable_exponents = trainable_exponents
        self._prior = prior
        # unconstrained parameters of the non-root exponents
        self.exponent_raw = None
        if trainable_exponents:
            start = prior.tree.exponents[1:]
            if np.any(start <= p_min):
                raise ValueError("initial exponents must exceed p_min")
            self.exponent_raw = np.array([inv_softplus(p - p_min) for p in start])

    @classmethod
    def init(cls, input_dim: int, config: TrainConfig, rng: np.random.Generator) -> "VaeModel":
        K, H = config.latent_dim, config.hidden
        enc = Mlp.init([input_dim, H, H, 2 * K], ["relu", "relu", "identity"], rng)
        dec = Mlp.init([K, H, H, H, input_dim], ["tanh", "tanh", "tanh", "identity"], rng)
        prior = config.prior.build()
        if prior is not None and config.trainable_exponents:
            # training starts every subspace exponent at 2.0
            prior = prior.with_exponents([prior.tree.p0] + [2.0] * (len(prior.tree.exponents) - 1))
        return cls(enc, dec, prior, config.trainable_exponents, config.p_min)

    @property
    def latent_dim(self) -> int:
        return self.decoder.input_dim

    @property
    def prior(self) -> LpNestedDistribution | None:
        if self.exponent_raw is None:
            return self._prior
        ps = self.p_min + softplus(self.exponent_raw)
        return self._prior.with_exponents([self._prior.tree.p0, *ps])

    def exponents(self) -> np.ndarray | None:
        prior = self.prior
        return None if prior is None else prior.tree.exponents

    def params(self) -> list[np.ndarray]:
        out = self.encoder.params() + self.decoder.params()
        if self.exponent_raw is not None:
            out.append(self.exponent_raw)
        return out

    def encode(self, x, cache: ForwardCache | None = None) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.size and (x.min() < 0 or x.max() > 1):
            raise ValueError("pixel values must lie in [0, 1]")
        h = self.encoder.forward(x, cache)
        K = self.latent_dim
        return h[:, :K], h[:, K:]

    def decode_logits(self, z, cache: ForwardCache | None = None) -> np.ndarray:
        return self.decoder.forward(np.asarray(z, dtype=float), cache)

    # -- checkpoints ---------------------------------------------------
    def save(self, path, meta: dict | None = None) -> None:
        prior = self.prior
        info = {
            "prior": None if prior is None else prior.to_dict(),
            "trainable_exponents": self.trainable_exponents,
            "p_min": self.p_min,
            "exponent_raw": None if self.exponent_raw is None else self.exponent_raw.tolist(),
        }
        info.update(meta or {})
        save_checkpoint(path, {"encoder": self.encoder, "decoder": self.decoder}, info)

    @classmethod
    def load(cls, path) -> tuple["VaeModel", dict]:
        nets, meta = load_checkpoint(path)
        prior = None if meta.get("prior") is None else LpNestedDistribution.from_dict(meta["prior"])
        trainable = bool(meta.get("trainable_exponents"))
        model = cls(nets["encoder"], nets["decoder"], prior, False, meta.get("p_min", 1.0))
        if trainable:
            model.trainable_exponents = True
            model.exponent_raw = np.asarray(meta["exponent_raw"], dtype=float)
        return model, meta


def reparameterize(mu, logvar, noise) -> np.ndarray:
    return np.asarray(mu) + np.exp(0.5 * np.asarray(logvar)) * np.asarray(noise)


def bernoulli_recon_loglik(logits, x) -> np.ndarray:
    """Per-row ``sum_pixels x log sigmoid(l) + (1 - x) log(1 - sigmoid(l))``."""
    x = np.asarray(x, dtype=float)
    logits = np.asarray(logits, dtype=float)
    if x.size and (x.min() < 0 or x.max() > 1):
        raise ValueError("targets must lie in [0, 1]")
    return np.sum(x * logits - np.logaddexp(0.0, logits), axis=-1)


def sigmoid(l):
    return np.exp(-np.logaddexp(0.0, -np.asarray(l, dtype=float)))


def gaussian_kl(mu, logvar) -> np.ndarray:
    """Per-row ``KL(N(mu, exp(logvar)) || N(0, I))``."""
    return 0.5 * np.sum(mu**2 + np.exp(logvar) - logvar - 1.0, axis=-1)


def log_q(z, mu, logvar) -> np.ndarray:
    return -0.5 * np.sum(LOG_2PI + logvar + (z - mu) ** 2 / np.exp(logvar), axis=-1)


@dataclass
class ElboResult:
    value: float  # batch-mean objective
    recon: float  # batch-mean E_q[log p(x|z)] estimate
    kl: float  # batch-mean KL (analytic or Monte-Carlo)
    grads: list[np.ndarray]  # d value / d model.params(), same order


def _noise(noise, B: int, K: int) -> np.ndarray:
    noise = np.asarray(noise, dtype=float)
    if noise.ndim == 2:
        noise = noise[None]
    if noise.shape[1:] != (B, K):
        raise ValueError(f"noise must have shape (S, {B}, {K})")
    return noise


def _elbo(model: VaeModel, x, beta: float, noise, analytic_kl: bool) -> ElboResult:
    x = np.asarray(x, dtype=float)
    B = x.shape[0]
    K = model.latent_dim
    eps = _noise(noise, B, K)
    S = eps.shape[0]
    prior = model.prior
    enc_cache = ForwardCache()
    mu, logvar = model.encode(x, enc_cache)
    std = np.exp(0.5 * logvar)

    d_mu = np.zeros_like(mu)
    d_lv = np.zeros_like(logvar)
    dec_grads = [np.zeros_like(p) for p in model.decoder.params()]
    d_exp = np.zeros(0 if model.exponent_raw is None else model.exponent_raw.size)
    recon_sum = 0.0
    kl_sum = 0.0
    for s in range(S):
        z = mu + std * eps[s]
        cache = ForwardCache()
        logits = model.decode_logits(z, cache)
        recon = bernoulli_recon_loglik(logits, x)
        recon_sum += recon.sum()
        # d recon / d logits = x - sigmoid(l); scaled for the (1/(S B)) mean
        g_dec, d_z = model.decoder.backward(cache, (x - sigmoid(logits)) / (S * B))
        for acc, g in zip(dec_grads, g_dec):
            acc += g
        if not analytic_kl:
            lq = -0.5 * np.sum(LOG_2PI + logvar + eps[s] ** 2, axis=-1)
            if prior is None:
                lp = -0.5 * np.sum(LOG_2PI + z**2, axis=-1)
                dlp_dz = -z
                dlp_dp = None
            else:
                lp, dlp_dz, dlp_dp = prior.log_density_with_grads(z)
            kl_sum += np.sum(lq - lp)
            d_z = d_z + beta * dlp_dz / (S * B)
            d_lv += beta * 0.5 / (S * B)  # -beta * d log q / d logvar
            if dlp_dp is not None and d_exp.size:
                d_exp += beta * dlp_dp[:, 1:].sum(axis=0) / (S * B)
        d_mu += d_z
        d_lv += d_z * 0.5 * std * eps[s]

    if analytic_kl:
        kl = gaussian_kl(mu, logvar)
        kl_sum = kl.sum() * S
        d_mu -= beta * mu / B
        d_lv -= beta * 0.5 * (np.exp(logvar) - 1.0) / B
    enc_grads, _ = model.encoder.backward(enc_cache, np.concatenate([d_mu, d_lv], axis=1))
    grads = enc_grads + dec_grads
    if model.exponent_raw is not None:
        # chain rule through p = p_min + softplus(raw)
        grads.append(d_exp * sigmoid(model.exponent_raw))
    recon_mean = recon_sum / (S * B)
    kl_mean = kl_sum / (S * B)
    return ElboResult(recon_mean - beta * kl_mean, recon_mean, kl_mean, grads)


def elbo_standard(model: VaeModel, x, beta: float, noise) -> ElboResult:
    """Monte-Carlo reconstruction minus ``beta`` times the analytic Gaussian KL."""
    if model.prior is not None:
        raise ValueError("elbo_standard needs the standard-normal prior")
    return _elbo(model, x, beta, noise, analytic_kl=True)


def elbo_isa(model: VaeModel, x, beta: float, noise) -> ElboResult:
    """``E_q[log p(x|z) - beta (log q(z|x) - log p(z))]`` with one shared z per draw.

    ``noise`` has shape ``(mc_samples, B, K)`` (or ``(B, K)`` for one draw).
    """
    if model.prior is None:
        raise ValueError("elbo_isa needs an L^p-nested prior")
    return _elbo(model, x, beta, noise, analytic_kl=False)


def elbo(model: VaeModel, x, beta: float, noise) -> ElboResult:
    if model.prior is None:
        return elbo_standard(model, x, beta, noise)
    return elbo_isa(model, x, beta, noise)


# -- training --------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, trace: list[dict]):
        super().__init__(message)
        self.trace = trace


def train(model: VaeModel, x, config: TrainConfig) -> list[dict]:
    """Adam on the negative objective; returns one trace row per epoch.

    ``x`` is a ``(N, P)`` array of flattened images in [0, 1].
    """
    x = np.asarray(x, dtype=float)
    N = x.shape[0]
    rng = np.random.default_rng(config.seed + 1)  # +1: separate from the init stream
    net_state = AdamState(lr=config.lr)
    exp_state = AdamState(lr=config.lr if config.exponent_lr is None else config.exponent_lr)
    n_net = len(model.encoder.params()) + len(model.decoder.params())
    trace: list[dict] = []
    K = model.latent_dim
    for epoch in range(config.epochs):
        order = rng.permutation(N)
        sums = np.zeros(3)
        for start in range(0, N, config.batch_size):
            idx = order[start : start + config.batch_size]
            noise = rng.standard_normal((config.mc_samples, len(idx), K))
            try:
                res = elbo(model, x[idx], config.beta, noise)
            except NumericalError as exc:
                raise TrainingDiverged(str(exc), trace) from exc
            if not math.isfinite(res.value):
                raise TrainingDiverged(f"non-finite objective in epoch {epoch}", trace)
            sums += len(idx) * np.array([res.value, res.recon, res.kl])
            params = model.params()
            neg = [-g for g in res.grads]
            adam_step(net_state, params[:n_net], neg[:n_net])
            if model.exponent_raw is not None:
                adam_step(exp_state, params[n_net:], neg[n_net:])
        row = {"epoch": epoch, "elbo": sums[0] / N, "recon_ll": sums[1] / N, "kl_mc": sums[2] / N}
        ps = model.exponents()
        if model.trainable_exponents and ps is not None:
            for i, p in enumerate(ps[1:], start=1):
                row[f"p_{i}"] = float(p)
        log.debug("epoch %d elbo %.4f", epoch, row["elbo"])
        trace.append(row)
    return trace


def latent_traversal(model: VaeModel, x, dim: int, values) -> np.ndarray:
    """Decoded pixel means, shape ``(len(values), P)``, for one seed image."""
    if not 0 <= dim < model.latent_dim:
        raise ValueError(f"dim must be in [0, {model.latent_dim})")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    mu, _ = model.encode(x)
    values = np.asarray(values, dtype=float)
    z = np.repeat(mu, len(values), axis=0)
    z[:, dim] = values
    return sigmoid(model.decode_logits(z))
