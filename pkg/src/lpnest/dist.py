"""L^p-nested symmetric distributions with the generalized-Chi radial law.

The density of ``z`` depends on ``z`` only through the nested function value
``v0 = f(z)``::

    p(z) = psi0(f(z)) / (f(z)^(n-1) * S_f(1))
    psi0(v) = p0 v^(n-1) / (Gamma(n/p0) s^(n/p0)) * exp(-v^p0 / s)

The ``v^(n-1)`` factors cancel, so ``log p(z)`` is evaluated in the closed form
``C - f(z)^p0 / s`` which is finite everywhere, including ``z = 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from .tree import Leaf, LpTree, Node, eval_f, flat_tree, pow_f_with_grads


@dataclass(frozen=True)
class RadialParams:
    p0: float
    s: float
    n: int

    def __post_init__(self):
        if not self.p0 > 0:
            raise ValueError(f"p0 must be positive, got {self.p0}")
        if not self.s > 0:
            raise ValueError(f"s must be positive, got {self.s}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")


def log_surface_area(tree: LpTree, R: float = 1.0) -> float:
    """Log of the surface area of the f-sphere of radius ``R``."""
    if not R > 0:
        raise ValueError("R must be positive")
    out = (tree.n - 1) * math.log(R) + tree.n * math.log(2.0)
    for node, c in zip(tree.inner_nodes, tree.node_counts()):
        p = node.p
        out += sum(gammaln(k / p) for k in c.child_leaves)
        out -= (c.l - 1) * math.log(p) + gammaln(c.n / p)
    return float(out)


def surface_area(tree: LpTree, R: float = 1.0) -> float:
    return math.exp(log_surface_area(tree, R))


def log_surface_area_grad(tree: LpTree) -> np.ndarray:
    """Derivative of ``log S_f(1)`` with respect to each pre-order exponent."""
    out = []
    for node, c in zip(tree.inner_nodes, tree.node_counts()):
        p = node.p
        g = -sum(k / p**2 * digamma(k / p) for k in c.child_leaves)
        g += -(c.l - 1) / p + c.n / p**2 * digamma(c.n / p)
        out.append(g)
    return np.array(out)


def log_radial_density(v0, radial: RadialParams):
    """Log of the generalized-Chi density of the radius ``v0 = f(z)``."""
    v0 = np.asarray(v0, dtype=float)
    if np.any(v0 < 0):
        raise ValueError("v0 must be non-negative")
    n, p0, s = radial.n, radial.p0, radial.s
    const = math.log(p0) - gammaln(n / p0) - (n / p0) * math.log(s)
    with np.errstate(divide="ignore"):
        powr = 0.0 if n == 1 else (n - 1) * np.log(v0)
    out = const + powr - v0**p0 / s
    return float(out) if out.ndim == 0 else out


class LpNestedDistribution:
    """Joint density and exact sampler for an L^p-nested symmetric law."""

    def __init__(self, tree: LpTree, s: float = 2.0):
        self.tree = tree
        self.radial = RadialParams(p0=tree.p0, s=float(s), n=tree.n)

    @property
    def n(self) -> int:
        return self.tree.n

    @property
    def s(self) -> float:
        return self.radial.s

    def with_exponents(self, exponents) -> "LpNestedDistribution":
        return LpNestedDistribution(self.tree.with_exponents(exponents), self.s)

    def log_normalizer(self) -> float:
        """``log p(z) + f(z)^p0 / s``, the same for every ``z``."""
        n, p0, s = self.n, self.tree.p0, self.s
        return (
            math.log(p0)
            - gammaln(n / p0)
            - (n / p0) * math.log(s)
            - log_surface_area(self.tree)
        )

    def log_density(self, z):
        f = eval_f(self.tree, z)
        out = self.log_normalizer() - np.asarray(f) ** self.tree.p0 / self.s
        return float(out) if out.ndim == 0 else out

    def log_density_with_grads(self, z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``log p(z)`` for a batch plus gradients w.r.t. ``z`` and the exponents.

        Exponent gradients have one column per inner node (pre-order).
        """
        g, dg_dz, dg_dp = pow_f_with_grads(self.tree, z)
        s, n, p0 = self.s, self.n, self.tree.p0
        logp = self.log_normalizer() - g / s
        dconst = -log_surface_area_grad(self.tree)
        dconst[0] += 1.0 / p0 + n / p0**2 * digamma(n / p0) + n / p0**2 * math.log(s)
        return logp, -dg_dz / s, dconst[None, :] - dg_dp / s

    # -- sampling ------------------------------------------------------
    def sample(self, rng, count: int, verbatim: bool = True) -> np.ndarray:
        """Exact i.i.d. draws, shape ``(count, n)``.

        Steps: radius from Beta(n, 1) (skipped when ``verbatim`` is False),
        Dirichlet splits at every inner node pushed down the tree, projection
        onto the unit f-sphere, a fresh radius from the generalized-Chi law
        and independent random signs.
        """
        if isinstance(count, bool) or int(count) != count or count < 1:
            raise ValueError("count must be positive")
        count = int(count)
        rng = np.random.default_rng(rng)
        n = self.n
        v0 = rng.beta(n, 1.0, size=count) if verbatim else np.ones(count)
        x = np.empty((count, n))

        def descend(item: Node | Leaf, radius: np.ndarray) -> None:
            if isinstance(item, Leaf):
                x[:, item.dim] = radius
                return
            p = item.p
            shapes = np.array([_leaves(c) / p for c in item.children])
            g = rng.standard_gamma(shapes, size=(count, len(shapes)))
            u = (g / g.sum(axis=1, keepdims=True)) ** (1.0 / p)
            for k, child in enumerate(item.children):
                descend(child, radius * u[:, k])

        descend(self.tree.root, v0)
        u = x / eval_f(self.tree, x)[:, None]
        p0 = self.tree.p0
        radius = rng.gamma(n / p0, self.s, size=count) ** (1.0 / p0)
        signs = rng.integers(0, 2, size=(count, n)) * 2 - 1
        return radius[:, None] * u * signs

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {"tree": self.tree.to_dict(), "s": self.s}

    @classmethod
    def from_dict(cls, data: dict) -> "LpNestedDistribution":
        if not isinstance(data, dict) or "tree" not in data:
            raise ValueError("distribution spec needs a 'tree'")
        s = data.get("s", 2.0)
        if isinstance(s, bool) or not isinstance(s, (int, float)):
            raise ValueError("'s' must be a number")
        return cls(LpTree.from_dict(data["tree"]), float(s))

    @classmethod
    def from_json(cls, text: str) -> "LpNestedDistribution":
        return cls.from_dict(json.loads(text))


def _leaves(item: Node | Leaf) -> int:
    if isinstance(item, Leaf):
        return 1
    return sum(_leaves(c) for c in item.children)


def generalized_gaussian(n: int, p: float, tau: float = 0.5) -> LpNestedDistribution:
    """Factorial exponential-power prior ``exp(-tau ||z||_p^p)``, normalised.

    ``tau = 1/s``; the default ``tau = 1/2`` with ``p = 2`` is the standard normal.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    return LpNestedDistribution(flat_tree(n, p), s=1.0 / tau)


def kurtosis_to_p(kappa: float) -> float:
    if not kappa > -1:
        raise ValueError("kappa must be > -1")
    return 2.0 / (1.0 + kappa)


def p_to_kurtosis(p: float) -> float:
    if not p > 0:
        raise ValueError("p must be positive")
    return 2.0 / p - 1.0
