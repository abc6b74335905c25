"""L^p-nested functions represented as trees.

An inner node with exponent ``p`` and children ``c_1 .. c_l`` evaluates to
``(sum_k |c_k|^p)^(1/p)``; a leaf evaluates to ``|z_dim|``.  The depth-two
subclass (root over groups of leaves) is the ISA layout used as a VAE prior.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterator, Sequence, Union

import numpy as np


@dataclass(frozen=True)
class Leaf:
    dim: int


@dataclass(frozen=True)
class Node:
    p: float
    children: tuple["Node | Leaf", ...]


TreeItem = Union[Node, Leaf]


@dataclass(frozen=True)
class NodeCounts:
    """Leaf count ``n``, child count ``l`` and per-child leaf counts of a node."""

    n: int
    l: int
    child_leaves: tuple[int, ...]


class LpTree:
    """Immutable L^p-nested function over ``n`` latent dimensions.

    Inner nodes are numbered in pre-order; ``exponents[i]`` belongs to the
    ``i``-th inner node, with the root at index 0.
    """

    def __init__(self, root: Node):
        if not isinstance(root, Node):
            raise ValueError("the root of an LpTree must be an inner node")
        self.root = root
        self._inner: list[Node] = list(_iter_inner(root))
        for node in self._inner:
            if len(node.children) < 1:
                raise ValueError("every inner node needs at least one child")
            if not (math.isfinite(node.p) and node.p > 0):
                raise ValueError(f"exponent must be positive and finite, got {node.p}")
        dims = sorted(leaf.dim for leaf in _iter_leaves(root))
        if dims != list(range(len(dims))):
            raise ValueError("leaf indices must be a permutation of 0..n-1")
        self.n = len(dims)
        self._counts = [_counts(node) for node in self._inner]

    # -- structure -----------------------------------------------------
    @property
    def exponents(self) -> np.ndarray:
        return np.array([node.p for node in self._inner])

    @property
    def p0(self) -> float:
        return self.root.p

    @property
    def inner_nodes(self) -> list[Node]:
        return list(self._inner)

    def node_counts(self) -> list[NodeCounts]:
        """Counts for every inner node in pre-order (root first)."""
        return list(self._counts)

    def depth(self) -> int:
        return _depth(self.root)

    def is_isa(self) -> bool:
        """True for a root whose children are all inner nodes over leaves only."""
        return all(
            isinstance(c, Node) and all(isinstance(g, Leaf) for g in c.children)
            for c in self.root.children
        )

    def with_exponents(self, exponents: Sequence[float]) -> "LpTree":
        """Copy of the tree with the pre-order exponents replaced."""
        exponents = [float(p) for p in exponents]
        if len(exponents) != len(self._inner):
            raise ValueError(
                f"expected {len(self._inner)} exponents, got {len(exponents)}"
            )
        it = iter(exponents)

        def rebuild(item: TreeItem) -> TreeItem:
            if isinstance(item, Leaf):
                return item
            p = next(it)
            return Node(p, tuple(rebuild(c) for c in item.children))

        return LpTree(rebuild(self.root))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LpTree) and self.root == other.root

    def __hash__(self) -> int:
        return hash(self.root)

    def __repr__(self) -> str:
        return f"LpTree({self.to_json()})"

    # -- evaluation ----------------------------------------------------
    def __call__(self, z) -> np.ndarray | float:
        return eval_f(self, z)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return _to_dict(self.root)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "LpTree":
        item = _from_dict(data)
        if isinstance(item, Leaf):
            raise ValueError("the root of an LpTree must be an inner node")
        return cls(item)

    @classmethod
    def from_json(cls, text: str) -> "LpTree":
        return cls.from_dict(json.loads(text))


def _iter_inner(item: TreeItem) -> Iterator[Node]:
    if isinstance(item, Node):
        yield item
        for c in item.children:
            yield from _iter_inner(c)


def _iter_leaves(item: TreeItem) -> Iterator[Leaf]:
    if isinstance(item, Leaf):
        yield item
    else:
        for c in item.children:
            yield from _iter_leaves(c)


def _leaf_count(item: TreeItem) -> int:
    return 1 if isinstance(item, Leaf) else sum(_leaf_count(c) for c in item.children)


def _counts(node: Node) -> NodeCounts:
    child = tuple(_leaf_count(c) for c in node.children)
    return NodeCounts(n=sum(child), l=len(child), child_leaves=child)


def _depth(item: TreeItem) -> int:
    if isinstance(item, Leaf):
        return 0
    return 1 + max(_depth(c) for c in item.children)


def _to_dict(item: TreeItem) -> dict:
    if isinstance(item, Leaf):
        return {"dim": item.dim}
    return {"p": item.p, "children": [_to_dict(c) for c in item.children]}


def _from_dict(data: dict) -> TreeItem:
    if not isinstance(data, dict):
        raise ValueError(f"tree node must be an object, got {type(data).__name__}")
    if "dim" in data:
        dim = data["dim"]
        if isinstance(dim, bool) or not isinstance(dim, int):
            raise ValueError("leaf 'dim' must be an integer")
        return Leaf(dim)
    if "p" not in data or "children" not in data:
        raise ValueError("inner node needs 'p' and 'children'")
    p = data["p"]
    if isinstance(p, bool) or not isinstance(p, (int, float)):
        raise ValueError("'p' must be a number")
    return Node(float(p), tuple(_from_dict(c) for c in data["children"]))


# -- constructors ----------------------------------------------------------


def flat_tree(n: int, p: float) -> LpTree:
    """Single-level tree: the plain L^p norm over ``n`` leaves."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return LpTree(Node(float(p), tuple(Leaf(j) for j in range(n))))


def make_isa_tree(
    subspace_sizes: Sequence[int], p0: float, p_sub: Sequence[float]
) -> LpTree:
    """Depth-two tree whose ``k``-th subtree covers ``subspace_sizes[k]``
    consecutive latent dimensions with exponent ``p_sub[k]``."""
    sizes = list(subspace_sizes)
    p_sub = [float(p) for p in p_sub]
    if not sizes:
        raise ValueError("subspace_sizes must not be empty")
    if len(sizes) != len(p_sub):
        raise ValueError("subspace_sizes and p_sub must have the same length")
    if any(int(s) != s or s < 1 for s in sizes):
        raise ValueError("subspace sizes must be positive integers")
    if p0 <= 0 or any(p <= 0 for p in p_sub):
        raise ValueError("exponents must be positive")
    children = []
    start = 0
    for size, p in zip(sizes, p_sub):
        children.append(Node(p, tuple(Leaf(j) for j in range(start, start + int(size)))))
        start += int(size)
    return LpTree(Node(float(p0), tuple(children)))


def subspace_partition(tree: LpTree) -> list[list[int]]:
    """Leaf indices under each child of the root, in child order."""
    if not tree.is_isa():
        raise ValueError("not an ISA tree")
    return [[leaf.dim for leaf in child.children] for child in tree.root.children]


# -- evaluation ------------------------------------------------------------


def _as_batch(tree: LpTree, z) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    if z2.ndim != 2 or z2.shape[1] != tree.n:
        raise ValueError(f"expected last dimension {tree.n}, got shape {z.shape}")
    if not np.all(np.isfinite(z2)):
        raise ValueError("z contains non-finite values")
    return z2, single


def _norm(children: np.ndarray, p: float) -> np.ndarray:
    """Stabilised ``(sum_k c_k^p)^(1/p)`` along axis 0 for non-negative ``c``."""
    m = children.max(axis=0)
    safe = np.where(m > 0, m, 1.0)
    return m * np.sum((children / safe) ** p, axis=0) ** (1.0 / p)


def _eval(item: TreeItem, absz: np.ndarray) -> np.ndarray:
    if isinstance(item, Leaf):
        return absz[:, item.dim]
    return _norm(np.stack([_eval(c, absz) for c in item.children]), item.p)


def eval_f(tree: LpTree, z) -> np.ndarray | float:
    """Nested-norm value for a vector ``(n,)`` or a batch ``(B, n)``."""
    z2, single = _as_batch(tree, z)
    out = _eval(tree.root, np.abs(z2))
    return float(out[0]) if single else out


def pow_f_with_grads(
    tree: LpTree, z
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``f(z)^p0`` together with its gradients.

    Returns ``(g, dg_dz, dg_dp)`` for a batch ``z`` of shape ``(B, n)`` where
    ``dg_dp`` has one column per inner node (pre-order, root first).
    """
    z2, _ = _as_batch(tree, z)
    absz = np.abs(z2)
    B = z2.shape[0]
    index = {id(node): i for i, node in enumerate(tree.inner_nodes)}
    values: dict[int, np.ndarray] = {}

    def forward(item: TreeItem) -> np.ndarray:
        if isinstance(item, Leaf):
            return absz[:, item.dim]
        v = _norm(np.stack([forward(c) for c in item.children]), item.p)
        values[id(item)] = v
        return v

    v0 = forward(tree.root)
    p0 = tree.p0
    dz = np.zeros_like(z2)
    dp = np.zeros((B, len(index)))

    def child_value(item: TreeItem) -> np.ndarray:
        return absz[:, item.dim] if isinstance(item, Leaf) else values[id(item)]

    def backward(item: TreeItem, upstream: np.ndarray) -> None:
        # upstream = d g / d v_item
        if isinstance(item, Leaf):
            dz[:, item.dim] += upstream * np.sign(z2[:, item.dim])
            return
        v = values[id(item)]
        p = item.p
        safe_v = np.where(v > 0, v, 1.0)
        cs = [child_value(c) for c in item.children]
        ratio = [np.where(v > 0, c / safe_v, 0.0) for c in cs]
        # dv/dp = (v/p) * sum_k r_k^p log r_k with r_k = c_k / v
        acc = np.zeros(B)
        for r in ratio:
            w = r**p
            acc += np.where(r > 0, w * np.log(np.where(r > 0, r, 1.0)), 0.0)
        dp[:, index[id(item)]] += upstream * v / p * acc
        for c, r in zip(item.children, ratio):
            backward(c, upstream * np.where(r > 0, r ** (p - 1.0), 0.0))

    g = v0**p0
    dg_dv0 = p0 * np.where(v0 > 0, v0 ** (p0 - 1.0), 0.0)
    backward(tree.root, dg_dv0)
    # the root exponent appears in g = v0^p0 directly as well
    dp[:, 0] += np.where(v0 > 0, g * np.log(np.where(v0 > 0, v0, 1.0)), 0.0)
    return g, dz, dp
