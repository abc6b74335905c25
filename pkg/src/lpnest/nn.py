"""Dense MLPs with hand-written reverse mode, Adam and a small checkpoint format."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")
CHECKPOINT_MAGIC = b"NNC1"


class NumericalError(RuntimeError):
    """Raised when a forward or backward pass produces non-finite values."""


def _act(name: str, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    return a


def _act_grad(name: str, a: np.ndarray, h: np.ndarray, g: np.ndarray) -> np.ndarray:
    # a = pre-activation, h = activation output, g = dL/dh
    if name == "tanh":
        return g * (1.0 - h * h)
    if name == "relu":
        return g * (a > 0)
    return g


@dataclass
class Dense:
    W: np.ndarray  # (fan_in, fan_out); y = x @ W + b
    b: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ValueError("bias must match the weight's output dimension")


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)


class Mlp:
    def __init__(self, layers: Sequence[Dense]):
        if not layers:
            raise ValueError("an MLP needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].W.shape[0] != layers[i - 1].W.shape[1]:
                raise ValueError(f"layer {i} input does not match layer {i - 1} output")
        self.layers = list(layers)

    @classmethod
    def init(
        cls,
        sizes: Sequence[int],
        activations: Sequence[str],
        rng: np.random.Generator,
    ) -> "Mlp":
        """Uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        layers = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            bound = 1.0 / np.sqrt(fan_in)
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=fan_out)
            layers.append(Dense(W, b, act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def copy(self) -> "Mlp":
        return Mlp([Dense(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])

    def forward(self, x: np.ndarray, cache: ForwardCache | None = None) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        if h.ndim != 2 or h.shape[1] != self.input_dim:
            raise ValueError(f"expected input of shape (B, {self.input_dim}), got {h.shape}")
        for i, layer in enumerate(self.layers):
            a = h @ layer.W + layer.b
            out = _act(layer.activation, a)
            if not np.all(np.isfinite(out)):
                raise NumericalError(f"non-finite activations in layer {i}")
            if cache is not None:
                cache.inputs.append(h)
                cache.pre.append(a)
                cache.post.append(out)
            h = out
        return h

    def backward(
        self, cache: ForwardCache | None, output_grad: np.ndarray
    ) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients ``[dW0, db0, dW1, ...]`` and the gradient w.r.t. the input."""
        if cache is None or len(cache.inputs) != len(self.layers):
            raise ValueError("backward needs the cache filled by a forward pass")
        g = np.asarray(output_grad, dtype=float)
        grads: list[np.ndarray] = []
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            g = _act_grad(layer.activation, cache.pre[i], cache.post[i], g)
            grads += [g.sum(axis=0), cache.inputs[i].T @ g]
            g = g @ layer.W.T
        grads.reverse()  # -> [dW0, db0, ...]
        return grads, g


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """One Adam update (minimisation), modifies ``params`` and ``state`` in place."""
    if len(params) != len(grads):
        raise ValueError("params and grads must pair up")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient passed to adam_step")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- checkpoints -----------------------------------------------------------
# layout: magic "NNC1" | u32 header length | UTF-8 JSON header | float32 LE blob


def save_checkpoint(path, mlps: dict[str, Mlp], meta: dict | None = None) -> None:
    header = {"version": 1, "nets": {}, "meta": meta or {}}
    blobs = []
    # blobs follow the (sorted) header order
    for name in sorted(mlps):
        mlp = mlps[name]
        header["nets"][name] = [
            {"shape": list(l.W.shape), "activation": l.activation} for l in mlp.layers
        ]
        for arr in mlp.params():
            blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[dict[str, Mlp], dict]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("bad magic: not an NNC1 checkpoint")
    if len(data) < 8:
        raise ValueError("truncated checkpoint header")
    (hlen,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    if header.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    offset = 8 + hlen
    nets = {}
    for name, specs in header["nets"].items():
        layers = []
        for spec in specs:
            fan_in, fan_out = spec["shape"]
            arrays = []
            for count, shape in ((fan_in * fan_out, (fan_in, fan_out)), (fan_out, (fan_out,))):
                nbytes = 4 * count
                if offset + nbytes > len(data):
                    raise ValueError("truncated checkpoint payload")
                arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
                arrays.append(arr.reshape(shape).astype(float))
                offset += nbytes
            layers.append(Dense(arrays[0], arrays[1], spec["activation"]))
        nets[name] = Mlp(layers)
    return nets, header["meta"]
