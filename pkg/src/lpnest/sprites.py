"""Mini-dSprites: exhaustive factor grids of small antialiased shapes.

File layout (little-endian)::

    "MSPR" | u32 version=1 | u32 N | u32 H | u32 W | u32 F | F x u32 cardinality
    | N x F u16 factors (row-major) | N x H x W float32 images (row-major)
"""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"MSPR"
VERSION = 1
SHAPES = ("square", "ellipse")


class MsprError(ValueError):
    pass


@dataclass
class FactorDataset:
    images: np.ndarray  # (N, H, W) float32 in [0, 1]
    factors: np.ndarray  # (N, F) integer category ids
    factor_names: tuple[str, ...]
    factor_cardinalities: tuple[int, ...]

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.factors = np.asarray(self.factors, dtype=np.int64)
        if self.images.ndim != 3:
            raise ValueError("images must have shape (N, H, W)")
        if self.factors.shape != (len(self.images), len(self.factor_cardinalities)):
            raise ValueError("factors must have shape (N, F)")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("pixel values must lie in [0, 1]")

    @property
    def n(self) -> int:
        return len(self.images)

    @property
    def flat(self) -> np.ndarray:
        """Images as float64 rows of length ``H*W`` (encoder input)."""
        return self.images.reshape(self.n, -1).astype(float)


@dataclass
class SpritesConfig:
    """Rendering grid.

    ``scales`` are shape sizes in pixels (square side / ellipse major axis).
    Integer position counts are spread evenly so that the largest shape fits;
    explicit lists give sprite centres in pixel coordinates.
    """

    height: int = 16
    width: int = 16
    shapes: Sequence[str] = ("square",)
    scales: Sequence[float] = (5.0,)
    x_positions: int | Sequence[float] = 8
    y_positions: int | Sequence[float] = 8
    rotations: Sequence[float] = ()  # degrees; empty means no rotation factor
    ellipse_aspect: float = 0.6
    supersample: int = 8

    def __post_init__(self):
        for s in self.shapes:
            if s not in SHAPES:
                raise ValueError(f"unknown shape {s!r}; choose from {SHAPES}")
        if not self.shapes or not self.scales:
            raise ValueError("need at least one shape and one scale")
        if any(s <= 0 for s in self.scales):
            raise ValueError("scales must be positive")
        if self.height < 1 or self.width < 1 or self.supersample < 1:
            raise ValueError("height, width and supersample must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "SpritesConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown dataset config keys: {sorted(extra)}")
        return cls(**data)


MINI_SPRITES = dict(
    shapes=("square", "ellipse"), scales=(4.0, 5.5, 7.0), x_positions=8, y_positions=8
)


def _centres(spec, extent: int, max_half: float) -> np.ndarray:
    if isinstance(spec, (int, np.integer)):
        if spec < 1:
            raise ValueError("position counts must be >= 1")
        lo, hi = max_half, extent - max_half
        if hi < lo:
            raise ValueError("shape exceeds frame")
        return np.array([extent / 2.0]) if spec == 1 else np.linspace(lo, hi, spec)
    arr = np.asarray(spec, dtype=float)
    if arr.size < 1:
        raise ValueError("position lists must not be empty")
    return arr


def _half_extent(shape: str, size: float, rot: float, aspect: float) -> tuple[float, float]:
    """Half-width/height of the rotated shape's bounding box."""
    c, s = abs(math.cos(rot)), abs(math.sin(rot))
    if shape == "square":
        a = b = size / 2.0
        return a * c + b * s, a * s + b * c
    a, b = size / 2.0, aspect * size / 2.0
    return math.hypot(a * c, b * s), math.hypot(a * s, b * c)


def _render(shape: str, size: float, rot: float, cx: float, cy: float, cfg: SpritesConfig) -> np.ndarray:
    ss = cfg.supersample
    # sub-pixel sample centres
    ys = (np.arange(cfg.height * ss) + 0.5) / ss - cy
    xs = (np.arange(cfg.width * ss) + 0.5) / ss - cx
    X, Y = np.meshgrid(xs, ys)
    c, s = math.cos(rot), math.sin(rot)
    u = c * X + s * Y
    v = -s * X + c * Y
    if shape == "square":
        inside = (np.abs(u) <= size / 2.0) & (np.abs(v) <= size / 2.0)
    else:
        a, b = size / 2.0, cfg.ellipse_aspect * size / 2.0
        inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    cover = inside.reshape(cfg.height, ss, cfg.width, ss).mean(axis=(1, 3))
    return cover.astype(np.float32)


def generate(cfg: SpritesConfig | None = None) -> FactorDataset:
    cfg = cfg or SpritesConfig()
    rots = [math.radians(r) for r in cfg.rotations] or [0.0]
    half = [
        _half_extent(sh, sc, r, cfg.ellipse_aspect)
        for sh in cfg.shapes for sc in cfg.scales for r in rots
    ]
    max_hx = max(h[0] for h in half)
    max_hy = max(h[1] for h in half)
    xs = _centres(cfg.x_positions, cfg.width, max_hx)
    ys = _centres(cfg.y_positions, cfg.height, max_hy)
    eps = 1e-9
    if xs.min() - max_hx < -eps or xs.max() + max_hx > cfg.width + eps:
        raise ValueError("shape exceeds frame")
    if ys.min() - max_hy < -eps or ys.max() + max_hy > cfg.height + eps:
        raise ValueError("shape exceeds frame")

    axes: list[tuple[str, Sequence]] = [("shape", cfg.shapes), ("scale", cfg.scales)]
    if cfg.rotations:
        axes.append(("rotation", rots))
    axes += [("x", xs), ("y", ys)]
    names = tuple(a[0] for a in axes)
    cards = tuple(len(a[1]) for a in axes)

    images, factors = [], []
    for idx in itertools.product(*(range(c) for c in cards)):
        vals = {name: axis[i] for (name, axis), i in zip(axes, idx)}
        images.append(
            _render(vals["shape"], float(vals["scale"]), float(vals.get("rotation", 0.0)),
                    float(vals["x"]), float(vals["y"]), cfg)
        )
        factors.append(idx)
    return FactorDataset(
        np.stack(images), np.array(factors, dtype=np.int64), names, cards
    )


# -- file format -----------------------------------------------------------


def dumps(ds: FactorDataset) -> bytes:
    N, H, W = ds.images.shape
    F = len(ds.factor_cardinalities)
    if max(ds.factor_cardinalities, default=0) > 0xFFFF:
        raise ValueError("factor cardinalities must fit in u16")
    head = MAGIC + struct.pack("<5I", VERSION, N, H, W, F)
    head += struct.pack(f"<{F}I", *ds.factor_cardinalities)
    body = np.ascontiguousarray(ds.factors, dtype="<u2").tobytes()
    body += np.ascontiguousarray(ds.images, dtype="<f4").tobytes()
    return head + body


def loads(data: bytes, factor_names: Sequence[str] | None = None) -> FactorDataset:
    if len(data) < 4 or data[:4] != MAGIC:
        raise MsprError("bad magic")
    if len(data) < 24:
        raise MsprError("truncated payload")
    version, N, H, W, F = struct.unpack("<5I", data[4:24])
    if version != VERSION:
        raise MsprError(f"version mismatch: file has {version}, expected {VERSION}")
    off = 24
    need = off + 4 * F + 2 * N * F + 4 * N * H * W
    if len(data) < need:
        raise MsprError("truncated payload")
    if len(data) > need:
        raise MsprError("trailing bytes after payload")
    cards = struct.unpack(f"<{F}I", data[off : off + 4 * F])
    off += 4 * F
    factors = np.frombuffer(data, dtype="<u2", count=N * F, offset=off).reshape(N, F)
    off += 2 * N * F
    images = np.frombuffer(data, dtype="<f4", count=N * H * W, offset=off).reshape(N, H, W)
    names = tuple(factor_names) if factor_names else tuple(f"factor{i}" for i in range(F))
    return FactorDataset(images.copy(), factors.astype(np.int64), names, tuple(cards))


def save(path, ds: FactorDataset) -> None:
    Path(path).write_bytes(dumps(ds))


def load(path, factor_names: Sequence[str] | None = None) -> FactorDataset:
    return loads(Path(path).read_bytes(), factor_names)
