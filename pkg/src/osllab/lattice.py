"""Tensor-product point lattices shared by every solver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def as_points(x, dim: int) -> np.ndarray:
    """Coerce scalars, 1-D arrays and (n, d) arrays into an (n, dim) float array.

    For ``dim == 1`` a flat array is read as a list of points; for ``dim > 1``
    a flat array of length ``dim`` is read as a single point.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dim == 1 else arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {np.shape(x)}")
    return arr


@dataclass(frozen=True, eq=False)
class Lattice:
    """Uniform tensor lattice given by one coordinate array per axis."""

    axes: tuple

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        for a in axes:
            if a.ndim != 1 or a.size < 2:
                raise ValueError("each lattice axis needs at least two nodes")
            steps = np.diff(a)
            if np.any(steps <= 0):
                raise ValueError("lattice axes must be strictly increasing")
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
                raise ValueError("lattice axes must be uniform")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def uniform(cls, low, high, n) -> "Lattice":
        low = np.atleast_1d(np.asarray(low, dtype=float))
        high = np.atleast_1d(np.asarray(high, dtype=float))
        n = np.broadcast_to(np.atleast_1d(n), low.shape)
        return cls(tuple(np.linspace(lo, hi, int(k)) for lo, hi, k in zip(low, high, n)))

    @classmethod
    def with_spacing(cls, low: float, high: float, spacing: float, dim: int = 1) -> "Lattice":
        n = int(round((high - low) / spacing)) + 1
        return cls.uniform([low] * dim, [high] * dim, [n] * dim)

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(a.size for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacings(self) -> np.ndarray:
        return np.array([a[1] - a[0] for a in self.axes])

    @property
    def spacing(self) -> float:
        return float(self.spacings.max())

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def low(self) -> np.ndarray:
        return np.array([a[0] for a in self.axes])

    @property
    def high(self) -> np.ndarray:
        return np.array([a[-1] for a in self.axes])

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.high - self.low))
