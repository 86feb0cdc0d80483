"""Space-time sample arrays with per-slice norms, and the bump test family."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .lattice import Lattice, as_points


def lattice_norm(values: np.ndarray, lattice: Lattice, p: float, mask: Optional[np.ndarray] = None) -> float:
    v = np.abs(np.nan_to_num(values))
    if mask is not None:
        v = np.where(mask, v, 0.0)
    if math.isinf(p):
        return float(v.max()) if v.size else 0.0
    return float((np.sum(v ** p) * lattice.cell_volume) ** (1.0 / p))


def total_variation(values: np.ndarray, lattice: Lattice, mask: Optional[np.ndarray] = None) -> float:
    """Lattice total variation: sum of |jumps| weighted by the transverse cell area."""
    grid = np.nan_to_num(values).reshape(lattice.shape)
    keep = None if mask is None else mask.reshape(lattice.shape)
    tv = 0.0
    for a in range(lattice.dim):
        jumps = np.abs(np.diff(grid, axis=a))
        if keep is not None:
            both = np.take(keep, range(1, grid.shape[a]), axis=a) & np.take(keep, range(grid.shape[a] - 1), axis=a)
            jumps = np.where(both, jumps, 0.0)
        tv += float(jumps.sum()) * lattice.cell_volume / lattice.spacings[a]
    return tv


def lipschitz_seminorm(values: np.ndarray, lattice: Lattice) -> float:
    grid = np.nan_to_num(values).reshape(lattice.shape)
    return max(float(np.max(np.abs(np.diff(grid, axis=a)))) / lattice.spacings[a] for a in range(lattice.dim))


@dataclass(eq=False)
class GridFunction:
    """Samples ``u(t, x)`` for every time in ``t_grid`` on a lattice.

    ``flags`` marks points with no a.e. value (NaN samples); ``ci`` holds Monte
    Carlo half-widths when the samples are ensemble means. ``info`` records how
    the samples were produced so derived solves can be repeated.
    """

    t_grid: np.ndarray
    lattice: Lattice
    samples: np.ndarray
    flags: Optional[np.ndarray] = None
    ci: Optional[np.ndarray] = None
    info: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float).reshape(-1)
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.shape[:2] != (self.t_grid.size, self.lattice.size):
            raise ValueError("samples must have shape (len(t_grid), lattice.size)")
        if self.flags is None:
            self.flags = np.zeros(self.samples.shape[:2], dtype=np.int8)

    def index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.t_grid, t, rtol=0.0, atol=1e-12))
        if hits.size == 0:
            raise KeyError(f"time {t} not on the grid")
        return int(hits[0])

    def at(self, t: float) -> np.ndarray:
        return self.samples[self.index(t)]

    def valid(self, t: float) -> np.ndarray:
        return self.flags[self.index(t)] == 0

    @property
    def flagged_fraction(self) -> float:
        return float(np.mean(self.flags != 0))

    def norm(self, t: float, p: float, radius: Optional[float] = None) -> float:
        mask = self.valid(t)
        if radius is not None:
            mask = mask & (np.linalg.norm(self.lattice.points, axis=1) <= radius + 1e-12)
        return lattice_norm(self.at(t), self.lattice, p, mask)

    def bv(self, t: float) -> float:
        return total_variation(self.at(t), self.lattice, self.valid(t))

    def lipschitz(self, t: float) -> float:
        return lipschitz_seminorm(self.at(t), self.lattice)

    def ledger(self) -> list:
        """Per-slice norms: ``(t, L1, L2, Linf, BV, Lip)``."""
        return [(float(t), self.norm(t, 1), self.norm(t, 2), self.norm(t, math.inf), self.bv(t), self.lipschitz(t))
                for t in self.t_grid]

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        with np.errstate(invalid="ignore"):
            out = np.asarray(fn(self.samples), dtype=float)
        out = np.where(self.flags != 0, np.nan, out)
        return GridFunction(self.t_grid, self.lattice, out, self.flags.copy(), None, dict(self.info))

    def to_csv(self, path) -> None:
        from .flow import write_table

        pts = self.lattice.points
        d = self.lattice.dim
        header = ["t"] + [f"x{i + 1}" for i in range(d)] + ["u"] + (["ci"] if self.ci is not None else [])
        rows = []
        for k, t in enumerate(self.t_grid):
            cols = [np.full(len(pts), t), pts, self.samples[k]]
            if self.ci is not None:
                cols.append(self.ci[k])
            rows.append(np.column_stack(cols))
        write_table(path, header, np.concatenate(rows))


def sample_terminal(u_T, points: np.ndarray, dim: int) -> np.ndarray:
    """Evaluate terminal data given as a callable or a single-slice 1-D GridFunction."""
    if isinstance(u_T, GridFunction):
        if u_T.lattice.dim != 1:
            raise ValueError("grid terminal data must be one-dimensional")
        ax = u_T.lattice.axes[0]
        x = as_points(points, 1)[:, 0]
        if np.any(x < ax[0] - 1e-12) or np.any(x > ax[-1] + 1e-12):
            raise ValueError("terminal data support exceeds the flow window")
        return np.interp(x, ax, u_T.samples[-1])
    return np.asarray(u_T(as_points(points, dim)), dtype=float).reshape(-1)


# ---------------------------------------------------------------------------
# tensor bump test functions


def bump1(z):
    """``(1 - z^2)^3`` on ``[-1, 1]``; sup 1."""
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) < 1, (1 - z * z) ** 3, 0.0)


def bump1_derivative(z):
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) < 1, -6 * z * (1 - z * z) ** 2, 0.0)


@dataclass(frozen=True)
class SpaceTimeBump:
    """``psi(t, x) = bump((t - tc)/tw) prod_i bump((x_i - xc_i)/xw)``."""

    tc: float
    tw: float
    xc: tuple
    xw: float

    def parts(self, t: float, pts: np.ndarray):
        """``(psi, d_t psi, grad_x psi)`` at time ``t``."""
        zt = (t - self.tc) / self.tw
        gt, dgt = float(bump1(zt)), float(bump1_derivative(zt)) / self.tw
        z = (pts - np.asarray(self.xc)) / self.xw
        g = bump1(z)
        dg = bump1_derivative(z) / self.xw
        prod = np.prod(g, axis=1)
        grad = np.empty_like(pts)
        for i in range(pts.shape[1]):
            others = np.prod(np.delete(g, i, axis=1), axis=1) if pts.shape[1] > 1 else 1.0
            grad[:, i] = dg[:, i] * others
        return gt * prod, dgt * prod, gt * grad


def dyadic_family(t_low: float, t_high: float, x_low: float, x_high: float, dim: int = 1,
                  levels: int = 3) -> list:
    """Bumps on three dyadic scales per axis, supported inside the window."""
    out = []
    t_half = 0.5 * (t_high - t_low)
    x_half = 0.5 * (x_high - x_low)
    for lt in range(levels):
        tw = t_half / 2 ** lt
        tcs = t_low + tw * np.arange(1, 2 ** (lt + 1))
        for lx in range(levels):
            xw = x_half / 2 ** lx
            xcs = x_low + xw * np.arange(1, 2 ** (lx + 1))
            mesh = np.meshgrid(*[xcs] * dim, indexing="ij")
            centers = np.stack([m.ravel() for m in mesh], axis=1)
            for tc in tcs:
                for c in centers:
                    out.append(SpaceTimeBump(float(tc), float(tw), tuple(float(v) for v in c), float(xw)))
    return out


def time_weights(t_grid: np.ndarray) -> np.ndarray:
    """Trapezoid weights on a (possibly non-uniform) time grid."""
    t = np.asarray(t_grid, dtype=float)
    w = np.zeros_like(t)
    if t.size > 1:
        dt = np.diff(t)
        w[:-1] += 0.5 * dt
        w[1:] += 0.5 * dt
    return w
