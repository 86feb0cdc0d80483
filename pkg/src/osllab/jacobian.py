"""Jacobians ``J_{t,s} = det grad phi_{t,s}`` of backward flows.

Two routes: centred differences of a sampled flow map (default, stencil
half-width ``2 * spacing``) and the variational equation
``dJ/dtau = -div b^eps(phi) J`` integrated alongside the trajectory, which
needs a differentiable (mollified) field.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np

from .field import VelocityField, mollify
from .flow import FlowMap, backward_flow, integrate_characteristics, write_table
from .lattice import Lattice

CLIP_MASS_LIMIT = 0.01


class JacobianError(RuntimeError):
    pass


@dataclass(eq=False)
class JacobianField:
    s: float
    t_grid: np.ndarray
    lattice: Lattice
    samples: np.ndarray  # (nt, n)
    sup_bound: np.ndarray  # (nt,)
    method: str
    clipped_count: int = 0
    clipped_mass: float = 0.0
    diagnostics: dict = dc_field(default_factory=dict)

    def at(self, t: float) -> np.ndarray:
        hits = np.flatnonzero(np.isclose(self.t_grid, t, rtol=0.0, atol=1e-12))
        if hits.size == 0:
            raise KeyError(f"time {t} not on the Jacobian grid")
        return self.samples[hits[0]]

    def integral(self, t: float, radius: Optional[float] = None) -> float:
        vals = self.at(t)
        if radius is not None:
            vals = np.where(np.linalg.norm(self.lattice.points, axis=1) <= radius, vals, 0.0)
        return float(np.sum(vals) * self.lattice.cell_volume)

    def max_excess(self) -> float:
        """Largest ``J - exp(d int c1)`` over all samples (should be <= 0)."""
        return float(np.max(self.samples - self.sup_bound[:, None]))

    def to_csv(self, path) -> None:
        d = self.lattice.dim
        pts = self.lattice.points
        rows = [np.column_stack([np.full(len(pts), t), pts, self.samples[k]])
                for k, t in enumerate(self.t_grid)]
        write_table(path, ["t"] + [f"x{i + 1}" for i in range(d)] + ["J"], np.concatenate(rows))


def _fd_determinant(values: np.ndarray, lattice: Lattice, offset: int) -> np.ndarray:
    """det of centred differences with stencil ``+-offset`` nodes (one-sided at edges)."""
    d = lattice.dim
    grid = values.reshape(lattice.shape + (d,))
    mat = np.empty(lattice.shape + (d, d))
    for j in range(d):
        n = lattice.shape[j]
        h = lattice.spacings[j]
        idx = np.arange(n)
        plus = np.minimum(idx + offset, n - 1)
        minus = np.maximum(idx - offset, 0)
        fwd = np.take(grid, plus, axis=j)
        bwd = np.take(grid, minus, axis=j)
        width = ((plus - minus) * h).reshape([-1 if a == j else 1 for a in range(d)] + [1])
        mat[..., :, j] = (fwd - bwd) / width
    return np.linalg.det(mat.reshape(-1, d, d)) if d > 1 else mat.reshape(-1)


def backward_jacobian(field: VelocityField, fmap: FlowMap, method: str = "fd",
                      offset: int = 2) -> JacobianField:
    """Jacobian of a backward flow map on its lattice.

    ``fd``: finite differences of ``fmap`` with stencil half-width
    ``offset * spacing``. ``variational``: integrates the Jacobian ODE on
    ``field`` (must carry a gradient, e.g. a mollified field) from the same
    lattice points and times. Negative values are clipped to zero; the run
    fails if the clipped mass exceeds 1% of ``int J``.
    """
    if fmap.direction != "backward":
        raise JacobianError("Jacobians are computed for backward maps")
    if fmap.lattice is None:
        raise JacobianError("flow map must live on a lattice")
    lattice = fmap.lattice
    if method == "fd":
        raw = np.stack([_fd_determinant(fmap.samples[k], lattice, offset) for k in range(len(fmap.t_grid))])
    elif method == "variational":
        if not field.has_gradient and field._divergence is None:
            raise JacobianError(f"field {field.name!r} is not differentiable; mollify it first")
        if field.smoothness != "smooth":
            raise JacobianError("variational Jacobian needs a smooth (mollified) field")
        _, js = integrate_characteristics(field, fmap.s, fmap.t_grid, lattice.points, fmap.dt,
                                          with_jacobian=True)
        raw = np.stack(js)
    else:
        raise JacobianError(f"unknown method {method!r}")
    negative = np.minimum(raw, 0.0)
    clipped_count = int(np.sum(raw < 0))
    clipped_mass = float(-negative.sum() * lattice.cell_volume)
    samples = np.maximum(raw, 0.0)
    total = float(samples.sum() * lattice.cell_volume)
    if total > 0 and clipped_mass > CLIP_MASS_LIMIT * total:
        raise JacobianError(f"clipped negative mass {clipped_mass:.3g} exceeds 1% of int J")
    bound = np.array([field.constants.compression_bound(t, fmap.s, field.dim) for t in fmap.t_grid])
    return JacobianField(fmap.s, np.asarray(fmap.t_grid), lattice, samples, bound, method,
                         clipped_count, clipped_mass)


def mollified_jacobian(field: VelocityField, eps: float, s: float, t: float, lattice: Lattice,
                       dt: Optional[float] = None, method: str = "fd") -> np.ndarray:
    """``J^eps_{t,s}`` on the lattice for the field mollified at radius ``eps``."""
    smooth = mollify(field, eps) if field.smoothness != "smooth" else field
    dt = eps / 4.0 if dt is None else dt
    fmap = backward_flow(smooth, s, [t], lattice, dt=dt, method="numeric")
    return backward_jacobian(smooth, fmap, method=method).samples[0]


@dataclass(frozen=True)
class ConvergenceTable:
    eps: tuple
    differences: tuple  # ||J^eps - J^{eps/2}|| (strong) or max pairing gap (weak)
    mode: str
    limit_error: Optional[float] = None

    @property
    def monotone(self) -> bool:
        return all(b <= a for a, b in zip(self.differences, self.differences[1:]))


def jacobian_convergence_study(field: VelocityField, eps_list: Sequence[float], s: float, t: float,
                               radius: float, spacing: Optional[float] = None, mode: str = "strong",
                               method: str = "fd") -> ConvergenceTable:
    """Cauchy study of ``J^eps`` over successive entries of ``eps_list``.

    ``strong`` (1-D only): ``L^1(B_R)`` distances between consecutive radii.
    ``weak``: largest gap of pairings with tensor bumps on three dyadic scales.
    When the field has a Jacobian oracle the ``L^1`` distance of the last
    entry to the exact Jacobian is recorded as ``limit_error``.
    """
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    if mode == "strong" and field.dim != 1:
        raise JacobianError("strong convergence is only asserted in one dimension")
    if mode not in ("strong", "weak"):
        raise JacobianError(f"unknown mode {mode!r}")
    spacing = min(eps_list) / 8.0 if spacing is None else spacing
    lattice = Lattice.with_spacing(-radius, radius, spacing, field.dim)
    vol = lattice.cell_volume
    fields = [mollified_jacobian(field, e, s, t, lattice, method=method) for e in eps_list]
    if mode == "strong":
        diffs = tuple(float(np.sum(np.abs(a - b)) * vol) for a, b in zip(fields, fields[1:]))
    else:
        tests = _dyadic_bumps(lattice, radius)
        pair = [tests @ j * vol for j in fields]
        diffs = tuple(float(np.max(np.abs(a - b))) for a, b in zip(pair, pair[1:]))
    limit = None
    if field.jacobian_oracle is not None:
        exact = field.jacobian_oracle(t, s, lattice.points)
        limit = float(np.sum(np.abs(fields[-1] - exact)) * vol)
    return ConvergenceTable(tuple(eps_list), diffs, mode, limit)


def _dyadic_bumps(lattice: Lattice, radius: float) -> np.ndarray:
    pts = lattice.points
    rows = []
    for level in range(3):
        width = radius / 2 ** level
        centers = np.arange(-radius + width, radius - width + 1e-12, width)
        mesh = np.meshgrid(*[centers] * lattice.dim, indexing="ij")
        for c in np.stack([m.ravel() for m in mesh], axis=1):
            z = (pts - c) / width
            rows.append(np.prod(np.clip(1 - z * z, 0, None) ** 3, axis=1))
    return np.array(rows)


def change_of_variables_error(field: VelocityField, jac: JacobianField, fmap: FlowMap, t: float,
                              g=None) -> float:
    """Relative error of ``int g(phi_{t,s}) J_{t,s} dx = int g dy`` for a bump ``g``."""
    if g is None:
        def g(y):
            z = np.sum(y * y, axis=1) / 0.25
            return np.where(z < 1, (1 - z) ** 3, 0.0)
    lhs = float(np.sum(g(fmap.at(t)) * jac.at(t)) * jac.lattice.cell_volume)
    fine = Lattice.with_spacing(-1.0, 1.0, 1e-3 if field.dim == 1 else 1e-2, field.dim)
    rhs = float(np.sum(g(fine.points)) * fine.cell_volume)
    return abs(lhs - rhs) / abs(rhs)
