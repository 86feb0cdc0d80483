"""Backward Filippov flows, their a.e. right inverses, and flow estimates.

Convention: ``phi_{t,s}(x)`` for ``t <= s`` is the position at time ``t`` of
the trajectory of ``dX/dr = b(r, X)`` that passes through ``x`` at time ``s``
(integrated from ``s`` down to ``t``). It is Lipschitz with constant
``exp(int_t^s c1)``. The forward flow ``phi_{t,s}`` for ``t >= s`` is the
a.e.-defined right inverse of ``x -> phi_{s,t}(x)``.

Numerical trajectories are computed on the mollified field ``b * rho_eps``
with ``eps = 4 dt`` using the explicit midpoint rule, and the runs at steps
``dt`` and ``dt/2`` are combined by Richardson extrapolation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .field import FieldError, VelocityField, mollify
from .lattice import Lattice, as_points

logger = logging.getLogger(__name__)

FLAG_OK = 0
FLAG_AMBIGUOUS = 1
FLAG_NOT_FOUND = 2

MOLLIFY_FACTOR = 4.0
AMBIGUITY_WIDTH = 10.0


class FlowError(RuntimeError):
    """Integration or inversion failure."""


class UnsupportedOperation(RuntimeError):
    """Request outside the theory the solvers implement."""


@dataclass(eq=False)
class FlowMap:
    """Sampled flow ``phi_{t,s}`` for the anchor time ``s`` and every time in ``t_grid``.

    ``samples[k]`` holds ``phi_{t_grid[k], s}`` at ``points`` with shape (n, d),
    ``flags[k]`` the per-point status (0 ok, 1 ambiguous preimage, 2 no preimage).
    """

    direction: str
    s: float
    t_grid: np.ndarray
    points: np.ndarray
    samples: np.ndarray
    flags: np.ndarray
    field: VelocityField
    lattice: Optional[Lattice] = None
    dt: float = 1e-3
    method: str = "numeric"
    diagnostics: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.samples.setflags(write=False)
        self.flags.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.t_grid, t, rtol=0.0, atol=1e-12))
        if hits.size == 0:
            raise KeyError(f"time {t} not on the flow map grid")
        return int(hits[0])

    def at(self, t: float) -> np.ndarray:
        return self.samples[self.index(t)]

    def flag_at(self, t: float) -> np.ndarray:
        return self.flags[self.index(t)]

    def interpolate(self, t: float, x) -> np.ndarray:
        """Evaluate the slice at time ``t`` off-lattice (linear, 1-D lattices only)."""
        if self.lattice is None or self.dim != 1:
            raise FlowError("interpolation needs a 1-D lattice")
        x = as_points(x, 1)[:, 0]
        ax = self.lattice.axes[0]
        if np.any(x < ax[0] - 1e-12) or np.any(x > ax[-1] + 1e-12):
            raise FlowError("points outside the flow map window")
        vals = self.at(t)[:, 0]
        return np.interp(x, ax, vals).reshape(-1, 1)

    def to_csv(self, path) -> None:
        d = self.dim
        header = ["t"] + [f"x{i + 1}" for i in range(d)] + [f"phi{i + 1}" for i in range(d)] + ["flag"]
        rows = []
        for k, t in enumerate(self.t_grid):
            rows.append(np.column_stack([np.full(len(self.points), t), self.points,
                                         self.samples[k], self.flags[k]]))
        table = np.concatenate(rows)
        write_table(path, header, table, int_columns=(len(header) - 1,))


def write_table(path, header: Sequence[str], table: np.ndarray, int_columns=()) -> None:
    """Write a numeric table as CSV with round-trip (repr) float formatting."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in table:
            cells = [str(int(v)) if j in int_columns else repr(float(v)) for j, v in enumerate(row)]
            fh.write(",".join(cells) + "\n")


def _points_and_lattice(x_grid, dim: int):
    if isinstance(x_grid, Lattice):
        return x_grid.points, x_grid
    pts = as_points(x_grid, dim)
    lattice = None
    if dim == 1 and pts.shape[0] >= 2:
        steps = np.diff(pts[:, 0])
        if np.all(steps > 0) and np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            lattice = Lattice((pts[:, 0],))
    return pts, lattice


def integration_field(field: VelocityField, dt: float) -> VelocityField:
    """The field the numerical integrator sees: mollified at ``4 dt`` unless smooth."""
    if field.smoothness == "smooth":
        return field
    return mollify(field, MOLLIFY_FACTOR * dt)


def _segments(taus: np.ndarray, h: float):
    """Uniform coarse sub-steps for each gap between consecutive targets."""
    counts, sizes = [], []
    prev = 0.0
    for tau in taus:
        gap = tau - prev
        n = max(1, int(math.ceil(gap / h - 1e-9))) if gap > 0 else 0
        counts.append(n)
        sizes.append(gap / n if n else 0.0)
        prev = tau
    return counts, sizes


def _run(field, s, taus, counts, sizes, x0, refine, with_jacobian, increments):
    """Midpoint rule in reversed time ``tau = s - t`` with ``refine`` sub-steps per coarse step."""
    x = x0.copy()
    jac = np.ones(x.shape[0]) if with_jacobian else None
    out_x, out_j = [], []
    tau = 0.0
    fine_index = 0

    def rhs(tau_, x_):
        return -field(s - tau_, x_)

    for n, size in zip(counts, sizes):
        h = size / refine
        for _ in range(n * refine):
            k1 = rhs(tau, x)
            xm = x + 0.5 * h * k1
            if with_jacobian:
                d1 = -field.divergence(s - tau, x)
                jm = jac + 0.5 * h * d1 * jac
                d2 = -field.divergence(s - tau - 0.5 * h, xm)
                jac = jac + h * d2 * jm
            x = x + h * rhs(tau + 0.5 * h, xm)
            if increments is not None:
                step = 2 // refine
                kick = increments[fine_index:fine_index + step].sum(axis=0) if step > 1 else increments[fine_index]
                if kick.shape[0] != x.shape[0]:
                    # one increment per group of consecutive points (a shared noise path)
                    kick = np.repeat(kick, x.shape[0] // kick.shape[0], axis=0)
                x = x + kick
                fine_index += step
            tau += h
            if not np.all(np.isfinite(x)):
                raise FlowError("non-finite state: step size too large for the field")
        out_x.append(x.copy())
        if with_jacobian:
            out_j.append(jac.copy())
    return out_x, out_j


def integrate_characteristics(field: VelocityField, s: float, t_targets: Sequence[float], points,
                              dt: float, with_jacobian: bool = False, increments=None,
                              richardson: bool = True):
    """Integrate trajectories through ``points`` at time ``s`` down to each target time.

    Returns ``(positions, jacobians)`` lists ordered like ``t_targets``. The
    Jacobian solves ``dJ/dtau = -div b J`` along the trajectory. Optional
    additive ``increments`` (shape ``(n_fine_steps, g, d)``, one per half-step)
    are added after each midpoint drift step; the coarse run uses pair sums so
    both Richardson runs see the same noise path. With ``g < n`` the points
    form ``g`` consecutive groups of equal size sharing one increment each.
    """
    if dt <= 0 or not math.isfinite(dt):
        raise FlowError("time step must be positive")
    pts = as_points(points, field.dim)
    t_targets = np.asarray(t_targets, dtype=float)
    if np.any(t_targets > s + 1e-12):
        raise FlowError("backward targets must not exceed the anchor time")
    order = np.argsort(-t_targets, kind="stable")
    taus = s - t_targets[order]
    counts, sizes = _segments(taus, dt)
    if increments is not None:
        need = 2 * sum(counts)
        if increments.shape[0] != need:
            raise FlowError(f"expected {need} noise increments, got {increments.shape[0]}")
        if pts.shape[0] % increments.shape[1]:
            raise FlowError("noise groups must divide the number of points")
    fine_x, fine_j = _run(field, s, taus, counts, sizes, pts, 2, with_jacobian, increments)
    if richardson:
        coarse_x, coarse_j = _run(field, s, taus, counts, sizes, pts, 1, with_jacobian, increments)
        fine_x = [(4.0 * f - c) / 3.0 for f, c in zip(fine_x, coarse_x)]
        if with_jacobian:
            fine_j = [(4.0 * f - c) / 3.0 for f, c in zip(fine_j, coarse_j)]
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    xs = [fine_x[i] for i in inverse]
    js = [fine_j[i] for i in inverse] if with_jacobian else None
    return xs, js


def step_count(s: float, t_targets: Sequence[float], dt: float) -> int:
    """Number of half-steps ``integrate_characteristics`` takes (noise increments needed)."""
    t_targets = np.asarray(t_targets, dtype=float)
    taus = np.sort(s - t_targets)
    counts, _ = _segments(taus, dt)
    return 2 * sum(counts)


def backward_flow(field: VelocityField, s: float, t_grid: Sequence[float], x_grid, dt: float = 1e-3,
                  method: str = "auto") -> FlowMap:
    """Backward flow ``phi_{t,s}`` on a lattice for each ``t`` in ``t_grid`` (``t <= s``).

    ``method``: ``oracle`` (closed form), ``numeric`` (mollified midpoint with
    Richardson), or ``auto`` (oracle when attached). For numeric runs with an
    oracle available the sup error is recorded as ``diagnostics['oracle_error']``.
    """
    t_grid = np.asarray(t_grid, dtype=float).reshape(-1)
    if np.any(t_grid > s + 1e-12) or np.any(t_grid < -1e-12):
        raise FlowError("backward flow needs 0 <= t <= s")
    pts, lattice = _points_and_lattice(x_grid, field.dim)
    if method == "auto":
        method = "oracle" if field.flow_oracle is not None else "numeric"
    diagnostics = {}
    if method == "oracle":
        if field.flow_oracle is None:
            raise FlowError(f"field {field.name!r} has no flow oracle")
        samples = np.stack([field.flow_oracle(t, s, pts) for t in t_grid])
    elif method == "numeric":
        xs, _ = integrate_characteristics(integration_field(field, dt), s, t_grid, pts, dt)
        samples = np.stack(xs)
        if field.flow_oracle is not None:
            exact = np.stack([field.flow_oracle(t, s, pts) for t in t_grid])
            diagnostics["oracle_error"] = float(np.max(np.abs(samples - exact)))
    else:
        raise FlowError(f"unknown method {method!r}")
    radius = np.linalg.norm(pts, axis=1)
    breach = 0
    for k, t in enumerate(t_grid):
        bound = (1.0 + radius) * math.exp(field.constants.c0.integral(t, s)) - 1.0
        breach += int(np.sum(np.linalg.norm(samples[k], axis=1) > bound + 1e-9))
    diagnostics["growth_breaches"] = breach
    if breach:
        logger.warning("growth bound breached at %d samples", breach)
    flags = np.zeros(samples.shape[:2], dtype=np.int8)
    return FlowMap("backward", float(s), t_grid, pts, samples, flags, field, lattice, dt, method, diagnostics)


def lipschitz_violations(fmap: FlowMap, n_pairs: int = 10_000, seed: int = 0,
                         slack: Optional[float] = None) -> dict:
    """Count lattice pairs breaking ``|phi(x) - phi(y)| <= exp(int c1) |x - y| + slack``."""
    if fmap.direction != "backward":
        raise FlowError("Lipschitz bound applies to backward maps")
    slack = 10.0 * fmap.dt if slack is None else slack
    rng = np.random.default_rng(seed)
    n = fmap.points.shape[0]
    i = rng.integers(0, n, n_pairs)
    j = rng.integers(0, n, n_pairs)
    count, worst = 0, -np.inf
    for k, t in enumerate(fmap.t_grid):
        lip = fmap.field.constants.lipschitz_bound(t, fmap.s)
        lhs = np.linalg.norm(fmap.samples[k][i] - fmap.samples[k][j], axis=1)
        rhs = lip * np.linalg.norm(fmap.points[i] - fmap.points[j], axis=1)
        excess = lhs - rhs
        count += int(np.sum(excess > slack))
        worst = max(worst, float(excess.max()))
    return {"pairs": n_pairs * len(fmap.t_grid), "violations": count, "max_excess": worst, "slack": slack}


def _invert_monotone(xs: np.ndarray, g: np.ndarray, y: np.ndarray, spacing: float, tol: float):
    """Left-continuous generalized inverse of a nondecreasing sampled map."""
    lo_val = np.full(y.shape, np.nan)
    flags = np.zeros(y.shape, dtype=np.int8)
    outside = (y < g[0] - tol) | (y > g[-1] + tol)
    flags[outside] = FLAG_NOT_FOUND

    def first_at_least(level):
        i = np.searchsorted(g, level, side="left")
        i = np.clip(i, 1, len(g) - 1)
        g0, g1 = g[i - 1], g[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(g1 > g0, (level - g0) / (g1 - g0), 1.0)
        return xs[i - 1] + np.clip(frac, 0.0, 1.0) * (xs[i] - xs[i - 1])

    def last_at_most(level):
        j = np.searchsorted(g, level, side="right") - 1
        j = np.clip(j, 0, len(g) - 2)
        g0, g1 = g[j], g[j + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(g1 > g0, (level - g0) / (g1 - g0), 0.0)
        return xs[j] + np.clip(frac, 0.0, 1.0) * (xs[j + 1] - xs[j])

    inside = ~outside
    yi = np.clip(y[inside], g[0], g[-1])
    lo_val[inside] = first_at_least(yi)
    width = last_at_most(yi + tol) - first_at_least(yi - tol)
    amb = width > AMBIGUITY_WIDTH * spacing
    f = flags[inside]
    f[amb] = FLAG_AMBIGUOUS
    flags[inside] = f
    return lo_val, flags


def forward_flow(field: VelocityField, s: float, t_grid: Sequence[float], y_grid, dt: float = 1e-3,
                 method: str = "auto", refine: int = 1, tol: Optional[float] = None) -> FlowMap:
    """Forward map ``phi_{t,s}`` (``t >= s``) as the a.e. preimage under ``phi_{s,t}``.

    In 1-D the backward map ``x -> phi_{s,t}(x)`` is sampled on a lattice that
    covers the growth-bound preimage window of ``y_grid`` and inverted by the
    left-continuous generalized inverse (ties resolved to the infimum).
    Points whose preimage interval is wider than ten lattice spacings are
    flagged ambiguous; points outside the sampled range are flagged and left NaN.
    In higher dimension a coarse scan plus damped fixed-point refinement is
    used (experimental).
    """
    t_grid = np.asarray(t_grid, dtype=float).reshape(-1)
    if np.any(t_grid < s - 1e-12):
        raise FlowError("forward flow needs t >= s")
    pts, lattice = _points_and_lattice(y_grid, field.dim)
    if field.dim == 1:
        samples, flags, diag = _forward_1d(field, s, t_grid, pts, lattice, dt, method, refine, tol)
    else:
        samples, flags, diag = _forward_nd(field, s, t_grid, pts, lattice, dt, method, tol)
    return FlowMap("forward", float(s), t_grid, pts, samples, flags, field, lattice, dt,
                   method, diag)


def _forward_1d(field, s, t_grid, pts, lattice, dt, method, refine, tol):
    y = pts[:, 0]
    if lattice is not None:
        spacing = lattice.spacing / refine
    else:
        spacing = (np.ptp(y) / max(len(y) - 1, 1) or dt) / refine
    tol = 1e-3 * spacing if tol is None else tol
    samples, flags = [], []
    monotone_fix = 0.0
    ymax = float(np.max(np.abs(y))) if y.size else 0.0
    for t in t_grid:
        if abs(t - s) < 1e-15:
            samples.append(pts.copy())
            flags.append(np.zeros(len(y), dtype=np.int8))
            continue
        radius = field.constants.growth_radius(ymax, s, t) + 2 * spacing
        n = int(math.ceil(2 * radius / spacing)) + 1
        xs = np.linspace(-radius, radius, n)
        g = backward_flow(field, t, [s], xs.reshape(-1, 1), dt=dt, method=method).samples[0][:, 0]
        mono = np.maximum.accumulate(g)
        monotone_fix = max(monotone_fix, float(np.max(mono - g)))
        val, fl = _invert_monotone(xs, mono, y, xs[1] - xs[0], tol)
        samples.append(val.reshape(-1, 1))
        flags.append(fl)
    diag = {"monotone_correction": monotone_fix, "inversion_spacing": spacing, "tol": tol}
    return np.stack(samples), np.stack(flags), diag


def _forward_nd(field, s, t_grid, pts, lattice, dt, method, tol, iterations: int = 60):
    spacing = lattice.spacing if lattice is not None else 0.05
    tol = 1e-6 if tol is None else tol
    samples, flags = [], []
    d = field.dim
    for t in t_grid:
        if abs(t - s) < 1e-15:
            samples.append(pts.copy())
            flags.append(np.zeros(len(pts), dtype=np.int8))
            continue

        def g(x):
            return backward_flow(field, t, [s], x, dt=dt, method=method).samples[0]

        radius = field.constants.growth_radius(float(np.max(np.linalg.norm(pts, axis=1))), s, t)
        n_axis = max(5, int(math.ceil(2 * radius / (2 * spacing))) + 1)
        coarse = Lattice.uniform([-radius] * d, [radius] * d, [n_axis] * d)
        cx = coarse.points
        cg = g(cx)
        dist = np.linalg.norm(cg[None, :, :] - pts[:, None, :], axis=2) if len(pts) * len(cx) < 4e7 else None
        if dist is None:
            raise FlowError("coarse preimage scan too large; reduce the lattice")
        best = np.argmin(dist, axis=1)
        near = dist <= dist[np.arange(len(pts)), best][:, None] + coarse.spacing
        spread = np.array([np.ptp(cx[row], axis=0).max() if row.any() else 0.0 for row in near])
        x = cx[best].copy()
        step = np.ones(len(pts))
        res = g(x) - pts
        for _ in range(iterations):
            trial = x - step[:, None] * res
            tres = g(trial) - pts
            better = np.linalg.norm(tres, axis=1) < np.linalg.norm(res, axis=1)
            x[better], res[better] = trial[better], tres[better]
            step[~better] *= 0.5
            if np.all(np.linalg.norm(res, axis=1) <= tol):
                break
        fl = np.zeros(len(pts), dtype=np.int8)
        fl[spread > AMBIGUITY_WIDTH * coarse.spacing] = FLAG_AMBIGUOUS
        fl[np.linalg.norm(res, axis=1) > max(tol, spacing)] = FLAG_NOT_FOUND
        x[fl == FLAG_NOT_FOUND] = np.nan
        samples.append(x)
        flags.append(fl)
    return np.stack(samples), np.stack(flags), {"experimental": True, "tol": tol}


def verify_integral_equation(fmap: FlowMap, skip_kinks: bool = False) -> float:
    """Max over never-flagged points of ``|phi_{t,s}(x) - x - int_s^t b(r, phi_{r,s}(x)) dr|``.

    The time integral is the trapezoid rule on the map's (uniform) time grid,
    which must start at the anchor ``s``. ``skip_kinks`` also leaves out
    lattice points within half a spacing of the field's kinks at time ``s``,
    the null set where forward trajectories branch.
    """
    if fmap.direction != "forward":
        raise FlowError("integral equation applies to forward maps")
    t = fmap.t_grid
    if abs(t[0] - fmap.s) > 1e-12:
        raise FlowError("time grid must start at the anchor")
    if len(t) > 2 and not np.allclose(np.diff(t), t[1] - t[0], rtol=1e-9, atol=1e-12):
        raise FlowError("time grid must be uniform")
    good = np.all(fmap.flags == FLAG_OK, axis=0)
    if skip_kinks and fmap.field.kinks is not None:
        half = 0.5 * (fmap.lattice.spacing if fmap.lattice is not None else 0.0) + 1e-12
        for a, ks in enumerate(fmap.field.kink_positions(fmap.s)):
            for k in ks:
                good &= np.abs(fmap.points[:, a] - k) > half
    if not np.any(good) or len(t) < 2:
        return 0.0
    vel = np.stack([fmap.field(tk, np.nan_to_num(fmap.samples[k][good])) for k, tk in enumerate(t)])
    dt = np.diff(t)
    integral = np.concatenate([np.zeros((1,) + vel.shape[1:]),
                               np.cumsum(0.5 * (vel[1:] + vel[:-1]) * dt[:, None, None], axis=0)])
    residual = fmap.samples[:, good] - fmap.points[good][None] - integral
    return float(np.max(np.abs(residual)))


def compose_check(fmap: FlowMap, r: float, s: float, t: float) -> float:
    """Semigroup defect.

    Backward (``fmap`` anchored at ``t``): sup over the lattice of
    ``|phi_{r,s}(phi_{s,t}(x)) - phi_{r,t}(x)|``.
    Forward (``fmap`` anchored at ``r``): lattice mean of
    ``|phi_{t,s}(phi_{s,r}(y)) - phi_{t,r}(y)|`` over unflagged points.
    """
    if not r <= s <= t:
        raise FlowError("need r <= s <= t")
    if r == s == t:
        return 0.0
    fld = fmap.field
    if fmap.direction == "backward":
        if abs(fmap.s - t) > 1e-12:
            raise FlowError("backward map must be anchored at t")
        mid = fmap.at(s)
        inner = backward_flow(fld, s, [r], mid, dt=fmap.dt, method=fmap.method).samples[0]
        return float(np.max(np.abs(inner - fmap.at(r))))
    if abs(fmap.s - r) > 1e-12:
        raise FlowError("forward map must be anchored at r")
    if fmap.lattice is None or fmap.dim != 1:
        raise FlowError("forward composition check needs a 1-D lattice")
    mid = fmap.at(s)
    full = fmap.at(t)
    ok = (fmap.flag_at(s) == FLAG_OK) & (fmap.flag_at(t) == FLAG_OK)
    ax = fmap.lattice.axes[0]
    ok &= (mid[:, 0] >= ax[0]) & (mid[:, 0] <= ax[-1])
    second = forward_flow(fld, s, [t], fmap.lattice, dt=fmap.dt, method=fmap.method)
    outer = np.interp(mid[ok, 0], ax, np.nan_to_num(second.samples[0][:, 0]))
    return float(np.mean(np.abs(outer - full[ok, 0]))) if np.any(ok) else 0.0


@dataclass(frozen=True)
class PreimageReport:
    boxes: tuple
    target_measure: float
    preimage_measure: float
    ratio: float
    bound: float


def _box_measure(boxes) -> float:
    # boxes are assumed disjoint
    return float(sum(np.prod(np.asarray(hi) - np.asarray(lo)) for lo, hi in boxes))


def preimage_volume(fmap: FlowMap, boxes, t: Optional[float] = None) -> PreimageReport:
    """Lebesgue measure of ``{x : phi_{t,s}(x) in A}`` by lattice cell counting.

    ``boxes`` is a list of ``(low, high)`` corner pairs (disjoint);  the ratio
    to ``|A|`` is compared with ``exp(d int_s^t c1)``.
    """
    if fmap.direction != "forward":
        raise FlowError("preimage volume uses a forward map")
    if fmap.lattice is None:
        raise FlowError("preimage counting needs a lattice")
    t = fmap.t_grid[-1] if t is None else t
    image = fmap.at(t)
    ok = fmap.flag_at(t) == FLAG_OK
    inside = np.zeros(len(image), dtype=bool)
    norm_boxes = []
    for lo, hi in boxes:
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        norm_boxes.append((tuple(lo), tuple(hi)))
        inside |= np.all((image >= lo) & (image < hi), axis=1)
    measure = float(np.sum(inside & ok)) * fmap.lattice.cell_volume
    target = _box_measure(norm_boxes)
    bound = fmap.field.constants.compression_bound(fmap.s, t, fmap.dim)
    return PreimageReport(tuple(norm_boxes), target, measure, measure / target if target > 0 else 0.0, bound)


def left_inverse(*args, **kwargs):
    """The forward flow is a right inverse only; composing the other way is refused."""
    raise UnsupportedOperation(
        "phi_{t,s} o phi_{s,t} is not the identity for backward flows that concentrate; "
        "left-inverse checks are not supported")
