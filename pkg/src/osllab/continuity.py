"""Conservative equations in both time directions.

Compressive: ``f_t = div(b f)`` with measure data, solved by pushing the
initial measure forward with ``phi_{0,t}``; signed mass may cancel where the
flow concentrates, which is what the renormalization probe exposes.
Expansive: ``f_t + div(b f) = 0`` with density data, solved pointwise by
``f(t, x) = f_0(phi_{0,t}(x)) J_{0,t}(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .field import VelocityField, mollify
from .flow import backward_flow, integrate_characteristics, integration_field, write_table
from .gridfunction import GridFunction, SpaceTimeBump, dyadic_family, lattice_norm, time_weights
from .jacobian import backward_jacobian
from .lattice import Lattice, as_points
from .measure import HybridMeasure, pair, push_forward_by

NONNEGATIVE_SLACK = 1e-8


class ContinuityError(RuntimeError):
    pass


@dataclass(eq=False)
class DensitySolution(GridFunction):
    """Density path ``f(t, x)`` on a lattice with its mass ledger."""

    masses: Optional[np.ndarray] = None

    def __post_init__(self):
        super().__post_init__()
        grid_mass = np.nansum(self.samples, axis=1) * self.lattice.cell_volume
        if self.masses is None:
            self.masses = grid_mass
        elif not np.allclose(self.masses, grid_mass, rtol=1e-9, atol=1e-12):
            raise ContinuityError("mass ledger disagrees with the grid integral")

    def mass_at(self, t: float) -> float:
        return float(self.masses[self.index(t)])

    def lp_ledger(self, ps: Sequence[float] = (1, 2, math.inf)) -> list:
        return [(float(t), *(self.norm(t, p) for p in ps)) for t in self.t_grid]

    def to_csv(self, path) -> None:
        pts = self.lattice.points
        d = self.lattice.dim
        rows = [np.column_stack([np.full(len(pts), t), pts, self.samples[k], np.full(len(pts), self.masses[k])])
                for k, t in enumerate(self.t_grid)]
        write_table(path, ["t"] + [f"x{i + 1}" for i in range(d)] + ["f", "mass_at_t"], np.concatenate(rows))


def _as_lattice(x_grid, dim: int) -> Lattice:
    if isinstance(x_grid, Lattice):
        return x_grid
    return Lattice((np.asarray(x_grid, dtype=float).reshape(-1),))


def _initial_values(f0, pts: np.ndarray, dim: int) -> np.ndarray:
    if isinstance(f0, HybridMeasure):
        if f0.has_atoms:
            raise ContinuityError("expansive data must be a density")
        return f0.density_at(pts)
    return np.asarray(f0(as_points(pts, dim)), dtype=float).reshape(-1)


# ---------------------------------------------------------------------------
# compressive regime: measure pushforward


@dataclass(eq=False)
class MeasurePath:
    """Measures ``f_t`` per time with pushforward reports and ledgers."""

    t_grid: np.ndarray
    measures: list
    reports: list
    field: VelocityField
    continuity_gaps: np.ndarray = dc_field(default_factory=lambda: np.zeros(0))

    def at(self, t: float) -> HybridMeasure:
        hits = np.flatnonzero(np.isclose(self.t_grid, t, rtol=0.0, atol=1e-12))
        if hits.size == 0:
            raise KeyError(f"time {t} not on the grid")
        return self.measures[int(hits[0])]

    @property
    def masses(self) -> np.ndarray:
        return np.array([m.total_mass for m in self.measures])

    @property
    def variations(self) -> np.ndarray:
        return np.array([m.total_variation for m in self.measures])

    def ledger(self) -> list:
        """``(t, signed mass, |f_t| mass, atom mass, cancelled mass)`` per time."""
        return [(float(t), m.total_mass, m.total_variation, m.atom_mass, r["cancelled_mass"])
                for t, m, r in zip(self.t_grid, self.measures, self.reports)]


def _pairing_tests(lattice: Optional[Lattice], dim: int, window=None) -> list:
    if window is None:
        if lattice is None:
            low, high = -2.0, 2.0
        else:
            low, high = float(lattice.low.min()), float(lattice.high.max())
    else:
        low, high = window
    out = []
    for level in range(3):
        width = 0.5 * (high - low) / 2 ** level
        for c in low + width * np.arange(1, 2 ** (level + 1)):
            out.append((float(c), float(width)))
    return out


def _bump_value(c: float, w: float):
    def g(x):
        z = (np.asarray(x, dtype=float) - c) / w
        return np.prod(np.where(np.abs(z) < 1, (1 - z * z) ** 3, 0.0), axis=1)
    return g


def solve_compressive_duality(field: VelocityField, f0: HybridMeasure, t_grid: Sequence[float],
                              target: Optional[Lattice] = None, method: str = "auto",
                              dt: float = 1e-3, n_particles: Optional[int] = None) -> MeasurePath:
    """Duality solution ``f_t = (phi_{0,t})_# f_0`` for each ``t``.

    ``method`` picks the map: ``oracle`` (closed-form flow), ``numeric``
    (characteristics through the support points), ``auto`` (oracle when
    attached). ``continuity_gaps`` holds, for consecutive times, the largest
    pairing difference against a fixed bump family.
    """
    t_grid = np.asarray(t_grid, dtype=float).reshape(-1)
    if np.any(t_grid < 0):
        raise ContinuityError("times must be nonnegative")
    if method == "auto":
        method = "oracle" if field.flow_oracle is not None else "numeric"
    if method not in ("oracle", "numeric"):
        raise ContinuityError(f"unknown method {method!r}")
    target = f0.lattice if target is None else target
    measures, reports = [], []
    for t in t_grid:
        if t == 0:
            mapping = lambda x: as_points(x, field.dim).copy()
        elif method == "oracle":
            mapping = lambda x, t=t: field.flow_oracle(0.0, float(t), as_points(x, field.dim))
        else:
            mapping = lambda x, t=t: backward_flow(field, float(t), [0.0], as_points(x, field.dim),
                                                   dt=dt, method="numeric").samples[0]
        m, rep = push_forward_by(f0, mapping, target, n_particles)
        measures.append(m)
        reports.append(rep)
    tests = [_bump_value(c, w) for c, w in _pairing_tests(target, field.dim)]
    pairs = np.array([[pair(m, g) for g in tests] for m in measures])
    gaps = np.max(np.abs(np.diff(pairs, axis=0)), axis=1) if len(measures) > 1 else np.zeros(0)
    return MeasurePath(t_grid, measures, reports, field, gaps)


@dataclass(frozen=True)
class RenormalizationRow:
    t: float
    variation_of_f: float  # TV(f_t) = mass of |f_t|
    mass_of_F: float  # mass of F_t, the solution with data |f_0|
    atom_mass_of_F: float
    pairing_gap: float  # largest |<|f_t|, g> - <F_t, g>| over the bump family

    @property
    def mismatch(self) -> float:
        return self.mass_of_F - self.variation_of_f


@dataclass
class RenormalizationReport:
    rows: list

    @property
    def max_mismatch(self) -> float:
        return max((r.mismatch for r in self.rows), default=0.0)

    @property
    def renormalizes(self) -> bool:
        """``|f_t|`` equals ``F_t`` (hence solves the equation) at every time."""
        return all(abs(r.mismatch) <= 1e-9 and r.pairing_gap <= 1e-9 for r in self.rows)


def renormalization_probe(field: VelocityField, f0: HybridMeasure, t_grid: Sequence[float],
                          target: Optional[Lattice] = None, method: str = "auto") -> RenormalizationReport:
    """Compare ``|f_t|`` with ``F_t``, the duality solution started from ``|f_0|``.

    Duality solutions are unique, so ``|f_t|`` solves the equation exactly
    when it coincides with ``F_t``; a positive mass mismatch is mass that
    cancelled inside a concentration point.
    """
    signed = solve_compressive_duality(field, f0, t_grid, target, method)
    unsigned = solve_compressive_duality(field, f0.absolute(), t_grid, target, method)
    tests = [_bump_value(c, w) for c, w in _pairing_tests(target or f0.lattice, field.dim)]
    rows = []
    for t, m, big in zip(signed.t_grid, signed.measures, unsigned.measures):
        absm = m.absolute()
        gap = max((abs(pair(absm, g) - pair(big, g)) for g in tests), default=0.0)
        rows.append(RenormalizationRow(float(t), m.total_variation, big.total_mass, big.atom_mass, float(gap)))
    return RenormalizationReport(rows)


@dataclass(frozen=True)
class WeakResidual:
    values: np.ndarray  # one pairing per test function
    scale: np.ndarray  # int int |f| (|d_t psi| + |b||grad psi|), for relative reading

    @property
    def max(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def _space_time_family(t_grid: np.ndarray, lattice: Optional[Lattice], dim: int, window=None) -> list:
    if window is None:
        low, high = (-2.0, 2.0) if lattice is None else (float(lattice.low.min()), float(lattice.high.max()))
    else:
        low, high = window
    return dyadic_family(float(t_grid[0]), float(t_grid[-1]), low, high, dim)


def weak_residual_compressive(path: MeasurePath, field: Optional[VelocityField] = None,
                              tests: Optional[Sequence[SpaceTimeBump]] = None) -> WeakResidual:
    """``int int (d_t psi - b . grad psi) df_t dt`` for each test bump.

    The product ``b f`` has no meaning when ``b`` jumps and ``f`` carries
    atoms, so that combination is refused.
    """
    field = path.field if field is None else field
    if field.smoothness == "discontinuous" and any(m.has_atoms for m in path.measures):
        raise ContinuityError("weak pairing undefined: discontinuous field against an atomic measure")
    lattice = next((m.lattice for m in path.measures if m.lattice is not None), None)
    tests = _space_time_family(path.t_grid, lattice, field.dim) if tests is None else list(tests)
    tw = time_weights(path.t_grid)
    values = np.zeros(len(tests))
    scale = np.zeros(len(tests))
    for t, w, m in zip(path.t_grid, tw, path.measures):
        if w == 0:
            continue
        pts, mass = [], []
        if m.has_atoms:
            pts.append(m.atoms_x)
            mass.append(m.atoms_w)
        if m.density is not None:
            nz = m.density != 0
            pts.append(m.lattice.points[nz])
            mass.append(m.density[nz] * m.lattice.cell_volume)
        if not pts:
            continue
        pts = np.concatenate(pts)
        mass = np.concatenate(mass)
        b = field(t, pts)
        for i, bump in enumerate(tests):
            _, dpsi, grad = bump.parts(float(t), pts)
            dot = np.sum(b * grad, axis=1)
            values[i] += w * float(np.sum(mass * (dpsi - dot)))
            scale[i] += w * float(np.sum(np.abs(mass) * (np.abs(dpsi) + np.abs(dot))))
    return WeakResidual(values, scale)


# ---------------------------------------------------------------------------
# expansive regime: the pointwise formula


def solve_good_expansive(field: VelocityField, f0, t_grid: Sequence[float], x_grid, dt: float = 1e-3,
                         method: str = "auto") -> DensitySolution:
    """``f(t, x) = f_0(phi_{0,t}(x)) J_{0,t}(x)`` on the lattice.

    ``oracle`` uses the closed-form flow and Jacobian; ``numeric`` integrates
    trajectories and the Jacobian ODE together on the integration field
    (mollified at ``4 dt`` unless already smooth).
    """
    lattice = _as_lattice(x_grid, field.dim)
    t_grid = np.asarray(t_grid, dtype=float).reshape(-1)
    if np.any(t_grid < 0):
        raise ContinuityError("times must be nonnegative")
    if method == "auto":
        method = "oracle" if field.flow_oracle is not None and field.jacobian_oracle is not None else "numeric"
    pts = lattice.points
    rows = []
    if method == "oracle":
        for t in t_grid:
            y = field.flow_oracle(0.0, float(t), pts)
            rows.append(_initial_values(f0, y, field.dim) * field.jacobian_oracle(0.0, float(t), pts))
    elif method == "numeric":
        moved = integration_field(field, dt)
        for t in t_grid:
            if t == 0:
                rows.append(_initial_values(f0, pts, field.dim))
                continue
            xs, js = integrate_characteristics(moved, float(t), [0.0], pts, dt, with_jacobian=True)
            rows.append(_initial_values(f0, xs[0], field.dim) * js[0])
    elif method == "fd":
        for t in t_grid:
            fmap = backward_flow(field, float(t), [0.0], lattice, dt=dt)
            jac = backward_jacobian(field, fmap).samples[0]
            rows.append(_initial_values(f0, fmap.samples[0], field.dim) * jac)
    else:
        raise ContinuityError(f"unknown method {method!r}")
    info = {"regime": "expansive", "field": field, "initial": f0, "dt": dt, "method": method}
    return DensitySolution(t_grid, lattice, np.stack(rows), info=info)


def weak_residual_expansive(f: GridFunction, field: VelocityField,
                            tests: Optional[Sequence[SpaceTimeBump]] = None, window=None) -> WeakResidual:
    """``int int f (d_t psi + b . grad psi) dx dt`` per bump (midpoint in x, trapezoid in t)."""
    lat = f.lattice
    tests = _space_time_family(f.t_grid, lat, field.dim, window) if tests is None else list(tests)
    tw = time_weights(f.t_grid)
    pts = lat.points
    values = np.zeros(len(tests))
    scale = np.zeros(len(tests))
    for k, t in enumerate(f.t_grid):
        if tw[k] == 0:
            continue
        vals = np.nan_to_num(f.samples[k]) * lat.cell_volume * tw[k]
        b = field(t, pts)
        for i, bump in enumerate(tests):
            _, dpsi, grad = bump.parts(float(t), pts)
            dot = np.sum(b * grad, axis=1)
            values[i] += float(np.sum(vals * (dpsi + dot)))
            scale[i] += float(np.sum(np.abs(vals) * (np.abs(dpsi) + np.abs(dot))))
    return WeakResidual(values, scale)


@dataclass(frozen=True)
class GoodVerdict:
    residual_f: float
    residual_abs: float
    tol: float

    @property
    def good(self) -> bool:
        return self.residual_f <= self.tol and self.residual_abs <= self.tol


def default_weak_tol(f: GridFunction) -> float:
    """Quadrature allowance for lattice pairings of densities with jumps: ``10 (h + dt)``."""
    dt = float(np.max(np.diff(f.t_grid))) if f.t_grid.size > 1 else 0.0
    return 10.0 * (f.lattice.spacing + dt)


def good_criterion_check(field: VelocityField, f: GridFunction, tol: Optional[float] = None,
                         tests: Optional[Sequence[SpaceTimeBump]] = None) -> GoodVerdict:
    """A density path is the good solution iff both ``f`` and ``|f|`` solve weakly."""
    tol = default_weak_tol(f) if tol is None else float(tol)
    r_f = weak_residual_expansive(f, field, tests).max
    r_abs = weak_residual_expansive(f.map(np.abs), field, tests).max
    return GoodVerdict(r_f, r_abs, tol)


def spurious_sgn_solution(t_grid: Sequence[float], lattice: Lattice, scale: float = 1.0,
                          start: float = 0.0) -> GridFunction:
    """``scale * sgn x * 1{|x| <= t - start}``: a nonzero solution for ``b = sgn x`` with zero data."""
    t_grid = np.asarray(t_grid, dtype=float)
    x = lattice.points[:, 0]
    rows = [scale * np.sign(x) * (np.abs(x) <= max(t - start, 0.0)) for t in t_grid]
    return GridFunction(t_grid, lattice, np.stack(rows).astype(float))


@dataclass(frozen=True)
class Candidate:
    scale: float
    start: float
    residual: float
    minimum: float
    distance: float  # sup distance to the formula solution

    def accepted(self, floor: float, tol: float) -> bool:
        return self.minimum >= floor and self.residual <= tol


@dataclass
class UniquenessReport:
    candidates: list
    tol: float
    floor: float
    formula_residual: float

    @property
    def accepted(self) -> list:
        return [c for c in self.candidates if c.accepted(self.floor, self.tol)]

    @property
    def unique(self) -> bool:
        """Every admissible nonnegative candidate coincides with the formula."""
        return all(c.distance <= self.tol for c in self.accepted)


def nonnegative_uniqueness_probe(field: VelocityField, f0, t_grid: Sequence[float], x_grid, seed: int,
                                 n_candidates: int = 8, tol: Optional[float] = None,
                                 method: str = "auto") -> UniquenessReport:
    """Perturb the formula solution and check that no nonnegative weak solution differs from it.

    For ``b = sgn x`` the perturbations are the zero-data solutions
    ``lambda sgn x 1{|x| <= t - t0}`` with seeded ``lambda`` and ``t0``; they
    keep the weak residual small but change sign. For other fields a seeded
    space-time bump is used, which breaks the equation instead.
    """
    good = solve_good_expansive(field, f0, t_grid, x_grid, method=method)
    lattice = good.lattice
    tol = default_weak_tol(good) if tol is None else float(tol)
    sup0 = float(np.max(np.abs(_initial_values(f0, lattice.points, field.dim))))
    floor = -NONNEGATIVE_SLACK * sup0
    rng = np.random.default_rng(seed)
    t_grid = good.t_grid
    tests = _space_time_family(t_grid, lattice, field.dim)
    base = weak_residual_expansive(good, field, tests).max
    out = []
    for _ in range(n_candidates):
        lam = float(rng.uniform(0.1, 1.0) * max(sup0, 1.0) * rng.choice([-1.0, 1.0]))
        t0 = float(rng.uniform(t_grid[0], t_grid[0] + 0.5 * (t_grid[-1] - t_grid[0])))
        if field.name == "sgn" and field.dim == 1 and field.smoothness == "discontinuous":
            pert = spurious_sgn_solution(t_grid, lattice, lam, t0).samples
        else:
            tc = 0.5 * (t0 + t_grid[-1])
            xc = rng.uniform(lattice.low, lattice.high) * 0.5
            bump = SpaceTimeBump(tc, 0.5 * (t_grid[-1] - t0) + 1e-12, tuple(float(v) for v in xc),
                                 0.25 * float(np.min(lattice.high - lattice.low)))
            pert = np.stack([lam * bump.parts(float(t), lattice.points)[0] for t in t_grid])
        cand = GridFunction(t_grid, lattice, good.samples + pert)
        res = weak_residual_expansive(cand, field, tests).max
        mins = float(np.min(cand.samples))
        dist = float(np.max(np.abs(pert)))
        out.append(Candidate(lam, t0, res, mins, dist))
    return UniquenessReport(out, tol, floor, base)


def lp_bound_check(sol: DensitySolution, radius: float, ps: Sequence[float] = (1, 2, math.inf)) -> list:
    """``||f(t)||_{L^p(B_R)} <= exp(d (1 - 1/p) int_0^t c1) ||f_0||_{L^p(B_R')}``.

    ``R'`` is the growth radius of the backward flow; rows are
    ``(t, p, value, bound)``. The constant is at most ``exp((1 + d) int c1)``.
    """
    fld: VelocityField = sol.info["field"]
    d = fld.dim
    h = sol.lattice.spacing
    rows = []
    for t in sol.t_grid:
        grow = fld.constants.growth_radius(radius, 0.0, float(t))
        ic1 = fld.constants.c1.integral(0.0, float(t))
        fine = Lattice.with_spacing(-(grow + h), grow + h, h / 2.0, d)
        ball = np.linalg.norm(fine.points, axis=1) <= grow + h
        ref = _initial_values(sol.info["initial"], fine.points, d)
        for p in ps:
            expo = d * ic1 * (1.0 if math.isinf(p) else 1.0 - 1.0 / p)
            ref_norm = lattice_norm(ref, fine, p, ball)
            rows.append((float(t), float(p), sol.norm(float(t), p, radius),
                         math.exp(expo) * ref_norm * (1 + 1e-9) + 2 * h * float(np.max(np.abs(ref)))))
    return rows


def duality_identity(field: VelocityField, u_T: Callable, f0, s_grid: Sequence[float], T: float, x_grid,
                     dt: float = 1e-3) -> list:
    """``(s, int u(s) f(s), int u_T f(T))`` with ``u`` expansive transport and ``f`` the good density.

    Flagged transport points (no a.e. value) are left out of the pairing.
    """
    from .transport import solve_expansive

    lattice = _as_lattice(x_grid, field.dim)
    s_grid = np.asarray(s_grid, dtype=float)
    times = np.unique(np.concatenate([s_grid, [T]]))
    f = solve_good_expansive(field, f0, times, lattice, dt=dt)
    fT = f.at(T)
    reference = float(np.sum(np.asarray(u_T(lattice.points), dtype=float).reshape(-1) * fT) * lattice.cell_volume)
    u = solve_expansive(field, u_T, s_grid, lattice, T, dt=dt)
    rows = []
    for s in s_grid:
        vals = np.where(u.valid(float(s)), np.nan_to_num(u.at(float(s))), 0.0)
        rows.append((float(s), float(np.sum(vals * f.at(float(s))) * lattice.cell_volume), reference))
    return rows


def strong_stability_study(field: VelocityField, f0, t: float, eps_list: Sequence[float], radius: float,
                           p: float = 1.0, spacing: Optional[float] = None) -> list:
    """``L^p(B_R)`` distances between good solutions for successive mollification radii (1-D)."""
    if field.dim != 1:
        raise ContinuityError("strong stability is only asserted in one dimension")
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    spacing = min(eps_list) / 8.0 if spacing is None else spacing
    lattice = Lattice.with_spacing(-radius, radius, spacing)
    sols = [solve_good_expansive(mollify(field, e), f0, [t], lattice, dt=e / 4.0, method="numeric").samples[0]
            for e in eps_list]
    return [lattice_norm(a - b, lattice, p) for a, b in zip(sols, sols[1:])]
