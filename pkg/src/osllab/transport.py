"""Nonconservative transport in both time directions.

Compressive: ``-u_t + b . grad u = 0`` with terminal data, solved by
``u(t, x) = u_T(phi_{t,T}(x))`` (backward flow).  Expansive:
``u_t + b . grad u = 0``, solved by composing with the forward flow at
unflagged points.  Around the solvers sit the lattice viscosity test, the
commutator rate study, and the sup/inf-convolution characterisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .field import VelocityField, envelope
from .flow import FLAG_OK, backward_flow, forward_flow, write_table
from .gridfunction import (GridFunction, SpaceTimeBump, dyadic_family, lipschitz_seminorm, sample_terminal,
                           time_weights)
from .lattice import Lattice

FLAG_LIMIT = 0.05


class TransportError(RuntimeError):
    pass


def _as_lattice(x_grid, dim: int) -> Lattice:
    if isinstance(x_grid, Lattice):
        return x_grid
    x = np.asarray(x_grid, dtype=float).reshape(-1)
    return Lattice((x,)) if dim == 1 else Lattice.uniform(x.min(), x.max(), int(round(len(x) ** (1 / dim))))


def solve_compressive(field: VelocityField, u_T, t_grid: Sequence[float], x_grid, T: Optional[float] = None,
                      dt: float = 1e-3, method: str = "auto") -> GridFunction:
    """``u(t, x) = u_T(phi_{t,T}(x))`` on the lattice for each ``t`` in ``t_grid``."""
    lattice = _as_lattice(x_grid, field.dim)
    t_grid = np.asarray(t_grid, dtype=float)
    T = float(t_grid.max()) if T is None else float(T)
    fmap = backward_flow(field, T, t_grid, lattice, dt=dt, method=method)
    try:
        vals = np.stack([sample_terminal(u_T, fmap.samples[k], field.dim) for k in range(len(t_grid))])
    except ValueError as exc:
        raise TransportError(str(exc)) from exc
    info = {"regime": "compressive", "T": T, "dt": dt, "method": fmap.method, "field": field,
            "terminal": u_T, "flow_error": fmap.diagnostics.get("oracle_error")}
    return GridFunction(t_grid, lattice, vals, info=info)


def solve_expansive(field: VelocityField, u_T, t_grid: Sequence[float], x_grid, T: Optional[float] = None,
                    dt: float = 1e-3, method: str = "auto") -> GridFunction:
    """``u(t, x) = u_T(phi_{T,t}(x))`` with the a.e. forward flow; flagged points are NaN.

    Raises when more than 5% of the lattice is flagged.
    """
    lattice = _as_lattice(x_grid, field.dim)
    t_grid = np.asarray(t_grid, dtype=float)
    T = float(t_grid.max()) if T is None else float(T)
    vals, flags = [], []
    for t in t_grid:
        fmap = forward_flow(field, float(t), [T], lattice, dt=dt, method=method)
        ok = fmap.flags[0] == FLAG_OK
        v = np.full(lattice.size, np.nan)
        if np.any(ok):
            try:
                v[ok] = sample_terminal(u_T, fmap.samples[0][ok], field.dim)
            except ValueError as exc:
                raise TransportError(str(exc)) from exc
        vals.append(v)
        flags.append(fmap.flags[0].astype(np.int8))
    flags = np.stack(flags)
    frac = float(np.mean(flags != 0))
    if frac > FLAG_LIMIT:
        raise TransportError(f"{100 * frac:.1f}% of the lattice is flagged (limit 5%)")
    info = {"regime": "expansive", "T": T, "dt": dt, "method": method, "field": field, "terminal": u_T}
    return GridFunction(t_grid, lattice, np.stack(vals), flags, info=info)


def renormalize_expansive(u: GridFunction, betafn: Callable[[np.ndarray], np.ndarray]) -> tuple:
    """``(beta o u, defect)``; the defect is the sup distance to re-solving with ``beta o u_T``."""
    info = u.info
    if info.get("regime") != "expansive":
        raise TransportError("renormalization check needs an expansive solution")
    composed = u.map(betafn)
    u_T = info["terminal"]
    resolved = solve_expansive(info["field"], lambda p: betafn(sample_terminal(u_T, p, info["field"].dim)),
                               u.t_grid, u.lattice, info["T"], info["dt"], info["method"])
    ok = (u.flags == 0) & (resolved.flags == 0)
    diff = np.abs(composed.samples - resolved.samples)
    defect = float(np.max(np.where(ok, diff, 0.0))) if np.any(ok) else 0.0
    return composed, defect


# ---------------------------------------------------------------------------
# viscosity test on a space-time lattice


@dataclass
class ViscosityReport:
    supersolution: list
    subsolution: list
    checked_min: int
    checked_max: int

    @property
    def violations(self) -> int:
        return len(self.supersolution) + len(self.subsolution)

    def near(self, x: float, radius: float, kind: str = "super") -> list:
        rows = self.supersolution if kind == "super" else self.subsolution
        return [v for v in rows if abs(v["x"] - x) <= radius]


def _envelope_tables(field: VelocityField, t_grid, xs):
    """``upper/lower(b . p)`` for ``p = +-1`` at every lattice node (1-D)."""
    shape = (len(t_grid), len(xs))
    tabs = {key: np.empty(shape) for key in ("U+", "U-", "L+", "L-")}
    absb = np.empty(shape)
    for k, t in enumerate(t_grid):
        absb[k] = np.abs(field(t, xs.reshape(-1, 1))[:, 0])
        if field.smoothness != "discontinuous":
            b = field(t, xs.reshape(-1, 1))[:, 0]
            tabs["U+"][k] = tabs["L+"][k] = b
            tabs["U-"][k] = tabs["L-"][k] = -b
            continue
        for j, x in enumerate(xs):
            tabs["U+"][k, j] = envelope(field, t, [x], [1.0], "upper")
            tabs["U-"][k, j] = envelope(field, t, [x], [-1.0], "upper")
            tabs["L+"][k, j] = envelope(field, t, [x], [1.0], "lower")
            tabs["L-"][k, j] = envelope(field, t, [x], [-1.0], "lower")
    return tabs, absb


def viscosity_check(u: GridFunction, field: VelocityField, slopes_t: Optional[Sequence[float]] = None,
                    slopes_x: Optional[Sequence[float]] = None, curvatures: Optional[Sequence[float]] = None,
                    tol: Optional[float] = None) -> ViscosityReport:
    """Lattice viscosity test for ``-u_t + b . grad u = 0`` (1-D).

    Test functions ``psi = a t + g (x - y) + kappa/2 (x - y)^2`` are centred at
    each interior node ``(t, y)``. Where ``u - psi`` has a non-strict discrete
    minimum over the 3x3 space-time stencil the supersolution inequality
    ``-a + upper(b . psi_x) >= -tol`` is checked; at maxima the subsolution
    inequality ``-a + lower(b . psi_x) <= tol``. The tolerance adds local
    second differences and the stencil's slope resolution ``|b| |kappa| h/2``
    to ``10 (h + dt)`` so that smooth curvature is not reported as a violation.
    """
    if u.lattice.dim != 1:
        raise TransportError("viscosity check is implemented in one dimension")
    xs = u.lattice.axes[0]
    t = u.t_grid
    if len(t) < 3 or len(xs) < 3:
        raise TransportError("need at least three time and space nodes")
    h = xs[1] - xs[0]
    dts = np.diff(t)
    slopes_t = np.linspace(-2, 2, 9) if slopes_t is None else np.asarray(slopes_t, dtype=float)
    slopes_x = np.linspace(-2, 2, 9) if slopes_x is None else np.asarray(slopes_x, dtype=float)
    curvatures = (-1.0, 0.0, 1.0) if curvatures is None else tuple(curvatures)
    if any(abs(k) > 10.0 / h for k in curvatures):
        raise TransportError("test curvature must not exceed 10 / spacing")
    U = np.nan_to_num(u.samples)
    tabs, absb = _envelope_tables(field, t, xs)
    base_tol = 10.0 * (h + float(dts.max())) if tol is None else tol
    inner = (slice(1, -1), slice(1, -1))
    # spread of one-sided difference quotients: the slope ambiguity of the lattice
    curv_x = np.abs(U[:, 2:] - 2 * U[:, 1:-1] + U[:, :-2])[1:-1] / h
    curv_t = np.abs((U[2:] - U[1:-1])[:, 1:-1] / dts[1:, None] - (U[1:-1] - U[:-2])[:, 1:-1] / dts[:-1, None])
    local_tol = base_tol + absb[inner] * curv_x + curv_t
    valid = (u.flags == 0)
    ok_c = np.ones_like(local_tol, dtype=bool)
    for dk in (-1, 0, 1):
        for dj in (-1, 0, 1):
            ok_c &= valid[1 + dk:len(t) - 1 + dk, 1 + dj:len(xs) - 1 + dj]
    diffs = {}
    steps_t = {}
    for dk in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if dk == dj == 0:
                continue
            diffs[dk, dj] = U[1 + dk:len(t) - 1 + dk, 1 + dj:len(xs) - 1 + dj] - U[inner]
            steps_t[dk] = (t[1 + dk:len(t) - 1 + dk] - t[1:-1])[:, None]
    fp = 1e-12
    super_v, sub_v = [], []
    n_min = n_max = 0
    for a in slopes_t:
        for g in slopes_x:
            for kappa in curvatures:
                is_min = ok_c.copy()
                is_max = ok_c.copy()
                for (dk, dj), d in diffs.items():
                    psi = a * steps_t[dk] + g * dj * h + 0.5 * kappa * (dj * h) ** 2
                    is_min &= d >= psi - fp
                    is_max &= d <= psi + fp
                gp, gm = max(g, 0.0), max(-g, 0.0)
                # the stencil cannot resolve slopes closer than |kappa| h / 2
                tol_k = local_tol + absb[inner] * abs(kappa) * h / 2
                if np.any(is_min):
                    n_min += int(is_min.sum())
                    val = -a + gp * tabs["U+"][inner] + gm * tabs["U-"][inner]
                    bad = is_min & (val < -tol_k)
                    for k, j in zip(*np.nonzero(bad)):
                        super_v.append({"t": float(t[k + 1]), "x": float(xs[j + 1]), "a": float(a), "g": float(g),
                                        "kappa": float(kappa), "value": float(val[k, j]),
                                        "tol": float(tol_k[k, j])})
                if np.any(is_max):
                    n_max += int(is_max.sum())
                    val = -a + gp * tabs["L+"][inner] + gm * tabs["L-"][inner]
                    bad = is_max & (val > tol_k)
                    for k, j in zip(*np.nonzero(bad)):
                        sub_v.append({"t": float(t[k + 1]), "x": float(xs[j + 1]), "a": float(a), "g": float(g),
                                      "kappa": float(kappa), "value": float(val[k, j]),
                                      "tol": float(tol_k[k, j])})
    return ViscosityReport(super_v, sub_v, n_min, n_max)


def comparison_profile(u: GridFunction, v: GridFunction) -> np.ndarray:
    """``t -> max_x (u - v)`` over jointly unflagged nodes."""
    ok = (u.flags == 0) & (v.flags == 0)
    diff = np.where(ok, np.nan_to_num(u.samples) - np.nan_to_num(v.samples), -np.inf)
    return diff.max(axis=1)


def solve_viscous_compressive(field: VelocityField, u_T, eps: float, paths: int, seed: int,
                              t_grid: Sequence[float], x_grid, T: Optional[float] = None,
                              dt: float = 1e-2) -> GridFunction:
    """Monte Carlo ``u^eps(t, x) = E[u_T(Phi^eps_{t,T}(x))]`` with noise ``eps I``.

    ``ci`` holds the 95% half-widths. ``eps = 0`` reproduces the numeric
    :func:`solve_compressive` at the same ``dt``.
    """
    from .stochastic import NoiseSpec, solve_second_order_compressive

    if paths < 1:
        raise TransportError("need at least one path")
    noise = NoiseSpec(sigma=float(eps), seed=seed, paths=paths, dt=dt)
    return solve_second_order_compressive(field, noise, u_T, t_grid, x_grid, T)


# ---------------------------------------------------------------------------
# commutator rate


def _graded_rule(length: float, levels: int = 12, order: int = 12):
    """Gauss-Legendre on ``[0, length]`` panels graded geometrically toward 0."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = length * np.concatenate([[0.0], 0.5 ** np.arange(levels, -1, -1)])
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        nodes.append(lo + (hi - lo) * (x + 1) / 2)
        weights.append((hi - lo) * w / 2)
    return np.concatenate(nodes), np.concatenate(weights)


def commutator(alpha: float, beta: float, eps: float, x: np.ndarray) -> np.ndarray:
    """``M_eps[b, u](x) = int (b(x - eps z) - b(x)) u'(x - eps z) rho(z) dz``.

    Here ``b = sgn x |x|^alpha``, ``u = |x|^beta`` and ``rho`` is the unit-mass
    polynomial bump on ``[-1, 1]``. The ``|y|^{beta-1}`` singularity of ``u'``
    at ``z0 = x/eps`` is removed by the substitution ``z = z0 +- v^{1/beta}``.
    """
    from .field import bump

    x = np.atleast_1d(np.asarray(x, dtype=float))
    if beta == 0.0:
        return np.zeros_like(x)

    def b(y):
        return np.sign(y) * np.abs(y) ** alpha

    out = np.zeros_like(x)
    for i, xi in enumerate(x):
        z0 = xi / eps
        total = 0.0
        if abs(z0) >= 1:
            # singularity outside the kernel support: graded toward the end nearest z0
            v, wv = _graded_rule(2.0)
            z = np.sign(z0) * (1.0 - v)
            y = xi - eps * z
            du = beta * np.abs(y) ** (beta - 1.0) * np.sign(y)
            total = float(np.sum(wv * (b(y) - b(xi)) * du * bump(z)))
        else:
            for side in (1.0, -1.0):
                # z = z0 + side * w with w = v^{1/beta}; then u'(y) dz = eps^{beta-1} sgn(y) dv
                wmax = (1.0 - z0) if side > 0 else (z0 + 1.0)
                v, wv = _graded_rule(wmax ** beta)
                z = z0 + side * v ** (1.0 / beta)
                y = xi - eps * z
                du = np.sign(y) * eps ** (beta - 1.0)
                total += float(np.sum(wv * (b(y) - b(xi)) * du * bump(z)))
        out[i] = total
    return out


@dataclass(frozen=True)
class CommutatorFit:
    alpha: float
    beta: float
    eps: tuple
    norms: tuple
    slope: float
    theory: float


def commutator_rate(alpha: float, beta: float, eps_list: Sequence[float], window: float = 1.0,
                    points: int = 400) -> CommutatorFit:
    """Sup of ``|M_eps|`` over ``[-window, window]`` per ``eps`` and the log-log slope.

    The sup is taken on a lattice excluding the half-spacing neighbourhood of 0.
    """
    eps_list = tuple(sorted(float(e) for e in eps_list))
    norms = []
    for eps in eps_list:
        # resolve |x| <~ 2 eps finely, the rest coarsely
        near = np.linspace(-3 * eps, 3 * eps, 2 * points + 2)
        far = np.linspace(-window, window, points)
        xs = np.unique(np.concatenate([near[np.abs(near) <= window], far]))
        xs = xs[np.abs(xs) > 0.5 * (near[1] - near[0])]
        norms.append(float(np.max(np.abs(commutator(alpha, beta, eps, xs)))))
    norms = tuple(norms)
    if all(n == 0.0 for n in norms):
        slope = float("nan")
    else:
        slope = float(np.polyfit(np.log(eps_list), np.log(norms), 1)[0])
    return CommutatorFit(alpha, beta, eps_list, norms, slope, alpha + beta - 1.0)


# ---------------------------------------------------------------------------
# sup/inf-convolutions


@dataclass
class EnvelopePair:
    delta: float
    upper: GridFunction
    lower: GridFunction
    radius_upper: np.ndarray
    radius_lower: np.ndarray

    def lipschitz_report(self, source: GridFunction) -> list:
        """Per slice ``(Lip u^d, Lip u_d, bound)`` with ``bound = sqrt(2 osc / delta)``."""
        rows = []
        h = source.lattice.spacing
        for k, t in enumerate(source.t_grid):
            ok = source.flags[k] == 0
            vals = source.samples[k][ok]
            osc = float(vals.max() - vals.min()) if vals.size else 0.0
            bound = math.sqrt(2.0 * osc / self.delta) + 2.0 * h / math.sqrt(self.delta)
            rows.append((float(t), self.upper.lipschitz(t), self.lower.lipschitz(t), bound))
        return rows


def _offsets(lattice: Lattice, radius: float) -> list:
    reach = [int(math.ceil(radius / h)) for h in lattice.spacings]
    grids = np.meshgrid(*[np.arange(-r, r + 1) for r in reach], indexing="ij")
    offs = np.stack([g.ravel() for g in grids], axis=1)
    dist2 = np.sum((offs * lattice.spacings) ** 2, axis=1)
    keep = dist2 <= radius ** 2 + 1e-12
    return [(tuple(o), float(d)) for o, d in zip(offs[keep], dist2[keep])]


def _convolve_slices(values: np.ndarray, valid: np.ndarray, lattice: Lattice, delta: float, sign: float):
    """Row-wise ``sup_y u(y) - |x-y|^2/(2 delta)`` (sign +1) or ``inf_y u(y) + ...`` (sign -1)."""
    pick = np.maximum if sign > 0 else np.minimum
    empty = -np.inf if sign > 0 else np.inf
    nt = values.shape[0]
    shape = (nt,) + lattice.shape
    grid = np.where(valid, values, empty).reshape(shape)
    if not np.all(valid):
        # an isolated null point takes the semicontinuous envelope of its neighbours,
        # as the essential sup over any ball around it would
        filled = grid.copy()
        padded = np.pad(grid, [(0, 0)] + [(1, 1)] * lattice.dim, constant_values=empty)
        for a in range(lattice.dim):
            for step in (0, 2):
                view = [slice(None)] + [slice(1, -1)] * lattice.dim
                view[a + 1] = slice(step, step + lattice.shape[a])
                filled = pick(filled, padded[tuple(view)])
        grid = np.where(valid.reshape(shape), grid, filled)
    good = values[valid]
    osc = float(good.max() - good.min()) if good.size else 0.0
    radius = math.sqrt(2.0 * delta * osc) + lattice.spacing
    best = np.full(shape, empty)
    for off, d2 in _offsets(lattice, radius):
        src = [slice(None)] + [slice(max(0, o), n + min(0, o)) for o, n in zip(off, lattice.shape)]
        dst = [slice(None)] + [slice(max(0, -o), n - max(0, o)) for o, n in zip(off, lattice.shape)]
        cand = grid[tuple(src)] - sign * d2 / (2.0 * delta)
        best[tuple(dst)] = pick(best[tuple(dst)], cand)
    return best.reshape(nt, -1)


def envelopes(u: GridFunction, delta: float) -> EnvelopePair:
    """Lattice sup/inf-convolutions at scale ``delta`` (flagged nodes excluded).

    ``u^delta(x) = max_y u(y) - |x - y|^2 / (2 delta)``; the search radius is
    ``sqrt(2 delta osc u)``. Radii ``R^delta = 2 (u^{2 delta} - u^delta)^{1/2}
    delta^{1/2}`` (and the mirrored lower one) bound the maximiser distance.
    """
    if delta <= 0:
        raise TransportError("delta must be positive")
    vals = np.nan_to_num(u.samples)
    ok = u.flags == 0
    up = _convolve_slices(vals, ok, u.lattice, delta, 1.0)
    lo = _convolve_slices(vals, ok, u.lattice, delta, -1.0)
    up2 = _convolve_slices(vals, ok, u.lattice, 2 * delta, 1.0)
    lo2 = _convolve_slices(vals, ok, u.lattice, 2 * delta, -1.0)
    ru = 2.0 * np.sqrt(np.maximum(up2 - up, 0.0) * delta)
    rl = 2.0 * np.sqrt(np.maximum(lo - lo2, 0.0) * delta)
    info = dict(u.info, delta=delta)
    return EnvelopePair(delta, GridFunction(u.t_grid, u.lattice, up, info=dict(info, side="upper")),
                        GridFunction(u.t_grid, u.lattice, lo, info=dict(info, side="lower")), ru, rl)


@dataclass
class ResidualRow:
    delta: float
    upper_excess: float
    lower_excess: float
    r_norm: float
    worst_upper_lhs: float

    @property
    def residual(self) -> float:
        return max(self.upper_excess, self.lower_excess)


@dataclass
class ResidualTable:
    rows: list = dc_field(default_factory=list)

    @property
    def r_norms(self) -> list:
        return [r.r_norm for r in self.rows]

    @property
    def residuals(self) -> list:
        return [r.residual for r in self.rows]

    def to_csv(self, path) -> None:
        write_table(path, ["delta", "residual", "bound"],
                    np.array([[r.delta, r.residual, r.r_norm] for r in self.rows]).reshape(-1, 3))


def _drift_residual(env: GridFunction, field: VelocityField) -> np.ndarray:
    """Pointwise ``d_t w + b . grad w`` by centred differences (one-sided at edges)."""
    lat = env.lattice
    w = env.samples.reshape((len(env.t_grid),) + lat.shape)
    dt_w = np.gradient(w, env.t_grid, axis=0)
    out = dt_w.reshape(len(env.t_grid), -1).copy()
    pts = lat.points
    for k, t in enumerate(env.t_grid):
        b = field(t, pts)
        for a in range(lat.dim):
            g = np.gradient(w[k], lat.axes[a], axis=a).reshape(-1)
            out[k] += b[:, a] * g
    return out


def duality_residual(u: GridFunction, field: VelocityField, deltas: Sequence[float],
                     family: Optional[Sequence[SpaceTimeBump]] = None) -> ResidualTable:
    """Check ``d_t u^d + b.grad u^d <= r^d`` and ``d_t u_d + b.grad u_d >= -r_d`` weakly.

    ``r^d = 4 c1(t) (u^{2d} - u^d)`` and ``r_d = 4 c1(t) (u_d - u_{2d})``. Each
    row holds the largest excess of the pairing ``int int (residual) psi``
    over ``int int r psi`` across the bump family, and ``||r^d||_1 + ||r_d||_1``
    over the space-time window.
    """
    lat = u.lattice
    pts = lat.points
    if family is None:
        family = dyadic_family(u.t_grid[0], u.t_grid[-1], float(lat.low[0]), float(lat.high[0]), lat.dim)
    tw = time_weights(u.t_grid)
    c1 = np.array([field.constants.c1(t) for t in u.t_grid])
    psi = np.stack([np.stack([b.parts(t, pts)[0] for t in u.t_grid]) for b in family])  # (m, nt, n)
    weight = tw[:, None] * lat.cell_volume
    table = ResidualTable()
    cache = {}

    def env(d):
        key = round(float(d), 15)
        if key not in cache:
            cache[key] = envelopes(u, d)
        return cache[key]

    for delta in deltas:
        pair = env(delta)
        wider = env(2 * delta)
        r_up = 4.0 * c1[:, None] * np.maximum(wider.upper.samples - pair.upper.samples, 0.0)
        r_lo = 4.0 * c1[:, None] * np.maximum(pair.lower.samples - wider.lower.samples, 0.0)
        res_up = _drift_residual(pair.upper, field)
        res_lo = _drift_residual(pair.lower, field)
        lhs_up = np.einsum("mtn,tn->m", psi, res_up * weight)
        lhs_lo = np.einsum("mtn,tn->m", psi, -res_lo * weight)
        bnd_up = np.einsum("mtn,tn->m", psi, r_up * weight)
        bnd_lo = np.einsum("mtn,tn->m", psi, r_lo * weight)
        r_norm = float(np.sum((r_up + r_lo) * weight))
        table.rows.append(ResidualRow(float(delta), float(np.max(lhs_up - bnd_up)),
                                      float(np.max(lhs_lo - bnd_lo)), r_norm, float(np.max(lhs_up))))
    return table


# ---------------------------------------------------------------------------
# a priori bounds


def apriori_check(u: GridFunction, radius: float, ps: Sequence[float] = (1, 2, math.inf)) -> list:
    """Slice norms against the propagation bounds from the field constants.

    Expansive: ``||u(t)||_{L^p(B_R)} <= exp(d int c1 / p) ||u_T||_{L^p(B_R')}`` and
    ``BV(u(t), B_R) <= exp(d int c1) BV(u_T, B_R')`` with ``R'`` the growth
    radius. Compressive: ``L^inf`` and ``Lip(u(t)) <= exp(int c1) Lip(u_T)``.
    Rows are ``(t, name, value, bound)``.
    """
    info = u.info
    fld: VelocityField = info["field"]
    T = info["T"]
    d = fld.dim
    rows = []
    for t in u.t_grid:
        grow = fld.constants.growth_radius(radius, t, T)
        ic1 = fld.constants.c1.integral(t, T)
        h = u.lattice.spacing
        fine = Lattice.with_spacing(-(grow + h), grow + h, h / 2.0, d)
        ref = sample_terminal(info["terminal"], fine.points, d)
        ball = np.linalg.norm(fine.points, axis=1) <= grow + h
        for p in ps:
            val = u.norm(t, p, radius)
            if info["regime"] == "expansive":
                fac = math.exp(d * ic1 / p) if not math.isinf(p) else 1.0
            else:
                fac = 1.0 if math.isinf(p) else None
            if fac is None:
                continue
            ref_norm = float(np.max(np.abs(ref[ball]))) if math.isinf(p) else \
                float((np.sum(np.abs(ref[ball]) ** p) * fine.cell_volume) ** (1 / p))
            rows.append((float(t), f"L{p}", val, fac * ref_norm + 2 * h))
        if info["regime"] == "expansive" and d == 1:
            inside = np.abs(u.lattice.points[:, 0]) <= radius
            vals = u.at(t)[inside & u.valid(t)]
            tv = float(np.sum(np.abs(np.diff(vals))))
            ref_tv = float(np.sum(np.abs(np.diff(ref[ball]))))
            rows.append((float(t), "BV", tv, math.exp(d * ic1) * ref_tv + 1e-9))
        if info["regime"] == "compressive":
            lip_T = lipschitz_seminorm(ref, fine)
            rows.append((float(t), "Lip", u.lipschitz(t), math.exp(ic1) * lip_T * (1 + 1e-6) + 1e-9))
    return rows
