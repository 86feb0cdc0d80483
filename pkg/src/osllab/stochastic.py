"""Stochastic flows and Monte Carlo solvers for the second-order equations.

The backward SDE runs in reversed time ``tau = s - t`` with drift ``-b``
(evaluated on the integration field) and noise ``sigma dW``. With noise
constant in space every lattice point of a path sees the same increment, so
the deterministic midpoint/Richardson engine is reused with shared kicks.
Space-dependent noise is stepped by plain Euler-Maruyama and is only
accepted for backward (compressive) problems.

Every path draws from its own counter-based stream keyed by ``(seed,
path id)``; results do not depend on chunking or thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .continuity import DensitySolution, _initial_values
from .field import MollifiedField, TabulatedField, VelocityField, shifted_field
from .flow import (FLAG_OK, FlowError, UnsupportedOperation, _segments, backward_flow, forward_flow,
                   integrate_characteristics, integration_field, verify_integral_equation, write_table)
from .gridfunction import GridFunction, sample_terminal, total_variation
from .lattice import Lattice, as_points

CHUNK_POINTS = 1 << 16
CI_FACTOR = 1.96


class StochasticError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    """Noise coefficient and Monte Carlo settings.

    ``sigma`` is a scalar (``sigma I``), a ``(d, m)`` matrix, a callable
    ``sigma(t) -> (d, m)``, or with ``space_dependent`` a callable
    ``sigma(t, points) -> (n, d, m)``. Space-dependent noise needs
    ``lipschitz`` (in ``x``, Frobenius) and ``growth`` with
    ``|sigma(t, x)|_F^2 <= growth^2 (1 + |x|^2)``.
    """

    sigma: Union[float, np.ndarray, Callable] = 0.0
    seed: int = 0
    paths: int = 1000
    dt: float = 1e-2
    space_dependent: bool = False
    antithetic: bool = False
    lipschitz: float = 0.0
    growth: float = 0.0
    columns: Optional[int] = None

    def __post_init__(self):
        if self.paths < 1:
            raise StochasticError("need at least one path")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise StochasticError("time step must be positive")
        if self.antithetic and self.paths % 2:
            raise StochasticError("antithetic sampling needs an even path count")
        if self.space_dependent and not callable(self.sigma):
            raise StochasticError("space-dependent noise must be a callable sigma(t, x)")

    def brownian_dim(self, dim: int) -> int:
        if self.columns is not None:
            return int(self.columns)
        if callable(self.sigma):
            if self.space_dependent:
                return int(np.asarray(self.sigma(0.0, np.zeros((1, dim)))).shape[-1])
            return int(np.atleast_2d(self.sigma(0.0)).shape[1])
        s = np.asarray(self.sigma, dtype=float)
        return dim if s.ndim == 0 else s.shape[1]

    def matrix(self, t: float, dim: int) -> np.ndarray:
        """``sigma(t)`` as a ``(d, m)`` matrix (constant-in-space noise only)."""
        if self.space_dependent:
            raise StochasticError("noise depends on space")
        if callable(self.sigma):
            mat = np.atleast_2d(np.asarray(self.sigma(float(t)), dtype=float))
        else:
            s = np.asarray(self.sigma, dtype=float)
            mat = s * np.eye(dim) if s.ndim == 0 else s
        if mat.shape[0] != dim:
            raise StochasticError(f"noise matrix has {mat.shape[0]} rows, field has dimension {dim}")
        return mat

    def frobenius2_integral(self, a: float, b: float, dim: int, n: int = 64) -> float:
        """``int_a^b |sigma|_F^2`` (midpoint rule; exact for constant noise)."""
        if b <= a:
            return 0.0
        if self.space_dependent:
            return self.growth ** 2 * (b - a)
        if not callable(self.sigma):
            return float(np.sum(self.matrix(a, dim) ** 2)) * (b - a)
        ts = a + (np.arange(n) + 0.5) * (b - a) / n
        return float(sum(np.sum(self.matrix(t, dim) ** 2) for t in ts)) * (b - a) / n

    @property
    def is_zero(self) -> bool:
        if callable(self.sigma):
            return False
        return not np.any(np.asarray(self.sigma, dtype=float))

    def streams(self) -> tuple:
        """``(stream ids, signs)`` per path; antithetic pairs share a stream."""
        ids = np.arange(self.paths)
        if not self.antithetic:
            return ids, np.ones(self.paths)
        return ids // 2, np.where(ids % 2 == 0, 1.0, -1.0)

    def describe(self) -> dict:
        sig = "callable" if callable(self.sigma) else np.asarray(self.sigma, dtype=float).tolist()
        return {"sigma": sig, "seed": self.seed, "paths": self.paths, "dt": self.dt,
                "space_dependent": self.space_dependent, "antithetic": self.antithetic}


def path_generator(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


class BrownianPath:
    """Standard ``m``-dimensional Brownian path on a grid of step ``dt / 2`` from time 0.

    Values between nodes are linear interpolants. The first ``k`` increments
    depend only on ``(seed, stream)``, so extending the horizon keeps them.
    """

    def __init__(self, seed: int, stream: int, m: int, horizon: float, dt: float, sign: float = 1.0):
        self.step = 0.5 * dt
        k = int(math.ceil(horizon / self.step - 1e-9)) + 1
        rng = path_generator(seed, stream)
        inc = rng.standard_normal((k, m)) * math.sqrt(self.step)
        self.nodes = np.arange(k + 1) * self.step
        self.values = sign * np.concatenate([np.zeros((1, m)), np.cumsum(inc, axis=0)])

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < -1e-12) or np.any(t > self.nodes[-1] + 1e-12):
            raise StochasticError("time outside the sampled Brownian path")
        return np.stack([np.interp(t, self.nodes, self.values[:, j]) for j in range(self.values.shape[1])], axis=1)


def fine_steps(s: float, t_targets: Sequence[float], dt: float) -> np.ndarray:
    """Physical ``(start, end)`` times of every half-step the integrator takes from ``s`` down."""
    t_targets = np.asarray(t_targets, dtype=float)
    taus = np.sort(s - t_targets)
    counts, sizes = _segments(taus, dt)
    out = []
    tau = 0.0
    for n, size in zip(counts, sizes):
        h = 0.5 * size
        for _ in range(2 * n):
            out.append((s - tau, s - tau - h))
            tau += h
    return np.array(out).reshape(-1, 2)


def path_drift(field: VelocityField, noise: NoiseSpec, pts: np.ndarray, span: float) -> VelocityField:
    """Integration field for Monte Carlo paths; autonomous 1-D mollified drifts are tabulated."""
    drift = integration_field(field, noise.dt)
    if not (isinstance(drift, MollifiedField) and drift.autonomous and field.dim == 1):
        return drift
    reach = field.constants.c0.integral(0.0, span) * (1.0 + float(np.max(np.abs(pts))))
    spread = 8.0 * math.sqrt(noise.frobenius2_integral(0.0, span, 1)) + 1.0
    return TabulatedField(drift, float(pts.min()) - reach - spread, float(pts.max()) + reach + spread,
                          drift.eps / 128.0)


def _chunks(n_paths: int, n_points: int):
    size = max(1, CHUNK_POINTS // max(n_points, 1))
    return [(a, min(a + size, n_paths)) for a in range(0, n_paths, size)]


def _map_chunks(fn, chunks, threads: int):
    if threads <= 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def _kicks(noise: NoiseSpec, dim: int, steps: np.ndarray, streams, signs, horizon: float) -> np.ndarray:
    """Additive increments ``sigma(t_mid) (W(start) - W(end))`` with shape ``(n_steps, paths, d)``."""
    m = noise.brownian_dim(dim)
    mats = np.stack([noise.matrix(t, dim) for t in steps.mean(axis=1)])
    dws = np.empty((len(steps), len(streams), m))
    for j, (sid, sign) in enumerate(zip(streams, signs)):
        w = BrownianPath(noise.seed, sid, m, horizon, noise.dt, sign)
        dws[:, j] = w(steps[:, 0]) - w(steps[:, 1])
    return np.einsum("sdm,spm->spd", mats, dws)


@dataclass(eq=False)
class PathEnsemble:
    """Per-path flow samples ``samples[p, k]`` at ``t_grid[k]`` for every point."""

    s: float
    t_grid: np.ndarray
    points: np.ndarray
    samples: np.ndarray  # (paths, nt, n, d)
    noise: NoiseSpec
    stream_ids: np.ndarray
    signs: np.ndarray
    direction: str = "backward"
    jacobians: Optional[np.ndarray] = None  # (paths, nt, n)
    flags: Optional[np.ndarray] = None  # (paths, nt, n)
    diagnostics: dict = dc_field(default_factory=dict)

    @property
    def paths(self) -> int:
        return self.samples.shape[0]

    def index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.t_grid, t, rtol=0.0, atol=1e-12))
        if hits.size == 0:
            raise KeyError(f"time {t} not on the ensemble grid")
        return int(hits[0])

    @property
    def deterministic(self) -> bool:
        return self.diagnostics.get("mode") == "deterministic"

    def mean(self) -> np.ndarray:
        if self.deterministic:
            return self.samples[0].copy()
        return np.mean(self.samples, axis=0)

    def ci(self) -> np.ndarray:
        if self.paths < 2 or self.deterministic:
            return np.zeros(self.samples.shape[1:])
        return CI_FACTOR * np.std(self.samples, axis=0, ddof=1) / math.sqrt(self.paths)

    def to_csv(self, path) -> None:
        d = self.points.shape[1]
        mean, ci = self.mean(), self.ci()
        heads = ["mean", "ci"] if d == 1 else [f"mean{i + 1}" for i in range(d)] + [f"ci{i + 1}" for i in range(d)]
        rows = [np.column_stack([np.full(len(self.points), t), self.points, mean[k], ci[k]])
                for k, t in enumerate(self.t_grid)]
        write_table(path, ["t"] + [f"x{i + 1}" for i in range(d)] + heads, np.concatenate(rows))


def _em_space_dependent(field: VelocityField, noise: NoiseSpec, s: float, t_targets: np.ndarray,
                        pts: np.ndarray, streams, signs, horizon: float) -> np.ndarray:
    """Plain Euler-Maruyama on the half-step grid; returns ``(paths, nt, n, d)``."""
    drift = path_drift(field, noise, pts, s)
    steps = fine_steps(s, t_targets, noise.dt)
    m = noise.brownian_dim(field.dim)
    dws = []
    for sid, sign in zip(streams, signs):
        w = BrownianPath(noise.seed, sid, m, horizon, noise.dt, sign)
        dws.append(w(steps[:, 0]) - w(steps[:, 1]))
    dws = np.stack(dws, axis=1)  # (steps, paths, m)
    n = len(pts)
    x = np.tile(pts, (len(streams), 1))
    out = np.empty((len(streams), len(t_targets), n, field.dim))
    ends = s - steps[:, 1]
    for i in np.flatnonzero(np.isclose(t_targets, s, rtol=0.0, atol=1e-12)):
        out[:, i] = x.reshape(len(streams), n, -1)
    for k, (start, end) in enumerate(steps):
        h = start - end
        sig = np.asarray(noise.sigma(float(start), x), dtype=float)
        kick = np.einsum("ndm,nm->nd", sig, np.repeat(dws[k], n, axis=0))
        x = x - h * drift(start, x) + kick
        if not np.all(np.isfinite(x)):
            raise StochasticError("moment blow-up: time step too large for the noise")
        for i in np.flatnonzero(np.isclose(s - t_targets, ends[k], rtol=0.0, atol=1e-9)):
            out[:, i] = x.reshape(len(streams), n, -1)
    return out


def backward_sde_flow(field: VelocityField, noise: NoiseSpec, s: float, t_grid: Sequence[float], x_grid,
                      threads: int = 1, with_jacobian: bool = False) -> PathEnsemble:
    """Paths of the backward stochastic flow ``Phi_{t,s}(x)`` for each ``t`` in ``t_grid``.

    ``sigma = 0`` reproduces the numeric deterministic backward flow at the
    same ``dt`` for every path.
    """
    t_grid = np.asarray(t_grid, dtype=float).reshape(-1)
    if np.any(t_grid > s + 1e-12) or np.any(t_grid < -1e-12):
        raise StochasticError("backward stochastic flow needs 0 <= t <= s")
    pts = x_grid.points if isinstance(x_grid, Lattice) else as_points(x_grid, field.dim)
    streams, signs = noise.streams()
    n = len(pts)
    if noise.is_zero and not noise.space_dependent:
        drift = integration_field(field, noise.dt)
        xs, js = integrate_characteristics(drift, s, t_grid, pts, noise.dt, with_jacobian=with_jacobian)
        one = np.stack(xs)
        samples = np.broadcast_to(one, (noise.paths,) + one.shape)
        jac = None if js is None else np.broadcast_to(np.stack(js), (noise.paths, len(t_grid), n))
        return PathEnsemble(float(s), t_grid, pts, samples, noise, streams, signs, jacobians=jac,
                            diagnostics={"mode": "deterministic"})
    if noise.space_dependent:
        if with_jacobian:
            raise UnsupportedOperation("Jacobians are only tracked for noise constant in space")
        samples = _em_space_dependent(field, noise, s, t_grid, pts, streams, signs, s)
        return PathEnsemble(float(s), t_grid, pts, samples, noise, streams, signs,
                            diagnostics={"mode": "euler-maruyama"})
    drift = path_drift(field, noise, pts, s)
    steps = fine_steps(s, t_grid, noise.dt)

    def work(chunk):
        a, b = chunk
        kicks = _kicks(noise, field.dim, steps, streams[a:b], signs[a:b], s)
        try:
            xs, js = integrate_characteristics(drift, s, t_grid, np.tile(pts, (b - a, 1)), noise.dt,
                                               with_jacobian=with_jacobian, increments=kicks)
        except FlowError as exc:
            raise StochasticError(f"moment blow-up: {exc}") from exc
        x = np.stack(xs).reshape(len(t_grid), b - a, n, field.dim).transpose(1, 0, 2, 3)
        j = None if js is None else np.stack(js).reshape(len(t_grid), b - a, n).transpose(1, 0, 2)
        return x, j

    parts = _map_chunks(work, _chunks(noise.paths, n), threads)
    samples = np.concatenate([p[0] for p in parts])
    jac = np.concatenate([p[1] for p in parts]) if with_jacobian else None
    return PathEnsemble(float(s), t_grid, pts, samples, noise, streams, signs, jacobians=jac,
                        diagnostics={"mode": "midpoint-richardson"})


# ---------------------------------------------------------------------------
# moment estimates


@dataclass(frozen=True)
class MomentRow:
    name: str
    value: float
    bound: float
    se: float
    rtol: float = 1e-6

    @property
    def passed(self) -> bool:
        return self.value <= self.bound * (1 + self.rtol) + 3.0 * self.se


def _worst(name, means, bounds, ses) -> MomentRow:
    i = int(np.argmax(means - bounds - 3.0 * ses))
    return MomentRow(name, float(means[i]), float(bounds[i]), float(ses[i]))


def moment_check(ens: PathEnsemble, field: VelocityField, n_pairs: int = 200, seed: int = 0) -> list:
    """Second moments of the backward stochastic flow against their a priori bounds.

    Rows (each the worst case over the points or pairs tested):

    * ``lipschitz``: ``E|Phi(x)-Phi(y)|^2 <= exp(int (2 c1 + L^2)) |x-y|^2``
      with ``L`` the Lipschitz constant of ``sigma`` (0 for constant noise);
    * ``bound``: ``E(1+|Phi(x)|^2) <= exp(int (3 c0 + G)) (1+|x|^2)`` with
      ``G = |sigma|_F^2`` (or ``growth^2`` for space-dependent noise);
    * ``time``: for consecutive times ``E|Phi_{t'}(x)-Phi_t(x)|^2 <=
      4 D^2 c0^2 B (1+|x|^2) + 2 int |sigma|_F^2`` with ``D = t - t'`` and
      ``B`` the bound above.

    Each passes when the sample mean is within three standard errors of the bound.
    """
    noise = ens.noise
    s = ens.s
    d = field.dim
    P = ens.paths
    c0, c1 = field.constants.c0, field.constants.c1
    pts = ens.points
    rng = np.random.default_rng(seed)
    rows = []

    def stats(v):
        return v.mean(axis=0), (v.std(axis=0, ddof=1) / math.sqrt(P) if P > 1 else np.zeros(v.shape[1:]))

    i = rng.integers(0, len(pts), n_pairs)
    j = rng.integers(0, len(pts), n_pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    dx2 = np.sum((pts[i] - pts[j]) ** 2, axis=1)
    lip_means, lip_bounds, lip_ses = [], [], []
    bnd_means, bnd_bounds, bnd_ses = [], [], []
    for k, t in enumerate(ens.t_grid):
        x = ens.samples[:, k]
        growth_rate = noise.lipschitz ** 2 if noise.space_dependent else 0.0
        fac = math.exp(2 * c1.integral(t, s) + growth_rate * (s - t))
        m, se = stats(np.sum((x[:, i] - x[:, j]) ** 2, axis=2))
        lip_means.append(m / dx2)
        lip_ses.append(se / dx2)
        lip_bounds.append(np.full(dx2.shape, fac))
        big = math.exp(3 * c0.integral(t, s) + noise.frobenius2_integral(t, s, d))
        m, se = stats(1.0 + np.sum(x ** 2, axis=2))
        base = 1.0 + np.sum(pts ** 2, axis=1)
        bnd_means.append(m / base)
        bnd_ses.append(se / base)
        bnd_bounds.append(np.full(base.shape, big))
    rows.append(_worst("lipschitz", np.concatenate(lip_means), np.concatenate(lip_bounds), np.concatenate(lip_ses)))
    rows.append(_worst("bound", np.concatenate(bnd_means), np.concatenate(bnd_bounds), np.concatenate(bnd_ses)))
    order = np.argsort(-ens.t_grid)
    tm, tb, ts = [], [], []
    base = 1.0 + np.sum(pts ** 2, axis=1)
    for a, b in zip(order, order[1:]):
        ta, tb_ = ens.t_grid[a], ens.t_grid[b]
        gap = ta - tb_
        big = math.exp(3 * c0.integral(tb_, s) + noise.frobenius2_integral(tb_, s, d))
        c0max = max(c0(t) for t in np.linspace(tb_, ta, 5, endpoint=False))
        bound = 4 * gap ** 2 * c0max ** 2 * big * base + 2 * noise.frobenius2_integral(tb_, ta, d)
        m, se = stats(np.sum((ens.samples[:, a] - ens.samples[:, b]) ** 2, axis=2))
        tm.append(m)
        tb.append(bound)
        ts.append(se)
    if tm:
        rows.append(_worst("time", np.concatenate(tm), np.concatenate(tb), np.concatenate(ts)))
    return rows


def semigroup_defect(field: VelocityField, noise: NoiseSpec, r: float, s: float, t: float, x_grid) -> float:
    """Pathwise ``sup |Phi_{r,s}(Phi_{s,t}(x)) - Phi_{r,t}(x)|`` with the noise shared."""
    if not r <= s <= t:
        raise StochasticError("need r <= s <= t")
    pts = x_grid.points if isinstance(x_grid, Lattice) else as_points(x_grid, field.dim)
    full = backward_sde_flow(field, noise, t, [s, r], pts)
    mid = full.samples[:, 0]
    direct = full.samples[:, 1]
    worst = 0.0
    streams, signs = noise.streams()
    drift = integration_field(field, noise.dt) if noise.is_zero else path_drift(field, noise, pts, t)
    steps = fine_steps(s, [r], noise.dt)
    for p in range(noise.paths):
        kicks = _kicks(noise, field.dim, steps, streams[p:p + 1], signs[p:p + 1], t)
        kicks = None if noise.is_zero else kicks
        xs, _ = integrate_characteristics(drift, s, [r], mid[p], noise.dt, increments=kicks)
        worst = max(worst, float(np.max(np.abs(xs[0] - direct[p]))))
    return worst


# ---------------------------------------------------------------------------
# small-noise limit


@dataclass(frozen=True)
class SmallNoiseTable:
    eps: tuple
    distances: tuple  # sup |E Phi^eps - phi| against the numeric deterministic flow
    oracle_distances: tuple  # same against the closed-form flow (NaN without oracle)
    ci: tuple  # largest CI half-width per eps

    @property
    def decreasing(self) -> bool:
        return all(b <= a for a, b in zip(self.distances, self.distances[1:]))


def small_noise_study(field: VelocityField, eps_list: Sequence[float], paths: int, seed: int,
                      s: float = 1.0, t: float = 0.0, x_grid=None, dt: float = 1e-2,
                      threads: int = 1) -> SmallNoiseTable:
    """Distance between the mean flow with noise ``eps I`` and the deterministic backward flow."""
    lattice = Lattice.with_spacing(-2.0, 2.0, 1.0 / 32, field.dim) if x_grid is None else x_grid
    pts = lattice.points if isinstance(lattice, Lattice) else as_points(lattice, field.dim)
    ref = backward_flow(field, s, [t], pts, dt=dt, method="numeric").samples[0]
    exact = field.flow_oracle(t, s, pts) if field.flow_oracle is not None else None
    dists, odists, cis = [], [], []
    for e in eps_list:
        noise = NoiseSpec(float(e), seed, paths, dt)
        ens = backward_sde_flow(field, noise, s, [t], pts, threads)
        mean = ens.mean()[0]
        dists.append(float(np.max(np.abs(mean - ref))))
        odists.append(float(np.max(np.abs(mean - exact))) if exact is not None else float("nan"))
        cis.append(float(np.max(ens.ci()[0])))
    return SmallNoiseTable(tuple(float(e) for e in eps_list), tuple(dists), tuple(odists), tuple(cis))


# ---------------------------------------------------------------------------
# second-order transport (compressive)


def solve_second_order_compressive(field: VelocityField, noise: NoiseSpec, u_T, t_grid: Sequence[float], x_grid,
                                   T: Optional[float] = None, threads: int = 1) -> GridFunction:
    """``u(t, x) = E[u_T(Phi_{t,T}(x))]`` with 95% half-widths in ``ci``.

    ``info`` carries the slice Lipschitz constants and the worst
    half-Hoelder quotient in time.
    """
    from .transport import _as_lattice

    lattice = _as_lattice(x_grid, field.dim)
    t_grid = np.asarray(t_grid, dtype=float).reshape(-1)
    T = float(t_grid.max()) if T is None else float(T)
    ens = backward_sde_flow(field, noise, T, t_grid, lattice, threads)
    n, d = lattice.size, field.dim
    try:
        vals = sample_terminal(u_T, ens.samples.reshape(-1, d), d).reshape(ens.paths, len(t_grid), n)
    except ValueError as exc:
        raise StochasticError(str(exc)) from exc
    mean = np.mean(vals, axis=0)
    ci = (CI_FACTOR * np.std(vals, axis=0, ddof=1) / math.sqrt(ens.paths)) if ens.paths > 1 else np.zeros_like(mean)
    info = {"regime": "compressive", "order": 2, "T": T, "dt": noise.dt, "field": field, "terminal": u_T,
            "noise": noise.describe(), "mode": ens.diagnostics["mode"]}
    u = GridFunction(t_grid, lattice, mean, ci=ci, info=info)
    u.info["lipschitz"] = [u.lipschitz(t) for t in t_grid]
    holder = 0.0
    order = np.argsort(t_grid)
    for a, b in zip(order, order[1:]):
        gap = t_grid[b] - t_grid[a]
        if gap > 0:
            holder = max(holder, float(np.max(np.abs(mean[b] - mean[a]))) / math.sqrt(gap))
    u.info["holder_half"] = holder
    return u


@dataclass(frozen=True)
class BVRow:
    t: float
    value: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.value <= self.bound


def bv_second_order_check(u: GridFunction, field: Optional[VelocityField] = None,
                          noise: Optional[NoiseSpec] = None) -> list:
    """Slice total variation against ``exp(d int_t^T c1) BV(u_T)``.

    One-dimensional compressive problems: every pathwise flow with noise shared
    across ``x`` is nondecreasing, so each composition has variation at most
    ``BV(u_T)`` and so has their mean. First-order expansive solutions are
    routed to the transport a priori check.
    """
    field = u.info["field"] if field is None else field
    if u.info.get("regime") == "expansive":
        from .transport import apriori_check

        radius = float(np.max(np.abs(u.lattice.high)))
        return [BVRow(t, v, b) for t, name, v, b in apriori_check(u, radius, ps=()) if name == "BV"]
    if field.dim != 1:
        raise UnsupportedOperation("the BV bound is checked in one dimension")
    if noise is not None and noise.space_dependent:
        raise UnsupportedOperation("the BV bound is checked for noise constant in space")
    T = u.info["T"]
    lat = u.lattice
    ext = float(np.max(np.abs(np.concatenate([lat.low, lat.high]))))
    grow = field.constants.growth_radius(ext, float(u.t_grid.min()), T) + 1.0
    fine = Lattice.with_spacing(-grow, grow, lat.spacing / 4.0)
    ref = total_variation(sample_terminal(u.info["terminal"], fine.points, 1), fine)
    return [BVRow(float(t), u.bv(float(t)), math.exp(field.constants.c1.integral(float(t), T)) * ref * (1 + 1e-9)
                  + 1e-12) for t in u.t_grid]


# ---------------------------------------------------------------------------
# constant noise: forward flow and Fokker-Planck


class _Shift:
    """``t -> M_t - M_s`` for one path, with its sup recorded as ``bound``."""

    def __init__(self, noise: NoiseSpec, dim: int, stream: int, sign: float, s: float, horizon: float):
        m = noise.brownian_dim(dim)
        self.w = BrownianPath(noise.seed, stream, m, horizon, noise.dt, sign)
        nodes = self.w.nodes
        mats = [noise.matrix(0.5 * (a + b), dim) for a, b in zip(nodes[:-1], nodes[1:])]
        dw = np.diff(self.w.values, axis=0)
        steps = np.stack([mat @ inc for mat, inc in zip(mats, dw)])
        self.nodes = nodes
        self.m = np.concatenate([np.zeros((1, dim)), np.cumsum(steps, axis=0)])
        self.base = self._at(s)
        window = (nodes >= s - 1e-12)
        self.bound = float(np.max(np.linalg.norm(self.m[window] - self.base, axis=1)))

    def _at(self, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.nodes, self.m[:, j]) for j in range(self.m.shape[1])])

    def __call__(self, t: float) -> np.ndarray:
        return self._at(float(t)) - self.base


def forward_flow_const_noise(field: VelocityField, noise: NoiseSpec, s: float, t_grid: Sequence[float], y_grid,
                             refine: int = 1) -> PathEnsemble:
    """Forward stochastic flow via the random ODE ``z' = b(t, z + M_t - M_s)``.

    Each path's shifted field goes through the deterministic forward-flow
    inversion; ``X = Z + M_t - M_s``. ``diagnostics['integral_residual']``
    holds the per-path integral-equation residuals of ``Z`` and
    ``flagged_fraction`` the share of flagged inversions.
    """
    if noise.space_dependent:
        raise UnsupportedOperation("forward stochastic flows need noise constant in space")
    t_grid = np.asarray(t_grid, dtype=float).reshape(-1)
    if np.any(t_grid < s - 1e-12):
        raise StochasticError("forward flow needs t >= s")
    streams, signs = noise.streams()
    horizon = float(t_grid.max())
    samples, flags, residuals = [], [], []
    pts = None
    for sid, sign in zip(streams, signs):
        if noise.is_zero:
            fmap = forward_flow(field, s, t_grid, y_grid, dt=noise.dt, method="numeric", refine=refine)
            shift = np.zeros((len(t_grid), 1, field.dim))
        else:
            m = _Shift(noise, field.dim, sid, sign, s, horizon)
            moved = shifted_field(field, m)
            fmap = forward_flow(moved, s, t_grid, y_grid, dt=noise.dt, method="numeric", refine=refine)
            shift = np.stack([m(t) for t in t_grid])[:, None, :]
        pts = fmap.points
        samples.append(fmap.samples + shift)
        flags.append(fmap.flags)
        try:
            residuals.append(verify_integral_equation(fmap, skip_kinks=True))
        except FlowError:
            residuals.append(float("nan"))
    flags = np.stack(flags)
    diag = {"integral_residual": residuals, "flagged_fraction": float(np.mean(flags != FLAG_OK))}
    return PathEnsemble(float(s), t_grid, pts, np.stack(samples), noise, streams, signs, "forward",
                        flags=flags, diagnostics=diag)


def solve_fokker_planck_const_noise(field: VelocityField, noise: NoiseSpec, f0, t_grid: Sequence[float], x_grid,
                                    threads: int = 1) -> DensitySolution:
    """``f(t, x) = E[f_0(Phi^(t)_{t,0}(x)) J^(t)_{t,0}(x)]`` with CI half-widths in ``ci``.

    Each time slice runs the reversed drifted flow from ``t`` together with
    its Jacobian ODE on the integration field; ``sigma = 0`` runs one
    deterministic path.
    """
    from .transport import _as_lattice

    if noise.space_dependent:
        raise UnsupportedOperation("Fokker-Planck solver needs noise constant in space")
    lattice = _as_lattice(x_grid, field.dim)
    t_grid = np.asarray(t_grid, dtype=float).reshape(-1)
    if np.any(t_grid < 0):
        raise StochasticError("times must be nonnegative")
    pts = lattice.points
    n, d = lattice.size, field.dim
    exact_drift = integration_field(field, noise.dt)
    drift = exact_drift if noise.is_zero else path_drift(field, noise, pts, float(t_grid.max()))
    streams, signs = noise.streams()
    means, cis = [], []
    for t in t_grid:
        if t == 0:
            means.append(_initial_values(f0, pts, d))
            cis.append(np.zeros(n))
            continue
        if noise.is_zero:
            xs, js = integrate_characteristics(exact_drift, float(t), [0.0], pts, noise.dt, with_jacobian=True)
            means.append(_initial_values(f0, xs[0], d) * js[0])
            cis.append(np.zeros(n))
            continue
        steps = fine_steps(float(t), [0.0], noise.dt)

        def work(chunk, t=t, steps=steps):
            a, b = chunk
            kicks = _kicks(noise, d, steps, streams[a:b], signs[a:b], float(t))
            xs, js = integrate_characteristics(drift, float(t), [0.0], np.tile(pts, (b - a, 1)), noise.dt,
                                               with_jacobian=True, increments=kicks)
            return (_initial_values(f0, xs[0], d) * js[0]).reshape(b - a, n)

        vals = np.concatenate(_map_chunks(work, _chunks(noise.paths, n), threads))
        means.append(np.mean(vals, axis=0))
        cis.append(CI_FACTOR * np.std(vals, axis=0, ddof=1) / math.sqrt(noise.paths) if noise.paths > 1
                   else np.zeros(n))
    info = {"regime": "expansive", "order": 2, "field": field, "initial": f0, "dt": noise.dt,
            "noise": noise.describe()}
    return DensitySolution(t_grid, lattice, np.stack(means), ci=np.stack(cis), info=info)


def fokker_planck_lp_check(sol: DensitySolution, ps: Sequence[float] = (1, 2)) -> list:
    """``||f(t)||_p <= exp(d (1 - 1/p) int_0^t c1) ||f_0||_p`` on the whole lattice, plus the CI norm.

    Rows ``(t, p, value, bound)``. The constant mirrors the first-order one
    because the Jacobian ODE is unchanged by additive noise.
    """
    fld: VelocityField = sol.info["field"]
    d = fld.dim
    rows = []
    ref = _initial_values(sol.info["initial"], sol.lattice.points, d)
    for k, t in enumerate(sol.t_grid):
        ic1 = fld.constants.c1.integral(0.0, float(t))
        for p in ps:
            f0n = float((np.sum(np.abs(ref) ** p) * sol.lattice.cell_volume) ** (1 / p))
            cin = float((np.sum(np.abs(sol.ci[k]) ** p) * sol.lattice.cell_volume) ** (1 / p)) if sol.ci is not None else 0.0
            rows.append((float(t), float(p), sol.norm(float(t), p),
                         math.exp(d * (1 - 1 / p) * ic1) * f0n * (1 + 1e-9) + 3 * cin))
    return rows
