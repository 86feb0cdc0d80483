"""Acceptance checks grouped into suites, with a deterministic text report.

Each check returns :class:`CheckResult` rows. A row passes when its value
meets the bound within the tolerance; ``tol_scale`` multiplies every
tolerance. Reports carry no timings so that repeated runs compare byte for
byte; the one wall-clock check reports only whether its budget held.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .continuity import (duality_identity, good_criterion_check, lp_bound_check, renormalization_probe,
                         solve_compressive_duality, solve_good_expansive, spurious_sgn_solution)
from .field import make_catalog_field
from .flow import backward_flow, forward_flow, lipschitz_violations, preimage_volume
from .gridfunction import GridFunction, dyadic_family
from .jacobian import backward_jacobian, jacobian_convergence_study
from .lattice import Lattice
from .measure import HybridMeasure, wasserstein
from .stochastic import (NoiseSpec, backward_sde_flow, moment_check, small_noise_study,
                         solve_fokker_planck_const_noise)
from .transport import commutator_rate, duality_residual, solve_compressive, solve_expansive, viscosity_check

CATALOG = (("sgn", ()), ("powerlaw", (0.5,)), ("linear", (-1.0,)), ("linear", (1.0,)), ("zero", ()))


@dataclass(frozen=True)
class CheckResult:
    """One measured quantity against its bound.

    ``relation`` is ``<=`` (value may exceed bound by ``tol``), ``>=``
    (value may fall short by ``tol``) or ``==`` (``|value - bound| <= tol``).
    """

    id: str
    name: str
    status: str
    value: float
    bound: float
    tol: float
    relation: str = "<="

    def line(self) -> str:
        return (f"{self.status} {self.id:<6} {self.name:<46} value={_num(self.value)} "
                f"{self.relation} bound={_num(self.bound)} tol={_num(self.tol)}")


def _num(v: float) -> str:
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return f"{v:.6e}"


def _compare(value: float, relation: str, bound: float, tol: float, scale: float) -> bool:
    if not math.isfinite(value):
        return False
    slack = tol * scale
    if relation == "<=":
        return value - bound <= slack
    if relation == ">=":
        return bound - value <= slack
    return abs(value - bound) <= slack


class _Collector:
    def __init__(self, crit: int, scale: float):
        self.crit = crit
        self.scale = scale
        self.rows = []

    def add(self, name: str, value, relation: str, bound, tol: float = 0.0) -> None:
        value, bound = float(value), float(bound)
        ok = _compare(value, relation, bound, float(tol), self.scale)
        tag = f"{self.crit:02d}.{chr(ord('a') + len(self.rows))}"
        self.rows.append(CheckResult(tag, name, "PASS" if ok else "FAIL", value, bound, float(tol), relation))


def _catalog(planar: bool = False) -> list:
    """Catalog fields in one dimension, plus the planar ``sgn`` field on request."""
    out = [(_label(n, p, 1), make_catalog_field(n, p)) for n, p in CATALOG]
    if planar:
        out.append((_label("sgn", (), 2), make_catalog_field("sgn", (), 2)))
    return out


def _label(name: str, params, dim: int) -> str:
    tag = name + (f"({','.join(f'{p:g}' for p in params)})" if params else "")
    return tag + (f" d={dim}" if dim > 1 else "")


def _catalog_grid(dim: int) -> tuple:
    """``(lattice, dt)``: planar mollified evaluations are costly, so d=2 runs coarser."""
    if dim == 1:
        return Lattice.with_spacing(-2.0, 2.0, 1e-2), 1e-3
    return Lattice.with_spacing(-2.0, 2.0, 0.2, dim), 1e-2


# ---------------------------------------------------------------------------
# flows


def check_flow_exactness(c: _Collector) -> None:
    sgn = make_catalog_field("sgn")
    lat = Lattice.with_spacing(-2.0, 2.0, 1e-2)
    dt = 1e-3
    start = time.perf_counter()
    fmap = backward_flow(sgn, 1.0, [0.0, 0.25, 0.5, 0.75], lat, dt=dt, method="numeric")
    elapsed = time.perf_counter() - start
    c.add("sgn backward flow sup error", fmap.diagnostics["oracle_error"], "<=", 0.0, 2 * dt)
    c.add("sgn backward flow within 5 s", float(elapsed < 5.0), "==", 1.0)


def check_lipschitz(c: _Collector) -> None:
    for label, f in _catalog(planar=True):
        lat, dt = _catalog_grid(f.dim)
        fmap = backward_flow(f, 1.0, [0.0], lat, dt=dt, method="numeric")
        rep = lipschitz_violations(fmap, n_pairs=10_000, seed=0)
        c.add(f"{label} Lipschitz violations", rep["violations"], "==", 0)


def check_preimage(c: _Collector) -> None:
    rng = np.random.default_rng(12)
    lat = Lattice.with_spacing(-3.0, 3.0, 1e-3)
    for name, params in (("sgn", ()), ("linear", (-1.0,)), ("linear", (1.0,))):
        f = make_catalog_field(name, params)
        fmap = forward_flow(f, 0.0, [0.5], lat, dt=1e-3)
        lo = rng.uniform(-2.0, 1.8, 50)
        hi = lo + rng.uniform(0.05, 0.2, 50)
        worst, bound = 0.0, 0.0
        for a, b in zip(lo, hi):
            rep = preimage_volume(fmap, [((a,), (b,))])
            worst, bound = max(worst, rep.ratio), rep.bound
        c.add(f"{_label(name, params, 1)} worst preimage ratio over 50 boxes", worst, "<=", bound, 0.05 * bound)


# ---------------------------------------------------------------------------
# jacobians


def check_jacobian_indicator(c: _Collector) -> None:
    sgn = make_catalog_field("sgn")
    h = 5e-3
    lat = Lattice.with_spacing(-2.0, 2.0, h)
    exact = (np.abs(lat.points[:, 0]) >= 0.4).astype(float)
    for method in ("numeric", "oracle"):
        fmap = backward_flow(sgn, 0.4, [0.0], lat, dt=1e-3, method=method)
        jac = backward_jacobian(sgn, fmap, method="fd")
        err = float(np.sum(np.abs(jac.samples[0] - exact)) * h)
        c.add(f"sgn J_(0,0.4) L1 error, {method} flow", err, "<=", 0.0, 4 * h)


def check_jacobian_sup(c: _Collector) -> None:
    for label, f in _catalog(planar=True):
        lat, dt = _catalog_grid(f.dim)
        fmap = backward_flow(f, 1.0, [0.0, 0.5], lat, dt=dt, method="numeric")
        jac = backward_jacobian(f, fmap, method="fd")
        c.add(f"{label} max J - exp(d int c1)", jac.max_excess(), "<=", 0.0, 1e-6)


def check_jacobian_strong(c: _Collector) -> None:
    sgn = make_catalog_field("sgn")
    table = jacobian_convergence_study(sgn, [2.0 ** -k for k in range(3, 9)], 0.4, 0.0, 1.0)
    c.add("Cauchy differences monotone", float(table.monotone), "==", 1.0)
    c.add("final L1 Cauchy difference", table.differences[-1], "<=", 0.0, 1e-2)


# ---------------------------------------------------------------------------
# compressive regime


def check_viscosity(c: _Collector) -> None:
    h, T = 0.02, 1.0
    lat = Lattice.with_spacing(-1.0, 1.0, h)
    tg = np.round(np.arange(0.0, T + h / 2, h), 12)
    xs = lat.points[:, 0]
    cases = (
        ("sgn", (), lambda p: np.abs(p[:, 0]), lambda t: np.abs(xs) - (T - t)),
        ("powerlaw", (0.5, 1.0), lambda p: np.abs(p[:, 0]) ** 0.5, lambda t: np.abs(xs) ** 0.5 - 0.5 * (T - t)),
    )
    for name, params, u_T, bad in cases:
        f = make_catalog_field(name, params)
        good = solve_compressive(f, u_T, tg, lat, T)
        c.add(f"{_label(name, params, 1)} good solution violations", viscosity_check(good, f).violations, "==", 0)
        wrong = GridFunction(tg, lat, np.stack([bad(t) for t in tg]))
        c.add(f"{_label(name, params, 1)} bad solution super hits at x=0",
              len(viscosity_check(wrong, f).near(0.0, 1e-9)), ">=", 1)


def check_commutator(c: _Collector) -> None:
    eps = [2.0 ** -k for k in range(3, 9)]
    for (a, b), (lo, hi) in (((0.5, 0.7), (0.1, 0.3)), ((1.0, 1.0), (0.8, 1.2))):
        fit = commutator_rate(a, b, eps)
        c.add(f"commutator slope alpha={a:g} beta={b:g}", fit.slope, "==", 0.5 * (lo + hi), 0.5 * (hi - lo))


def check_cancellation(c: _Collector) -> None:
    sgn = make_catalog_field("sgn")
    f0 = HybridMeasure.from_atoms([[1.0], [-1.0]], [0.5, -0.5])
    path = solve_compressive_duality(sgn, f0, [0.0, 1.5])
    c.add("TV of signed data at t=1.5", path.at(1.5).total_variation, "==", 0.0)
    path_abs = solve_compressive_duality(sgn, f0.absolute(), [0.0, 1.5])
    m = path_abs.at(1.5)
    c.add("|f0| atom count at t=1.5", m.atoms_w.size, "==", 1)
    c.add("|f0| atom mass at the origin", m.atom_weight_near([0.0], 0.0), "==", 1.0)


def check_sudden_l1(c: _Collector) -> None:
    f = make_catalog_field("powerlaw", [0.5])
    lat = Lattice.with_spacing(-1.0, 1.0, 2.0 ** -12)
    f0 = HybridMeasure.from_density(lat, lambda p: np.sign(p[:, 0]) * np.sqrt(np.abs(p[:, 0])))
    path = solve_compressive_duality(f, f0, [0.0, 0.5])
    c.add("density at (0.5, 0.09)", path.at(0.5).density_at([[0.09]])[0], "==", 32.0 / 15.0, 1e-3)
    rep = renormalization_probe(f, f0, [0.5, 1.0])
    c.add("F atom mass at t=0.5", rep.rows[0].atom_mass_of_F, "==", 1.0 / 6.0, 1e-3)
    c.add("F atom mass at t=1", rep.rows[1].atom_mass_of_F, "==", 4.0 / 3.0, 1e-3)
    c.add("F atom mass at t=1 vs int |f0|", rep.rows[1].atom_mass_of_F, "==", f0.total_variation, 1e-3)


def _random_probability(rng, n: int) -> HybridMeasure:
    return HybridMeasure.from_atoms(rng.uniform(-2.0, 2.0, (n, 1)), rng.dirichlet(np.ones(n)))


def check_wasserstein(c: _Collector) -> None:
    rng = np.random.default_rng(2024)
    pairs = [(_random_probability(rng, int(rng.integers(1, 8))), _random_probability(rng, int(rng.integers(1, 8))))
             for _ in range(100)]
    for name, params in (("sgn", ()), ("powerlaw", (0.5,))):
        f = make_catalog_field(name, params)
        worst = -math.inf
        for mu, nu in pairs:
            w0 = wasserstein(mu, nu, 1.0)
            pm = solve_compressive_duality(f, mu, [0.5, 1.0])
            pn = solve_compressive_duality(f, nu, [0.5, 1.0])
            for t in (0.5, 1.0):
                worst = max(worst, wasserstein(pm.at(t), pn.at(t), 1.0) - w0)
        c.add(f"{_label(name, params, 1)} max W1(f_t,g_t) - W1(f0,g0)", worst, "<=", 0.0, 1e-6)


# ---------------------------------------------------------------------------
# expansive regime


def _bump(p):
    x = p[:, 0]
    return np.where(np.abs(x) < 1, (1 - x * x) ** 3, 0.0)


def check_expansive_good(c: _Collector) -> None:
    lat = Lattice.with_spacing(-3.0, 3.0, 2.0 ** -7)
    worst = -math.inf
    for _, f in _catalog():
        sol = solve_good_expansive(f, _bump, [0.0, 0.5, 1.0], lat)
        rows = lp_bound_check(sol, 1.5)
        worst = max(worst, max(r[2] - r[3] for r in rows))
    c.add("catalog max L^p norm minus bound (p=1,2,inf)", worst, "<=", 0.0)
    sgn = make_catalog_field("sgn")
    window = lambda p: np.where(np.abs(p[:, 0] - 1.3) < 0.5, 1.0, 0.0)
    rel = max(abs(pr - ref) / abs(ref) for _, pr, ref in
              duality_identity(sgn, window, _bump, [0.0, 0.5], 1.0, Lattice.with_spacing(-2.0, 2.0, 2.0 ** -8)))
    c.add("duality identity relative gap", rel, "<=", 0.0, 0.02)
    L = Lattice.with_spacing(-2.0, 2.0, 2.0 ** -8)
    tg = np.linspace(0.0, 1.0, 129)
    formula = solve_good_expansive(sgn, lambda p: np.ones(len(p)), tg, L)
    verdict = good_criterion_check(sgn, formula)
    c.add("formula solution accepted by good criterion", float(verdict.good), "==", 1.0)
    spurious = good_criterion_check(sgn, spurious_sgn_solution(tg, L))
    c.add("spurious solution rejected by good criterion", float(not spurious.good), "==", 1.0)


def check_envelope_characterization(c: _Collector) -> None:
    h = 2.0 ** -8
    lat = Lattice.with_spacing(-2.0, 2.0, h)
    tg = np.round(np.arange(0.5, 1.0 + h / 2, h), 12)
    sgn = make_catalog_field("sgn")
    u_T = lambda p: ((p[:, 0] >= 0.9) & (p[:, 0] <= 1.1)).astype(float)
    u = solve_expansive(sgn, u_T, tg, lat, 1.0, dt=h)
    tests = dyadic_family(0.5, 1.0, 0.0, 2.0)
    table = duality_residual(u, sgn, [2.0 ** -k for k in range(2, 7)], tests)
    norms = table.r_norms
    c.add("r^delta L1 norms nonincreasing", float(all(b <= a for a, b in zip(norms, norms[1:]))), "==", 1.0)
    c.add("final r^delta L1 norm", norms[-1], "<=", 0.0, 1e-2)
    frozen = GridFunction(tg, lat, np.stack([u_T(lat.points)] * len(tg)))
    bad = duality_residual(frozen, sgn, [2.0 ** -6], tests).rows[0]
    c.add("frozen non-solution residual at delta=2^-6", bad.residual, ">=", 0.1)


# ---------------------------------------------------------------------------
# stochastic


def check_stochastic_moments(c: _Collector, threads: int = 1) -> None:
    sgn = make_catalog_field("sgn")
    lat = Lattice.with_spacing(-2.0, 2.0, 1.0 / 16)
    ens = backward_sde_flow(sgn, NoiseSpec(0.1, seed=1, paths=2000, dt=1e-2), 1.0,
                            [1.0, 0.75, 0.5, 0.25, 0.0], lat, threads=threads)
    for row in moment_check(ens, sgn):
        c.add(f"moment {row.name}: worst mean", row.value, "<=", row.bound * (1 + row.rtol), 3.0 * row.se)
    table = small_noise_study(sgn, [0.2, 0.1, 0.05], 2000, seed=4, threads=threads)
    c.add("small-noise sup distance at eps=0.05", table.distances[-1], "<=", 0.0, 0.1)


def _gaussian_oracle(f0: Callable, xs: np.ndarray, var: float) -> np.ndarray:
    y = np.linspace(-1.0, 1.0, 4001)
    w = np.full(y.size, y[1] - y[0])
    w[[0, -1]] *= 0.5
    vals = f0(y[:, None]) * w
    kern = np.exp(-(xs[:, None] - y[None, :]) ** 2 / (2 * var)) / math.sqrt(2 * math.pi * var)
    return kern @ vals


def check_fokker_planck(c: _Collector, threads: int = 1) -> None:
    lat = Lattice.with_spacing(-4.0, 4.0, 1.0 / 16)
    zero = make_catalog_field("zero")
    fp = solve_fokker_planck_const_noise(zero, NoiseSpec(1.0, seed=7, paths=10_000), _bump, [0.0, 0.5], lat,
                                         threads=threads)
    oracle = _gaussian_oracle(_bump, lat.points[:, 0], 0.5)
    err = float(np.sqrt(np.sum((fp.samples[1] - oracle) ** 2) * lat.spacing))
    ci = float(np.sqrt(np.sum(fp.ci[1] ** 2) * lat.spacing))
    c.add("b=0 sigma=I L2 error vs Gaussian oracle", err, "<=", 0.0, 3.0 * ci)
    sgn = make_catalog_field("sgn")
    tg = [0.0, 0.5, 1.0]
    det = solve_fokker_planck_const_noise(sgn, NoiseSpec(0.0, paths=5), _bump, tg, lat, threads=threads)
    ref = solve_good_expansive(sgn, _bump, tg, lat, dt=1e-2, method="numeric")
    c.add("sigma=0 bit-equal to good solution", float(np.array_equal(det.samples, ref.samples)), "==", 1.0)
    lin = make_catalog_field("linear", [-1.0])
    fl = solve_fokker_planck_const_noise(lin, NoiseSpec(0.1, seed=8, paths=2000), _bump, tg, lat, threads=threads)
    m0 = fl.masses[0]
    for k, t in enumerate(tg[1:], start=1):
        ci_mass = float(np.sum(fl.ci[k]) * lat.spacing)
        c.add(f"b=-x mass drift at t={t:g}", abs(fl.masses[k] - m0), "<=", 0.0, 0.01 * abs(m0) + ci_mass)


# ---------------------------------------------------------------------------
# suites


CRITERIA = {
    1: ("backward flow exactness", check_flow_exactness),
    2: ("backward Lipschitz bound", check_lipschitz),
    3: ("Jacobian indicator", check_jacobian_indicator),
    4: ("Jacobian sup bound", check_jacobian_sup),
    5: ("strong Jacobian convergence", check_jacobian_strong),
    6: ("good vs bad viscosity solutions", check_viscosity),
    7: ("commutator rate", check_commutator),
    8: ("duality cancellation", check_cancellation),
    9: ("sudden L1 example", check_sudden_l1),
    10: ("Wasserstein contraction", check_wasserstein),
    11: ("expansive good solution", check_expansive_good),
    12: ("regular Lagrangian compressibility", check_preimage),
    13: ("sup/inf-convolution characterization", check_envelope_characterization),
    14: ("stochastic moments and small noise", check_stochastic_moments),
    15: ("constant-noise Fokker-Planck", check_fokker_planck),
}

SUITES = {
    "flows": (1, 2, 12),
    "jacobians": (3, 4, 5),
    "compressive": (6, 7, 8, 9, 10),
    "expansive": (11, 13),
    "stochastic": (14, 15),
}
SUITES["all"] = tuple(sorted(k for ids in SUITES.values() for k in ids))

_THREADED = {14, 15}


class UnknownSuite(KeyError):
    pass


@dataclass
class SuiteReport:
    suite: str
    tol_scale: float
    results: dict  # criterion id -> list of CheckResult

    @property
    def passed(self) -> bool:
        return all(r.status == "PASS" for rows in self.results.values() for r in rows)

    def criterion_passed(self, crit: int) -> bool:
        return all(r.status == "PASS" for r in self.results[crit])

    def text(self) -> str:
        lines = [f"suite {self.suite} tol-scale {self.tol_scale:g}"]
        for crit, rows in self.results.items():
            status = "PASS" if self.criterion_passed(crit) else "FAIL"
            lines.append(f"[{status}] criterion {crit}: {CRITERIA[crit][0]}")
            lines.extend("    " + r.line() for r in rows)
        n_fail = sum(not self.criterion_passed(k) for k in self.results)
        lines.append(f"{len(self.results) - n_fail}/{len(self.results)} criteria passed")
        return "\n".join(lines) + "\n"


def run_criterion(crit: int, tol_scale: float = 1.0, threads: int = 1) -> list:
    c = _Collector(crit, tol_scale)
    fn = CRITERIA[crit][1]
    if crit in _THREADED:
        fn(c, threads=threads)
    else:
        fn(c)
    return c.rows


def run_suite(name: str, tol_scale: float = 1.0, threads: int = 1,
              progress: Optional[Callable[[int], None]] = None) -> SuiteReport:
    if name not in SUITES:
        raise UnknownSuite(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    if not (tol_scale > 0 and math.isfinite(tol_scale)):
        raise ValueError("tolerance scale must be positive")
    results = {}
    for crit in SUITES[name]:
        if progress is not None:
            progress(crit)
        results[crit] = run_criterion(crit, tol_scale, threads)
    return SuiteReport(name, float(tol_scale), results)
