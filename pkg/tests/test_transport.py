import numpy as np
import pytest

from osllab.field import make_catalog_field
from osllab.gridfunction import GridFunction, dyadic_family
from osllab.lattice import Lattice
from osllab.transport import (TransportError, apriori_check, commutator, commutator_rate, comparison_profile,
                              duality_residual, envelopes, renormalize_expansive, solve_compressive,
                              solve_expansive, viscosity_check)

SGN = make_catalog_field("sgn")


def upwind_compressive(u_T, xs, T, field, cfl=0.5):
    """First-order upwind for -u_t + b u_x = 0, solved backward from T (test-only oracle)."""
    h = xs[1] - xs[0]
    b = field(0.0, xs[:, None])[:, 0]
    steps = int(np.ceil(T / (cfl * h)))
    dt = T / steps
    u = u_T(xs[:, None]).astype(float)
    for _ in range(steps):
        left = np.concatenate([[u[0]], u[:-1]])
        right = np.concatenate([u[1:], [u[-1]]])
        # in reversed time the profile is carried with velocity b
        du = np.where(b > 0, u - left, right - u) / h
        u = u - dt * b * du
    return u


def test_goodvisc_formula_on_grid():
    lat = Lattice.with_spacing(-1, 1, 0.05)
    u = solve_compressive(SGN, lambda p: np.abs(p[:, 0]), [0.0, 0.5, 1.0], lat, 1.0)
    x = lat.axes[0]
    for t in (0.0, 0.5, 1.0):
        np.testing.assert_allclose(u.at(t), np.maximum(np.abs(x) - (1 - t), 0.0), atol=1e-12)


@pytest.mark.parametrize("name,params", [("sgn", ()), ("powerlaw", (0.5, 1.0))])
def test_compressive_solution_agrees_with_upwind_scheme(name, params):
    f = make_catalog_field(name, params)
    lat = Lattice.with_spacing(-2, 2, 1 / 256)
    u_T = lambda p: np.abs(p[:, 0])
    ours = solve_compressive(f, u_T, [0.5], lat, 1.0).at(0.5)
    fv = upwind_compressive(u_T, lat.axes[0], 0.5, f)
    inner = np.abs(lat.axes[0]) <= 1.0
    assert np.sum(np.abs(ours - fv)[inner]) * lat.spacing <= 2e-2


def test_zero_field_leaves_data_unchanged():
    f = make_catalog_field("zero")
    lat = Lattice.with_spacing(-1, 1, 0.1)
    u_T = lambda p: np.cos(p[:, 0])
    for solve in (solve_compressive, solve_expansive):
        u = solve(f, u_T, [0.0, 0.7], lat, 1.0)
        np.testing.assert_allclose(u.samples, np.cos(lat.axes[0])[None].repeat(2, 0), atol=1e-12)


def test_expansive_sgn_solution():
    lat = Lattice.with_spacing(-2, 2, 1 / 64)
    u_T = lambda p: ((p[:, 0] >= 0.9) & (p[:, 0] <= 1.1)).astype(float)
    u = solve_expansive(SGN, u_T, [0.5], lat, 1.0)
    x = lat.axes[0]
    ok = u.valid(0.5)
    expected = ((x >= 0.4 - 1e-12) & (x <= 0.6 + 1e-12)).astype(float)
    assert np.sum(np.abs(u.at(0.5)[ok] - expected[ok])) * lat.spacing <= 2 * lat.spacing
    assert u.flagged_fraction <= 0.05


def test_renormalization_of_expansive_solution():
    lat = Lattice.with_spacing(-2, 2, 1 / 32)
    u = solve_expansive(SGN, lambda p: np.sin(p[:, 0]), [0.0, 0.5], lat, 1.0)
    _, defect = renormalize_expansive(u, lambda v: v ** 2)
    assert defect <= 1e-12
    with pytest.raises(TransportError):
        renormalize_expansive(solve_compressive(SGN, lambda p: p[:, 0], [0.0], lat, 1.0), np.abs)


def test_viscosity_check_separates_good_and_bad():
    h = 0.04
    lat = Lattice.with_spacing(-1, 1, h)
    tg = np.round(np.arange(0, 1 + h / 2, h), 12)
    good = solve_compressive(SGN, lambda p: np.abs(p[:, 0]), tg, lat, 1.0)
    assert viscosity_check(good, SGN).violations == 0
    x = lat.axes[0]
    bad = GridFunction(tg, lat, np.stack([np.abs(x) - (1 - t) for t in tg]))
    rep = viscosity_check(bad, SGN)
    assert rep.near(0.0, 1e-9)
    assert all(v["x"] == pytest.approx(0.0) for v in rep.supersolution)


def test_comparison_profile_orders_solutions():
    lat = Lattice.with_spacing(-1, 1, 0.1)
    u = solve_compressive(SGN, lambda p: np.abs(p[:, 0]), [0.0, 0.5], lat, 1.0)
    v = solve_compressive(SGN, lambda p: np.abs(p[:, 0]) + 0.1, [0.0, 0.5], lat, 1.0)
    np.testing.assert_allclose(comparison_profile(u, v), -0.1)


def test_commutator_rates():
    # linear b and |x| away from the kink: the odd kernel moment vanishes
    x = np.linspace(0.1, 1, 10)
    assert np.max(np.abs(commutator(1.0, 1.0, 0.01, x))) <= 1e-12
    assert np.max(np.abs(commutator(0.5, 1.0, 0.01, x))) > 1e-7
    fit = commutator_rate(0.6, 0.8, [2.0 ** -k for k in range(3, 7)])
    assert fit.theory == pytest.approx(0.4)
    assert abs(fit.slope - 0.4) <= 0.1


def test_envelopes_bracket_and_lipschitz():
    lat = Lattice.with_spacing(-1, 1, 1 / 64)
    x = lat.axes[0]
    u = GridFunction([0.0], lat, (np.abs(x) < 0.3).astype(float)[None])
    pair = envelopes(u, 1 / 16)
    assert np.all(pair.upper.samples >= u.samples - 1e-15)
    assert np.all(pair.lower.samples <= u.samples + 1e-15)
    for _, lip_up, lip_lo, bound in pair.lipschitz_report(u):
        assert lip_up <= bound and lip_lo <= bound
    with pytest.raises(TransportError):
        envelopes(u, 0.0)


def test_duality_residual_frozen_profile_is_not_a_solution():
    h = 1 / 64
    lat = Lattice.with_spacing(-2, 2, h)
    tg = np.round(np.arange(0.5, 1 + h / 2, h), 12)
    bump = ((lat.axes[0] >= 0.9) & (lat.axes[0] <= 1.1)).astype(float)
    frozen = GridFunction(tg, lat, np.stack([bump] * len(tg)))
    row = duality_residual(frozen, SGN, [1 / 16], dyadic_family(0.5, 1.0, 0.0, 2.0)).rows[0]
    assert row.residual >= 0.1
    assert row.r_norm == 0.0


def test_apriori_bounds_hold():
    lat = Lattice.with_spacing(-2, 2, 1 / 32)
    f = make_catalog_field("linear", [-1.0])
    u = solve_compressive(f, lambda p: np.minimum(np.abs(p[:, 0]), 1.0), [0.0, 0.5], lat, 1.0)
    for t, name, value, bound in apriori_check(u, 1.0):
        assert value <= bound + 1e-9, (t, name)
