import numpy as np
import pytest

from osllab.continuity import (ContinuityError, DensitySolution, good_criterion_check, lp_bound_check,
                               nonnegative_uniqueness_probe, renormalization_probe, solve_compressive_duality,
                               solve_good_expansive, spurious_sgn_solution, strong_stability_study,
                               weak_residual_compressive)
from osllab.field import make_catalog_field
from osllab.gridfunction import GridFunction
from osllab.lattice import Lattice
from osllab.measure import HybridMeasure

SGN = make_catalog_field("sgn")
POWER = make_catalog_field("powerlaw", [0.5])


def bump(p):
    x = p[:, 0]
    return np.where(np.abs(x) < 1, (1 - x * x) ** 3, 0.0)


def sudden_data(h):
    lat = Lattice.with_spacing(-1, 1, h)
    return HybridMeasure.from_density(lat, lambda p: np.sign(p[:, 0]) * np.sqrt(np.abs(p[:, 0])))


def test_signed_atoms_cancel_and_absolute_value_stays():
    f0 = HybridMeasure.from_atoms([[1.0], [-1.0]], [0.5, -0.5])
    rep = renormalization_probe(SGN, f0, [0.5, 1.0, 1.5])
    last = rep.rows[-1]
    assert last.variation_of_f == 0.0
    assert last.atom_mass_of_F == 1.0
    assert last.mismatch == 1.0
    assert rep.rows[0].mismatch == 0.0
    assert not rep.renormalizes


def test_sudden_density_and_atom_masses():
    f0 = sudden_data(2.0 ** -10)
    path = solve_compressive_duality(POWER, f0, [0.0, 0.25, 0.5, 1.0])
    assert path.at(0.5).density_at([[0.09]])[0] == pytest.approx(32 / 15, abs=1e-3)
    np.testing.assert_allclose(path.masses, 0.0, atol=1e-10)
    rep = renormalization_probe(POWER, f0, [0.5, 1.0])
    assert rep.rows[0].atom_mass_of_F == pytest.approx(1 / 6, abs=1e-3)
    assert rep.rows[1].atom_mass_of_F == pytest.approx(4 / 3, abs=1e-3)


def test_numeric_and_oracle_pushforwards_agree():
    f0 = HybridMeasure.from_atoms([[0.7], [-0.2], [1.5]], [0.2, 0.5, 0.3])
    a = solve_compressive_duality(SGN, f0, [0.6], method="oracle").at(0.6)
    b = solve_compressive_duality(SGN, f0, [0.6], method="numeric").at(0.6)
    assert a.atom_weight_near([0.0], 1e-9) == pytest.approx(0.5)
    assert a.atom_weight_near([0.1], 1e-9) == pytest.approx(0.2)
    assert b.atom_weight_near([0.0], 1e-2) == pytest.approx(0.5)
    assert b.atom_weight_near([0.1], 1e-2) == pytest.approx(0.2)
    assert b.atom_weight_near([0.9], 1e-2) == pytest.approx(0.3)


def test_weak_residual_for_continuous_field():
    path = solve_compressive_duality(POWER, sudden_data(2.0 ** -9), np.linspace(0, 1, 33))
    res = weak_residual_compressive(path)
    assert res.max <= 1e-3


def test_weak_residual_refuses_atoms_on_discontinuous_field():
    f0 = HybridMeasure.from_atoms([[1.0]], [1.0])
    with pytest.raises(ContinuityError):
        weak_residual_compressive(solve_compressive_duality(SGN, f0, np.linspace(0, 1.5, 7)))


def test_good_expansive_formula_for_sgn():
    lat = Lattice.with_spacing(-2, 2, 2.0 ** -8)
    sol = solve_good_expansive(SGN, lambda p: np.ones(len(p)), [0.0, 0.5], lat)
    np.testing.assert_array_equal(sol.at(0.5), (np.abs(lat.axes[0]) >= 0.5).astype(float))


def test_numeric_good_solution_conserves_mass():
    lat = Lattice.with_spacing(-2, 2, 2.0 ** -8)
    lin = make_catalog_field("linear", [-1.0])
    oracle = solve_good_expansive(lin, bump, [0.0, 0.5, 1.0], lat, method="oracle")
    numeric = solve_good_expansive(lin, bump, [0.0, 0.5, 1.0], lat, method="numeric")
    np.testing.assert_allclose(oracle.masses, 32 / 35, rtol=1e-4)
    np.testing.assert_allclose(numeric.samples, oracle.samples, atol=1e-8)


def test_good_criterion_accepts_formula_and_rejects_spurious():
    lat = Lattice.with_spacing(-2, 2, 2.0 ** -7)
    tg = np.linspace(0, 1, 65)
    formula = solve_good_expansive(SGN, lambda p: np.ones(len(p)), tg, lat)
    assert good_criterion_check(SGN, formula).good
    verdict = good_criterion_check(SGN, spurious_sgn_solution(tg, lat))
    assert not verdict.good
    assert verdict.residual_abs > verdict.tol


def test_uniqueness_probe_finds_no_other_nonnegative_solution():
    lat = Lattice.with_spacing(-2, 2, 2.0 ** -7)
    tg = np.linspace(0, 1, 65)
    rep = nonnegative_uniqueness_probe(SGN, lambda p: np.ones(len(p)), tg, lat, seed=3)
    assert rep.unique


def test_lp_bound_rows():
    lat = Lattice.with_spacing(-3, 3, 2.0 ** -7)
    for f in (SGN, POWER, make_catalog_field("linear", [-1.0])):
        sol = solve_good_expansive(f, bump, [0.0, 0.5, 1.0], lat)
        for t, p, value, bound in lp_bound_check(sol, 1.5):
            assert value <= bound, (f.name, t, p)


def test_strong_stability_distances_shrink():
    d = strong_stability_study(SGN, bump, 0.5, [2.0 ** -k for k in range(3, 7)], 1.0)
    assert all(b < a for a, b in zip(d, d[1:]))


def test_density_solution_ledger_consistency(tmp_path):
    lat = Lattice.with_spacing(0, 1, 0.5)
    with pytest.raises(ContinuityError):
        DensitySolution([0.0], lat, np.ones((1, 3)), masses=np.array([5.0]))
    sol = DensitySolution([0.0], lat, np.ones((1, 3)))
    assert sol.mass_at(0.0) == pytest.approx(1.5)
    sol.to_csv(tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "t,x1,f,mass_at_t"


def test_expansive_data_must_be_a_density():
    lat = Lattice.with_spacing(-1, 1, 0.5)
    with pytest.raises(ContinuityError):
        solve_good_expansive(SGN, HybridMeasure.from_atoms([[0.0]], [1.0]), [0.0], lat)
    assert isinstance(spurious_sgn_solution([0.0, 0.5], lat), GridFunction)
