import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from osllab.field import make_catalog_field
from osllab.flow import backward_flow
from osllab.lattice import Lattice
from osllab.measure import (HybridMeasure, MeasureError, discrete_transport, discretize, pair, push_forward,
                            push_forward_by, wasserstein)


def test_accounting():
    lat = Lattice.with_spacing(0, 1, 0.5)
    m = HybridMeasure.from_density(lat, [1.0, -2.0, 1.0], atoms_x=[[3.0]], atoms_w=[-0.5])
    assert m.total_mass == pytest.approx(-0.5)
    assert m.total_variation == pytest.approx(2.5)
    assert m.atom_mass == -0.5
    assert not m.is_nonnegative
    assert m.absolute().total_mass == pytest.approx(2.5)


def test_atoms_merge_and_cancel():
    m = HybridMeasure.from_atoms([[1.0], [1.0 + 1e-9], [2.0]], [0.5, -0.5, 1.0])
    assert m.cancelled_mass == pytest.approx(1.0)
    assert m.total_variation == pytest.approx(1.0)


def test_csv_round_trip(tmp_path):
    lat = Lattice.with_spacing(-1, 1, 0.5)
    m = HybridMeasure.from_density(lat, lambda p: p[:, 0] ** 2, atoms_x=[[0.3]], atoms_w=[2.0])
    m.to_csv(tmp_path / "m.csv")
    back = HybridMeasure.from_csv(tmp_path / "m.csv")
    np.testing.assert_array_equal(back.density, m.density)
    np.testing.assert_array_equal(back.atoms_x, m.atoms_x)
    assert back.atoms_w.tolist() == [2.0]


def test_wasserstein_closed_forms():
    d0 = HybridMeasure.from_atoms([[0.0]], [1.0])
    d1 = HybridMeasure.from_atoms([[1.0]], [1.0])
    uniform = HybridMeasure.from_density(Lattice.uniform(0.0005, 0.9995, 1000), np.ones(1000))
    assert wasserstein(d0, d1) == pytest.approx(1.0)
    assert wasserstein(uniform, d0, 1.0) == pytest.approx(0.5, abs=1e-9)
    assert wasserstein(uniform, d0, 2.0) == pytest.approx(1 / np.sqrt(3), abs=1e-6)
    assert wasserstein(uniform, d0, np.inf) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(MeasureError):
        wasserstein(HybridMeasure.from_atoms([[0.0]], [0.5]), d0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 6), k=st.integers(1, 6), p=st.sampled_from([1.0, 2.0]))
def test_quantile_route_matches_linear_program(seed, n, k, p):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-2, 2, (n, 1)), rng.uniform(-2, 2, (k, 1))
    a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(k))
    w = wasserstein(HybridMeasure.from_atoms(x, a), HybridMeasure.from_atoms(y, b), p)
    assert w == pytest.approx(discrete_transport(x, a, y, b, p), abs=1e-7)


def test_planar_wasserstein_uses_transport_program():
    mu = HybridMeasure.from_atoms([[0.0, 0.0]], [1.0], dim=2)
    nu = HybridMeasure.from_atoms([[3.0, 4.0]], [1.0], dim=2)
    assert wasserstein(mu, nu) == pytest.approx(5.0)


def test_discretize_preserves_mass():
    lat = Lattice.with_spacing(-1, 1, 0.01)
    m = HybridMeasure.from_density(lat, lambda p: np.sin(3 * p[:, 0]), atoms_x=[[0.5]], atoms_w=[0.2])
    cloud = discretize(m, 101)
    assert cloud.total_weight == pytest.approx(m.total_mass, abs=1e-12)
    assert cloud.is_atom.sum() == 1


def test_pushforward_concentrates_density_into_an_atom():
    lat = Lattice.with_spacing(-1, 1, 0.01)
    m = HybridMeasure.from_density(lat, np.ones(lat.size))
    out, report = push_forward_by(m, lambda x: np.sign(x) * np.maximum(np.abs(x) - 0.5, 0.0), lat)
    # [-0.5, 0.5] collapses; the cells centred at +-0.5 are split in half
    assert out.atom_weight_near([0.0], 1e-9) == pytest.approx(1.0, abs=1e-9)
    assert out.total_mass == pytest.approx(m.total_mass)


def test_signed_pushforward_cancels_exactly():
    sgn = make_catalog_field("sgn")
    m = HybridMeasure.from_atoms([[1.0], [-1.0]], [0.5, -0.5])
    fmap = backward_flow(sgn, 1.5, [0.0], Lattice.with_spacing(-2, 2, 0.01))
    out = push_forward(m, fmap, 1.5)
    assert out.total_variation == 0.0


def test_pair_integrates_atoms_and_density():
    lat = Lattice.with_spacing(0, 1, 0.25)
    m = HybridMeasure.from_density(lat, np.ones(lat.size), atoms_x=[[2.0]], atoms_w=[3.0])
    assert pair(m, lambda p: p[:, 0]) == pytest.approx(0.25 * 2.5 + 6.0)
