import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from osllab.continuity import solve_good_expansive
from osllab.field import make_catalog_field
from osllab.flow import UnsupportedOperation, backward_flow
from osllab.lattice import Lattice
from osllab.stochastic import (BrownianPath, NoiseSpec, StochasticError, backward_sde_flow, bv_second_order_check,
                               forward_flow_const_noise, moment_check, semigroup_defect, small_noise_study,
                               solve_fokker_planck_const_noise, solve_second_order_compressive)
from osllab.transport import solve_compressive

SGN = make_catalog_field("sgn")
ZERO = make_catalog_field("zero")
LAT = Lattice.with_spacing(-2, 2, 1 / 8)


def bump(p):
    x = p[:, 0]
    return np.where(np.abs(x) < 1, (1 - x * x) ** 3, 0.0)


def test_noise_spec_validation():
    with pytest.raises(StochasticError):
        NoiseSpec(0.1, paths=0)
    with pytest.raises(StochasticError):
        NoiseSpec(0.1, paths=3, antithetic=True)
    with pytest.raises(StochasticError):
        NoiseSpec(0.1, space_dependent=True)
    ids, signs = NoiseSpec(0.1, paths=4, antithetic=True).streams()
    assert ids.tolist() == [0, 0, 1, 1] and signs.tolist() == [1, -1, 1, -1]


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 31), stream=st.integers(0, 1000), t=st.floats(0.0, 1.0))
def test_brownian_paths_are_prefix_consistent(seed, stream, t):
    short = BrownianPath(seed, stream, 1, 1.0, 1e-2, 1.0)
    long = BrownianPath(seed, stream, 1, 2.0, 1e-2, 1.0)
    np.testing.assert_allclose(short(t), long(t), atol=1e-14)


def test_zero_noise_equals_deterministic_flow_bitwise():
    ens = backward_sde_flow(SGN, NoiseSpec(0.0, paths=3, dt=1e-2), 1.0, [0.5, 0.0], LAT)
    ref = backward_flow(SGN, 1.0, [0.5, 0.0], LAT, dt=1e-2, method="numeric")
    assert np.array_equal(ens.samples[1], ref.samples)
    assert np.all(ens.ci() == 0)


def test_zero_field_keeps_distances_exactly():
    ens = backward_sde_flow(ZERO, NoiseSpec(1.0, seed=2, paths=50), 1.0, [0.0], LAT)
    x = ens.samples[:, 0, :, 0]
    gap = LAT.axes[0][9] - LAT.axes[0][5]
    np.testing.assert_allclose(x[:, 9] - x[:, 5], gap, atol=1e-12)


def test_moment_bounds_with_small_noise():
    ens = backward_sde_flow(SGN, NoiseSpec(0.1, seed=1, paths=400), 1.0, [1.0, 0.5, 0.0], LAT)
    rows = moment_check(ens, SGN)
    assert {r.name for r in rows} == {"lipschitz", "bound", "time"}
    assert all(r.passed for r in rows)


def test_same_seed_same_samples_across_threads():
    a = backward_sde_flow(SGN, NoiseSpec(0.2, seed=9, paths=40), 1.0, [0.0], LAT, threads=1)
    b = backward_sde_flow(SGN, NoiseSpec(0.2, seed=9, paths=40), 1.0, [0.0], LAT, threads=3)
    assert np.array_equal(a.samples, b.samples)


def test_semigroup_defect_of_the_mean_flow_is_small():
    assert semigroup_defect(SGN, NoiseSpec(0.1, seed=3, paths=200), 0.0, 0.5, 1.0, LAT) <= 0.1


def test_small_noise_distance_shrinks():
    table = small_noise_study(SGN, [0.2, 0.05], 400, seed=4, x_grid=LAT)
    assert table.decreasing
    assert table.distances[-1] <= 0.1


def test_heat_equation_mean():
    u = solve_second_order_compressive(ZERO, NoiseSpec(1.0, seed=5, paths=2000), lambda p: p[:, 0] ** 2,
                                       [0.0, 1.0], LAT, 1.0)
    err = np.abs(u.samples[0] - LAT.axes[0] ** 2 - 1.0)
    assert np.max(err / u.ci[0]) <= 4.0


def test_zero_noise_second_order_is_first_order():
    u0 = solve_second_order_compressive(SGN, NoiseSpec(0.0, paths=2), lambda p: np.abs(p[:, 0]), [0.0, 0.5],
                                        LAT, 1.0)
    ref = solve_compressive(SGN, lambda p: np.abs(p[:, 0]), [0.0, 0.5], LAT, 1.0, dt=1e-2, method="numeric")
    assert np.array_equal(u0.samples, ref.samples)


def test_bv_bound_for_second_order_transport():
    u = solve_second_order_compressive(ZERO, NoiseSpec(1.0, seed=5, paths=500),
                                       lambda p: ((p[:, 0] >= 0) & (p[:, 0] <= 1)).astype(float),
                                       [0.0, 0.5, 1.0], LAT, 1.0)
    for row in bv_second_order_check(u):
        assert row.value <= row.bound + 1e-9


def test_forward_flow_refuses_space_dependent_noise():
    noise = NoiseSpec(lambda t, x: 0.1 * np.ones((len(x), 1, 1)), space_dependent=True, lipschitz=0.0,
                      growth=0.1)
    with pytest.raises(UnsupportedOperation):
        forward_flow_const_noise(SGN, noise, 0.0, [0.0, 0.5], LAT)


def test_forward_flow_with_zero_field_is_pure_noise():
    ens = forward_flow_const_noise(ZERO, NoiseSpec(0.3, seed=6, paths=3), 0.2, [0.2, 0.6, 1.0], LAT)
    shifts = ens.samples[:, 2, :, 0] - LAT.axes[0][None]
    np.testing.assert_allclose(shifts - shifts[:, :1], 0.0, atol=1e-12)
    np.testing.assert_allclose(ens.samples[:, 0, :, 0], np.broadcast_to(LAT.axes[0], (3, LAT.size)), atol=1e-12)


def test_fokker_planck_zero_noise_equals_good_solution_bitwise():
    lat = Lattice.with_spacing(-3, 3, 1 / 16)
    det = solve_fokker_planck_const_noise(SGN, NoiseSpec(0.0, paths=5), bump, [0.0, 0.5], lat)
    ref = solve_good_expansive(SGN, bump, [0.0, 0.5], lat, dt=1e-2, method="numeric")
    assert np.array_equal(det.samples, ref.samples)


def test_fokker_planck_heat_kernel():
    from scipy.stats import norm

    lat = Lattice.with_spacing(-4, 4, 1 / 8)
    fp = solve_fokker_planck_const_noise(ZERO, NoiseSpec(1.0, seed=7, paths=4000), bump, [0.5], lat)
    y = np.linspace(-1, 1, 2001)
    dy = y[1] - y[0]
    oracle = np.array([np.sum(bump(y[:, None]) * norm.pdf(x - y, scale=np.sqrt(0.5))) * dy for x in lat.axes[0]])
    err = np.sqrt(np.sum((fp.samples[0] - oracle) ** 2))
    assert err <= 3 * np.sqrt(np.sum(fp.ci[0] ** 2))


def test_path_jacobians_match_finite_differences_of_the_flow():
    lat = Lattice.with_spacing(-2, 2, 1 / 256)
    field = make_catalog_field("linear", [-1.0])
    ens = backward_sde_flow(field, NoiseSpec(0.3, seed=8, paths=4), 1.0, [0.0], lat, with_jacobian=True)
    x = ens.samples[:, 0, :, 0]
    fd = np.gradient(x, lat.axes[0], axis=1)
    np.testing.assert_allclose(ens.jacobians[:, 0], fd, rtol=1e-6)
    np.testing.assert_allclose(ens.jacobians[:, 0], np.e, rtol=1e-3)


def test_path_jacobians_for_mollified_sgn_follow_the_flow():
    lat = Lattice.with_spacing(-2, 2, 1 / 256)
    ens = backward_sde_flow(SGN, NoiseSpec(0.3, seed=8, paths=4), 1.0, [0.5], lat, with_jacobian=True)
    x = ens.samples[:, 0, :, 0]
    fd = np.gradient(x, lat.axes[0], axis=1)
    err = np.abs(ens.jacobians[:, 0] - fd)
    # kinks of the flow map occupy a few cells per path
    assert np.mean(err < 0.05) >= 0.9
