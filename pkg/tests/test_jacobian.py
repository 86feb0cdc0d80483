import numpy as np
import pytest

from osllab.field import make_catalog_field, mollify
from osllab.flow import backward_flow, forward_flow
from osllab.jacobian import (JacobianError, backward_jacobian, change_of_variables_error,
                             jacobian_convergence_study, mollified_jacobian)
from osllab.lattice import Lattice

SGN = make_catalog_field("sgn")


def test_fd_jacobian_of_sgn_oracle_flow_is_indicator():
    h = 0.01
    lat = Lattice.with_spacing(-2, 2, h)
    jac = backward_jacobian(SGN, backward_flow(SGN, 0.4, [0.0], lat))
    exact = (np.abs(lat.axes[0]) >= 0.4).astype(float)
    assert np.sum(np.abs(jac.samples[0] - exact)) * h <= 4 * h
    assert jac.max_excess() <= 1e-12


def test_linear_jacobian_is_constant():
    f = make_catalog_field("linear", [-1.0])
    lat = Lattice.with_spacing(-1, 1, 0.05)
    fmap = backward_flow(f, 1.0, [0.0, 0.5], lat, method="numeric", dt=1e-2)
    jac = backward_jacobian(f, fmap)
    np.testing.assert_allclose(jac.at(0.0), np.e, rtol=1e-6)
    np.testing.assert_allclose(jac.sup_bound, [np.e, np.exp(0.5)])


def test_variational_matches_finite_differences():
    m = mollify(SGN, 0.1)
    lat = Lattice.with_spacing(-1, 1, 1 / 64)
    fmap = backward_flow(m, 0.5, [0.0], lat, dt=0.025, method="numeric")
    fd = backward_jacobian(m, fmap, method="fd", offset=1)
    var = backward_jacobian(m, fmap, method="variational")
    assert np.sum(np.abs(fd.samples - var.samples)) / lat.axes[0].size <= 2e-2


def test_variational_needs_smooth_field():
    lat = Lattice.with_spacing(-1, 1, 0.1)
    with pytest.raises(JacobianError):
        backward_jacobian(SGN, backward_flow(SGN, 0.5, [0.0], lat), method="variational")
    with pytest.raises(JacobianError):
        backward_jacobian(SGN, forward_flow(SGN, 0.0, [0.5], lat))


def test_change_of_variables_for_powerlaw():
    f = make_catalog_field("powerlaw", [0.5])
    lat = Lattice.with_spacing(-2, 2, 1e-3)
    fmap = backward_flow(f, 0.3, [0.0], lat)
    jac = backward_jacobian(f, fmap)
    assert change_of_variables_error(f, jac, fmap, 0.0) <= 1e-2


def test_mollified_jacobian_is_bounded_by_one_for_sgn():
    lat = Lattice.with_spacing(-1, 1, 1 / 128)
    j = mollified_jacobian(SGN, 1 / 16, 0.4, 0.0, lat)
    assert j.max() <= 1 + 1e-9 and j.min() >= 0


def test_strong_convergence_table_for_powerlaw():
    f = make_catalog_field("powerlaw", [0.5])
    table = jacobian_convergence_study(f, [2.0 ** -k for k in range(3, 7)], 0.3, 0.0, 1.0)
    assert table.monotone
    assert table.limit_error is not None and table.limit_error < table.differences[0] * 2
    with pytest.raises(JacobianError):
        jacobian_convergence_study(make_catalog_field("sgn", (), 2), [0.25, 0.125], 0.3, 0.0, 1.0)


def test_weak_convergence_in_two_dimensions_runs():
    f = make_catalog_field("linear", [-1.0], dim=2)
    table = jacobian_convergence_study(f, [0.5, 0.25], 0.3, 0.0, 1.0, spacing=0.125, mode="weak")
    assert table.mode == "weak"
    # a smooth field is not mollified, so only the time step changes between radii
    assert table.differences[0] == pytest.approx(0.0, abs=1e-4)
