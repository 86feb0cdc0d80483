import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from osllab.field import make_catalog_field
from osllab.flow import (FLAG_OK, FlowError, UnsupportedOperation, backward_flow, compose_check, forward_flow,
                         left_inverse, lipschitz_violations, preimage_volume, verify_integral_equation)
from osllab.lattice import Lattice

SGN = make_catalog_field("sgn")


def test_oracle_flow_matches_closed_form():
    lat = Lattice.with_spacing(-2, 2, 0.5)
    fmap = backward_flow(SGN, 1.0, [0.0, 0.5], lat)
    assert fmap.method == "oracle"
    np.testing.assert_allclose(fmap.at(0.5)[:, 0], [-1.5, -1, -0.5, 0, 0, 0, 0.5, 1, 1.5])
    np.testing.assert_allclose(fmap.at(0.0)[:, 0], [-1, -0.5, 0, 0, 0, 0, 0, 0.5, 1])


def test_numeric_flow_within_two_steps():
    lat = Lattice.with_spacing(-2, 2, 0.01)
    fmap = backward_flow(SGN, 1.0, [0.0, 0.5], lat, dt=1e-3, method="numeric")
    assert fmap.diagnostics["oracle_error"] <= 2e-3
    assert fmap.diagnostics["growth_breaches"] == 0


def test_numeric_linear_flow_is_accurate():
    f = make_catalog_field("linear", [-1.0])
    lat = Lattice.with_spacing(-1, 1, 0.25)
    fmap = backward_flow(f, 1.0, [0.0], lat, dt=1e-2, method="numeric")
    np.testing.assert_allclose(fmap.at(0.0)[:, 0], lat.axes[0] * np.e, atol=1e-6)


def test_backward_flow_rejects_future_times():
    with pytest.raises(FlowError):
        backward_flow(SGN, 0.5, [0.7], [0.0])


@pytest.mark.parametrize("name,params", [("sgn", ()), ("powerlaw", (0.5,)), ("linear", (-1.0,))])
def test_lipschitz_bound_holds(name, params):
    f = make_catalog_field(name, params)
    fmap = backward_flow(f, 1.0, [0.0, 0.5], Lattice.with_spacing(-2, 2, 0.02), method="numeric")
    assert lipschitz_violations(fmap, n_pairs=2000)["violations"] == 0


def test_forward_sgn_flow_and_right_inverse():
    lat = Lattice.with_spacing(-2, 2, 1 / 64)
    fwd = forward_flow(SGN, 0.0, [0.5], lat)
    y = lat.axes[0]
    ok = fwd.flag_at(0.5) == FLAG_OK
    away = ok & (np.abs(y) > 1e-12)
    np.testing.assert_allclose(fwd.at(0.5)[away, 0], y[away] + 0.5 * np.sign(y[away]), atol=1e-12)
    back = SGN.flow_oracle(0.0, 0.5, fwd.at(0.5)[ok])
    np.testing.assert_allclose(back[:, 0], y[ok], atol=1e-12)


def test_forward_integral_equation_off_the_branch_point():
    lat = Lattice.with_spacing(-1, 1, 1 / 32)
    fwd = forward_flow(SGN, 0.0, np.linspace(0, 1, 51), lat, dt=1e-2)
    assert verify_integral_equation(fwd, skip_kinks=True) <= 2e-2


def test_semigroup_defects():
    lat = Lattice.with_spacing(-2, 2, 1 / 32)
    back = backward_flow(SGN, 1.0, [0.0, 0.4, 1.0], lat)
    assert compose_check(back, 0.0, 0.4, 1.0) <= 1e-12
    fwd = forward_flow(SGN, 0.0, [0.0, 0.3, 0.8], lat)
    assert compose_check(fwd, 0.0, 0.3, 0.8) <= 2 * lat.spacing


def test_left_inverse_is_refused():
    with pytest.raises(UnsupportedOperation):
        left_inverse()


def test_preimage_ratio_for_linear_contraction():
    f = make_catalog_field("linear", [-1.0])
    fmap = forward_flow(f, 0.0, [0.5], Lattice.with_spacing(-3, 3, 1e-3))
    rep = preimage_volume(fmap, [((0.2,), (0.6,))])
    assert rep.bound == pytest.approx(np.exp(0.5))
    assert rep.ratio == pytest.approx(np.exp(0.5), rel=1e-2)
    with pytest.raises(FlowError):
        preimage_volume(backward_flow(f, 1.0, [0.0], [0.0]), [((0,), (1,))])


def test_flow_map_csv(tmp_path):
    fmap = backward_flow(SGN, 1.0, [0.0], Lattice.with_spacing(-1, 1, 1.0))
    fmap.to_csv(tmp_path / "flow.csv")
    lines = (tmp_path / "flow.csv").read_text().splitlines()
    assert lines[0] == "t,x1,phi1,flag"
    assert lines[1] == "0.0,-1.0,-0.0,0"


@settings(max_examples=25, deadline=None)
@given(r=st.floats(0.0, 1.0), a=st.floats(0.0, 1.0), b=st.floats(0.0, 1.0))
def test_oracle_semigroup_property(r, a, b):
    s, t = sorted([r + a, r + a + b])[0], r + a + b
    x = np.linspace(-3, 3, 41)[:, None]
    for f in (SGN, make_catalog_field("powerlaw", [0.5])):
        two = f.flow_oracle(r, s, f.flow_oracle(s, t, x))
        np.testing.assert_allclose(two, f.flow_oracle(r, t, x), atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-3, 3), y=st.floats(-3, 3), gap=st.floats(0, 2))
def test_sgn_backward_flow_is_contractive(x, y, gap):
    phi = SGN.flow_oracle(0.0, gap, np.array([[x], [y]]))[:, 0]
    assert abs(phi[0] - phi[1]) <= abs(x - y) + 1e-12
