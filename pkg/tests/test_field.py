import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from osllab.field import (FieldError, OSLConstants, TabulatedField, VelocityField, envelope, make_catalog_field,
                          mollify, osl_audit, pair_sampler)


def test_sgn_values_and_constants():
    f = make_catalog_field("sgn")
    np.testing.assert_array_equal(f(0.0, [[-0.5], [0.0], [2.0]])[:, 0], [-1.0, 0.0, 1.0])
    assert f.constants.c1(0.3) == 0.0
    assert f.constants.c0(0.3) == 1.0
    assert f.smoothness == "discontinuous"


def test_powerlaw_default_coefficient():
    f = make_catalog_field("powerlaw", [0.5])
    assert f.params == (0.5, 2.0)
    assert f(0.0, [[0.25]])[0, 0] == pytest.approx(1.0)
    g = make_catalog_field("powerlaw", [0.5, 1.0])
    assert g(0.0, [[-0.25]])[0, 0] == pytest.approx(-0.5)


def test_linear_osl_rate():
    assert make_catalog_field("linear", [-1.5]).constants.c1(0.0) == 1.5
    assert make_catalog_field("linear", [2.0]).constants.c1(0.0) == 0.0


@pytest.mark.parametrize("name,params", [("sgn", [1.0]), ("powerlaw", [1.5]), ("powerlaw", []),
                                         ("linear", []), ("zero", [2.0]), ("vortex", [])])
def test_bad_catalog_requests(name, params):
    with pytest.raises(FieldError):
        make_catalog_field(name, params)


def test_sgn_flow_oracle_formula():
    f = make_catalog_field("sgn")
    pts = np.array([[0.3], [-1.0], [0.4], [2.0]])
    np.testing.assert_allclose(f.flow_oracle(0.0, 0.4, pts)[:, 0], [0.0, -0.6, 0.0, 1.6])
    np.testing.assert_array_equal(f.jacobian_oracle(0.0, 0.4, pts), [0.0, 1.0, 1.0, 1.0])


def test_powerlaw_flow_oracle_formula():
    # sqrt|x| moves at unit speed, so phi_{0,0.5}(1) = (1 - 0.5)^2
    f = make_catalog_field("powerlaw", [0.5])
    assert f.flow_oracle(0.0, 0.5, np.array([[1.0]]))[0, 0] == pytest.approx(0.25)
    assert f.jacobian_oracle(0.0, 0.5, np.array([[1.0]]))[0] == pytest.approx(0.5)


def test_sgn_envelope_at_the_jump():
    f = make_catalog_field("sgn")
    assert envelope(f, 0.0, [0.0], [1.0], "lower") == -1.0
    assert envelope(f, 0.0, [0.0], [1.0], "upper") == 1.0
    assert envelope(f, 0.0, [0.5], [2.0], "upper") == 2.0


def test_mollified_sgn():
    m = mollify(make_catalog_field("sgn"), 0.1)
    vals = m(0.0, [[-0.2], [0.0], [0.05], [0.1], [0.3]])[:, 0]
    assert vals[1] == pytest.approx(0.0, abs=1e-14)
    assert vals[0] == pytest.approx(-1.0)
    assert vals[3] == pytest.approx(1.0)
    assert 0.0 < vals[2] < 1.0
    assert m.constants.c1(0.0) == 0.0
    assert m.has_gradient


@pytest.mark.parametrize("name,params", [("sgn", ()), ("powerlaw", (0.5,)), ("linear", (-1.0,)),
                                         ("linear", (1.0,)), ("zero", ())])
def test_catalog_passes_osl_audit(name, params):
    f = make_catalog_field(name, params)
    assert osl_audit(f, pair_sampler(4000, -3, 3, 1, seed=5, horizon=1.0)).passed


def test_mollified_field_keeps_osl_rate():
    m = mollify(make_catalog_field("sgn", (), 2), 0.2)
    assert osl_audit(m, pair_sampler(500, -1, 1, 2, seed=2, horizon=1.0), tol=1e-10).passed


def test_audit_catches_understated_rates():
    # b = -2x has c1 = 2; claiming c1 = 1 must fail
    f = VelocityField(1, lambda t, x: -2.0 * x, OSLConstants.constant(2.0, 1.0, 1.0), "smooth")
    rep = osl_audit(f, pair_sampler(200, -3, 3, 1, seed=1, horizon=1.0))
    assert rep.max_osl_violation == pytest.approx(1.0)
    assert not rep.passed


def test_tabulated_field_matches_base():
    base = mollify(make_catalog_field("sgn"), 1 / 16)
    tab = TabulatedField(base, -3.0, 3.0, 1 / 1024)
    xs = np.linspace(-2.9, 2.9, 777)[:, None]
    np.testing.assert_allclose(tab(0.0, xs), base(0.0, xs), atol=1e-7)
    far = np.array([[5.0], [-4.0]])
    np.testing.assert_array_equal(tab(0.0, far), base(0.0, far))


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(0.1, 0.9), x=st.floats(-3, 3), y=st.floats(-3, 3))
def test_powerlaw_is_one_sided_lipschitz(alpha, x, y):
    f = make_catalog_field("powerlaw", [alpha])
    bx, by = f(0.0, [[x]])[0, 0], f(0.0, [[y]])[0, 0]
    assert (bx - by) * (x - y) >= -1e-12


@settings(max_examples=30, deadline=None)
@given(eps=st.floats(0.01, 0.5), x=st.floats(-2, 2))
def test_mollified_sgn_is_odd_and_bounded(eps, x):
    m = mollify(make_catalog_field("sgn"), eps)
    a, b = m(0.0, [[x], [-x]])[:, 0]
    assert a == pytest.approx(-b, abs=1e-12)
    assert abs(a) <= 1 + 1e-12
    if abs(x) >= eps:
        assert a == pytest.approx(math.copysign(1.0, x))
