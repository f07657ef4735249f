from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncenter.model import (
    Disk,
    ForbiddenRegionError,
    PhaseState,
    PolygonDomain,
    Poly2,
    Problem,
    Singularity,
    SingularityError,
    check_problem,
    hamiltonian,
    n_center,
    parse_order,
    potential_and_gradient,
    potential_eval,
    potential_gradient,
    problem_from_dict,
    problem_to_dict,
)


def test_parse_order_exact_and_float():
    assert parse_order("4/3") == Fraction(4, 3)
    assert parse_order(1) == 1
    assert isinstance(parse_order(0.5), float)
    with pytest.raises(ValueError):
        parse_order("abc")


def test_potential_two_center_value(two_center):
    q = np.array([0.0, 1.0])
    assert potential_eval(two_center, q) == pytest.approx(-2 / np.sqrt(2), rel=1e-14)


def test_potential_at_center_raises(two_center):
    with pytest.raises(SingularityError):
        potential_eval(two_center, np.array([1.0, 0.0]))


def test_gradient_matches_finite_difference(triangle, rng):
    q = rng.uniform(-0.5, 0.5, size=(20, 2)) + 0.05
    g = potential_gradient(triangle, q)
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (potential_eval(triangle, q + e) - potential_eval(triangle, q - e)) / (2 * h)
        np.testing.assert_allclose(g[:, k], fd, rtol=1e-6, atol=1e-7)
    v, g2 = potential_and_gradient(triangle, q)
    np.testing.assert_allclose(g2, g)
    np.testing.assert_allclose(v, potential_eval(triangle, q))


def test_background_and_conformal_factor():
    U = Poly2.linear(0.5, 0.1, -0.2)
    p = Problem((Singularity((0.0, 0.0), 1.0, 1),), background=U, energy=2.0, domain=Disk((0.0, 0.0), 2.0))
    q = np.array([0.3, 0.4])
    assert potential_eval(p, q) == pytest.approx(-1 / 0.5 + 0.5 + 0.03 - 0.08)
    assert hamiltonian(p, q, np.array([1.0, 0.0])) == pytest.approx(0.5 + potential_eval(p, q))


def test_forbidden_region_rejected():
    # h below U somewhere in the domain
    p = Problem((Singularity((0.0, 0.0), 1.0, 1),), background=Poly2.constant(5.0), energy=1.0,
                domain=Disk((0.0, 0.0), 10.0))
    with pytest.raises(ForbiddenRegionError):
        check_problem(p)


def test_json_round_trip(triangle):
    doc = problem_to_dict(triangle)
    back = problem_from_dict(doc)
    assert problem_to_dict(back) == doc
    np.testing.assert_array_equal(back.positions, triangle.positions)


def test_unknown_keys_rejected():
    doc = {"centers": [{"x": 0, "y": 0, "mass": 1, "alpha": 1}], "h": 1.0, "colour": "red"}
    with pytest.raises(ValueError):
        problem_from_dict(doc)


def test_polygon_domain_contains():
    dom = PolygonDomain(((0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)))
    assert dom.contains(np.array([[1.0, 1.0]]))[0]
    assert not dom.contains(np.array([[3.0, 1.0]]))[0]
    assert dom.area() == pytest.approx(4.0)


def test_phase_state_array():
    s = PhaseState((1.0, 2.0), (3.0, 4.0))
    np.testing.assert_array_equal(s.as_array(), [1, 2, 3, 4])


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.1, 2.0), st.floats(-3, 3), st.floats(-3, 3))
def test_potential_scaling_single_center(alpha, m, x, y):
    # V(a + t d) = t^-alpha V(a + d) for a single power-law center and U = 0
    if np.hypot(x, y) < 1e-2:
        return
    p = n_center([[0.0, 0.0]], m, alpha, 1.0, Disk((0.0, 0.0), 100.0))
    q = np.array([x, y])
    assert potential_eval(p, 2 * q) == pytest.approx(2.0 ** (-alpha) * potential_eval(p, q), rel=1e-12)
