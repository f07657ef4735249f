import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

import oracles
from ncenter.jacobi import (
    DiscreteCurve,
    curve_length,
    jacobi_area,
    jacobi_distance,
    jacobi_speed,
    polyline_length_and_gradient,
    segment_lengths,
    speed_factor,
)
from ncenter.model import Disk, Poly2, Problem, Singularity, SingularityError, n_center, potential_eval


def quad_segment(problem, p, q):
    p, q = np.asarray(p, float), np.asarray(q, float)
    L = float(np.hypot(*(q - p)))

    def f(t):
        z = p + t * (q - p)
        return math.sqrt(2 * (problem.energy - float(potential_eval(problem, z))) * float(problem.conformal_factor(z)))

    # t = u**4 from each end tames endpoint singularities up to order 1.5
    def half(a, sgn):
        return quad(lambda u: f(a + sgn * 0.5 * u**4) * 2 * u**3 if u > 0 else 0.0, 0, 1,
                    epsabs=1e-15, epsrel=1e-13, limit=400)[0]

    return L * (half(0.0, 1) + half(1.0, -1))


def test_speed_formula(two_center):
    q, v = np.array([0.2, 0.7]), np.array([0.3, -0.4])
    expected = math.sqrt(2 * (1 - float(potential_eval(two_center, q)))) * 0.5
    assert jacobi_speed(two_center, q, v) == pytest.approx(expected, rel=1e-14)


def test_conformal_factor_enters_metric():
    g = Poly2.constant(4.0)
    p = Problem((Singularity((0.0, 0.0), 1.0, 1),), conformal_factor=g, energy=1.0, domain=Disk((0.0, 0.0), 3.0))
    q = np.array([[1.0, 0.0]])
    assert speed_factor(p, q)[0] == pytest.approx(math.sqrt(2 * 2 * 4))


@settings(max_examples=40, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(0.05, 1.5), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_segment_length_matches_quad(x0, y0, x1, y1):
    p = n_center([[-1.0, 0.0], [1.0, 0.0]], 1.0, [1, 1.5], 1.0, Disk((0.0, 0.0), 4.0))
    a, b = np.array([x0, y0]), np.array([x1, max(y1, 0.05)])
    got = segment_lengths(p, a[None], b[None])[0]
    assert got == pytest.approx(quad_segment(p, a, b), rel=1e-9)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_radial_segment_into_center(alpha):
    p = n_center([[0.0, 0.0]], 1.0, alpha, 1.0, Disk((0.0, 0.0), 1.0))
    got = segment_lengths(p, np.array([[0.0, 0.0]]), np.array([[0.01, 0.0]]))[0]
    assert got == pytest.approx(oracles.radial_distance_quad(alpha, 0.01), rel=1e-9)


def test_polyline_gradient_matches_finite_difference(triangle, rng):
    v = 1.3 * np.c_[np.cos(np.linspace(0, 2 * np.pi, 24, endpoint=False)),
                    np.sin(np.linspace(0, 2 * np.pi, 24, endpoint=False))]
    v += rng.normal(scale=0.05, size=v.shape)
    val, grad = polyline_length_and_gradient(triangle, v, closed=True)
    assert val == pytest.approx(curve_length(triangle, DiscreteCurve(v)), rel=1e-12)
    h = 1e-6
    for i, k in [(0, 0), (5, 1), (17, 0), (23, 1)]:
        e = np.zeros_like(v)
        e[i, k] = h
        fd = (polyline_length_and_gradient(triangle, v + e, True)[0] - polyline_length_and_gradient(triangle, v - e, True)[0]) / (2 * h)
        assert grad[i, k] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_distance_between_bounds(two_center):
    est = jacobi_distance(two_center, [0.0, 1.0], [0.0, -1.0])
    chord = quad_segment(two_center, [0.0, 1.0], [0.0, -1.0])
    assert est.lower_bound <= est.value <= chord + 1e-9


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_distance_is_symmetric(two_center):
    a = jacobi_distance(two_center, [-2.0, 1.0], [2.0, 1.5]).value
    b = jacobi_distance(two_center, [2.0, 1.5], [-2.0, 1.0]).value
    assert a == pytest.approx(b, rel=1e-6)


def area_oracle(problem):
    """2 h |D| + sum_j 2 m_j int_0^{2 pi} rho_j(theta)^(2 - alpha) / (2 - alpha) dtheta on a disk, g = 1."""
    dom = problem.domain
    c = np.array(dom.center)
    total = 2 * problem.energy * math.pi * dom.radius**2
    for s in problem.singularities:
        a = np.array(s.position) - c
        al = float(s.order)

        def rho(t):
            u = np.array([math.cos(t), math.sin(t)])
            b = a @ u
            return -b + math.sqrt(b * b - (a @ a - dom.radius**2))

        total += 2 * s.mass * quad(lambda t: rho(t) ** (2 - al) / (2 - al), 0, 2 * math.pi, epsabs=1e-13, limit=200)[0]
    return total


def test_area_single_center_closed_form():
    p = n_center([[0.0, 0.0]], 1.0, 1, 1.0, Disk((0.0, 0.0), 2.0))
    assert jacobi_area(p) == pytest.approx(2 * math.pi * 4 + 2 * 2 * math.pi * 2, rel=1e-9)


def test_area_three_centers_matches_oracle(triangle):
    assert jacobi_area(triangle) == pytest.approx(area_oracle(triangle), rel=1e-8)


def test_area_moderate_center():
    p = n_center([[0.3, 0.1], [-0.5, 0.2]], [1.0, 0.5], [1, 1.5], 0.7, Disk((0.0, 0.0), 2.0))
    assert jacobi_area(p) == pytest.approx(area_oracle(p), rel=1e-7)


def test_area_diverges_for_strong_center():
    p = n_center([[0.0, 0.0], [1.0, 0.0]], 1.0, [1, 2], 1.0, Disk((0.5, 0.0), 3.0))
    assert math.isinf(jacobi_area(p))


def test_unflagged_vertex_on_center_rejected(two_center):
    with pytest.raises(SingularityError):
        curve_length(two_center, DiscreteCurve(np.array([[-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])))


def test_curve_through_vertex_at_center_is_finite(two_center):
    c = DiscreteCurve(np.array([[-1.0, 0.0], [1.0, 0.0]]), closed=True, collision_vertices=frozenset({0, 1}))
    # the inter-center segment traversed twice
    # distances to both centers in closed form, s = u**2 near each end
    f = lambda s: math.sqrt(2 * (1 + 1 / s + 1 / (2 - s)))  # noqa: E731
    half = quad(lambda u: f(u * u) * 2 * u if u > 0 else 2 * math.sqrt(2), 0, 1, epsabs=1e-15, epsrel=1e-14)[0]
    assert curve_length(two_center, c) == pytest.approx(4 * half, rel=1e-10)
