"""The Jacobi (Maupertuis) metric sqrt(2 (h - V) g) |dq| and its lengths.

Segments of a polygon are integrated with Gauss-Legendre rules.  A segment
that passes close to a center (closer than its own length) is split at the
closest point and each half is mapped with s = d sinh(u), which removes the
near-singularity; a segment that hits a center exactly uses
r = s**(2 / (2 - alpha)), which makes the endpoint integrand smooth.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize as sp_minimize

from .model import (
    Disk,
    ForbiddenRegionError,
    PolygonDomain,
    Problem,
    SingularityError,
    energy_margin,
    potential_and_gradient,
    potential_eval,
)

FAR_NODES = 10
NEAR_NODES = 10
NEAR_PANEL_WIDTH = 1.0
NEAR_RATIO = 1.0
APEX_PANELS = 12


@lru_cache(maxsize=None)
def gauss_legendre01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1) / 2, w / 2


@dataclass(frozen=True)
class DiscreteCurve:
    vertices: np.ndarray
    closed: bool = True
    collision_vertices: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 2:
            raise ValueError("a curve needs at least two planar vertices")
        step = np.diff(np.vstack([v, v[:1]]) if self.closed else v, axis=0)
        if np.any(np.all(step == 0, axis=1)):
            raise ValueError("consecutive vertices must be distinct")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "collision_vertices", frozenset(self.collision_vertices))

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.vertices
        if self.closed:
            return v, np.roll(v, -1, axis=0)
        return v[:-1], v[1:]

    def euclidean_length(self) -> float:
        p, q = self.segments()
        return float(np.sum(np.linalg.norm(q - p, axis=1)))

    def to_json(self) -> dict:
        return {"closed": self.closed, "vertices": self.vertices.tolist()}


def speed_factor(problem: Problem, q: np.ndarray) -> np.ndarray:
    """sqrt(2 (h - V(q)) g(q)), the Jacobi speed per unit coordinate speed."""
    q = np.asarray(q, dtype=float)
    kin = 2.0 * (problem.energy - potential_eval(problem, q)) * problem.conformal_factor(q)
    if np.any(kin <= 0):
        raise ForbiddenRegionError("point outside the region {V < h}")
    return np.sqrt(kin)


def speed_factor_and_gradient(problem: Problem, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v, gv = potential_and_gradient(problem, q)
    g = problem.conformal_factor(q)
    kin = problem.energy - v
    if np.any(kin * g <= 0):
        raise ForbiddenRegionError("point outside the region {V < h}")
    n = np.sqrt(2.0 * kin * g)
    if problem.conformal_factor.is_constant:
        grad = -g[..., None] * gv / n[..., None]
    else:
        gg = problem.conformal_factor.gradient(q)
        grad = (-g[..., None] * gv + kin[..., None] * gg) / n[..., None]
    return n, grad


def jacobi_speed(problem: Problem, q, v) -> float:
    """Length of the tangent vector v at q in the Jacobi metric."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    return speed_factor(problem, q) * np.linalg.norm(v, axis=-1)


# ---------------------------------------------------------------- segments


def _closest(problem: Problem, p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closest-point parameter and distance of every center to every segment, shape (m, n)."""
    a = problem.positions
    d = q - p
    L2 = np.sum(d * d, axis=1)
    rel = a[None, :, :] - p[:, None, :]
    proj = np.einsum("mnk,mk->mn", rel, d)
    # a zero-length segment is its own closest point
    t = np.clip(np.divide(proj, L2[:, None], out=np.zeros_like(proj), where=L2[:, None] > 0), 0.0, 1.0)
    foot = p[:, None, :] + t[..., None] * d[:, None, :]
    dist = np.linalg.norm(foot - a[None, :, :], axis=-1)
    return t, dist


def _far_rule(problem: Problem, p: np.ndarray, q: np.ndarray, with_grad: bool):
    s, w = gauss_legendre01(FAR_NODES)
    d = q - p
    L = np.linalg.norm(d, axis=1)
    x = p[:, None, :] + s[None, :, None] * d[:, None, :]
    if not with_grad:
        n = speed_factor(problem, x)
        return L * (n @ w), None, None
    n, gn = speed_factor_and_gradient(problem, x)
    avg = n @ w
    u = d / L[:, None]
    gp = -u * avg[:, None] + L[:, None] * np.einsum("k,mkd->md", w * (1 - s), gn)
    gq = u * avg[:, None] + L[:, None] * np.einsum("k,mkd->md", w * s, gn)
    return L * avg, gp, gq


def _speed_off_center(problem: Problem, j: int, x: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Speed factor at points x whose distance to center j is s (exact, unlike |x - a_j| near the apex)."""
    v = problem.background(x)
    for i, c in enumerate(problem.singularities):
        if i == j:
            v = v - c.mass / s ** float(c.order)
        else:
            v = v - c.mass / np.hypot(x[:, 0] - c.position[0], x[:, 1] - c.position[1]) ** float(c.order)
    return np.sqrt(np.maximum(2.0 * (problem.energy - v) * problem.conformal_factor(x), 0.0))


def _anchored_piece(problem: Problem, anchor: np.ndarray, direction: np.ndarray, length: float,
                    dist: float, alpha: float, center: int = -1) -> float:
    """Integral of the speed factor from `anchor` along a unit direction over `length`.

    `dist` is the distance from the anchor to the nearest center (the anchor
    is the foot of the perpendicular, or the center itself when dist == 0).
    """
    if length <= 0:
        return 0.0
    if dist == 0.0:
        if alpha >= 2:
            return math.inf
        p = 2.0 / (2.0 - alpha)
        # s = L v**p leaves a v**(p alpha) term, not smooth unless p alpha is an integer: grade towards 0
        v0, w0 = gauss_legendre01(NEAR_NODES)
        edges = np.r_[0.0, 4.0 ** -np.arange(APEX_PANELS - 1, -1, -1)]
        h = np.diff(edges)
        v = (edges[:-1, None] + h[:, None] * v0[None, :]).ravel()
        w = (h[:, None] * w0[None, :]).ravel()
        s = length * v**p
        ds = p * length * v ** (p - 1)
        ok = s > 0
        x = anchor + s[ok, None] * direction
        return float(np.sum(w[ok] * ds[ok] * _speed_off_center(problem, center, x, s[ok])))
    umax = math.asinh(length / dist)
    panels = max(1, math.ceil(umax / NEAR_PANEL_WIDTH))
    v, w = gauss_legendre01(NEAR_NODES)
    edges = np.linspace(0.0, umax, panels + 1)
    h = np.diff(edges)
    u = (edges[:-1, None] + h[:, None] * v[None, :]).ravel()
    wu = (h[:, None] * w[None, :]).ravel()
    s = dist * np.sinh(u)
    ds = dist * np.cosh(u)
    x = anchor + s[:, None] * direction
    return float(np.sum(wu * ds * speed_factor(problem, x)))


def _near_segment(problem: Problem, p: np.ndarray, q: np.ndarray, depth: int = 0) -> float:
    d = q - p
    L = float(np.hypot(*d))
    if L == 0:
        return 0.0
    t, dist = _closest(problem, p[None], q[None])
    t, dist = t[0], dist[0]
    near = np.nonzero(dist < NEAR_RATIO * L)[0]
    if len(near) == 0:
        return float(_far_rule(problem, p[None], q[None], False)[0][0])
    if len(near) > 1 and depth < 40:
        ts = np.sort(t[near])
        if ts[-1] - ts[0] > 1e-12:
            cut = 0.5 * (ts[0] + ts[1]) if ts[1] - ts[0] > 1e-12 else 0.5 * (ts[0] + ts[-1])
            mid = p + cut * d
            return _near_segment(problem, p, mid, depth + 1) + _near_segment(problem, mid, q, depth + 1)
    j = near[np.argmin(dist[near])]
    u = d / L
    foot = p + t[j] * d
    alpha = float(problem.orders[j])
    return _anchored_piece(problem, foot, -u, t[j] * L, dist[j], alpha, j) + _anchored_piece(
        problem, foot, u, (1 - t[j]) * L, dist[j], alpha, j
    )


def segment_lengths(problem: Problem, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Jacobi length of each straight segment p[i] -> q[i]."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    out = np.empty(len(p))
    near = _near_mask(problem, p, q)
    far = ~near
    if np.any(far):
        out[far] = _far_rule(problem, p[far], q[far], False)[0]
    for i in np.nonzero(near)[0]:
        out[i] = _near_segment(problem, p[i], q[i])
    return out


def _near_mask(problem: Problem, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    if problem.n == 0:
        return np.zeros(len(p), dtype=bool)
    _, dist = _closest(problem, p, q)
    L = np.linalg.norm(q - p, axis=1)
    return np.any(dist < NEAR_RATIO * L[:, None], axis=1)


def segment_lengths_and_gradients(problem: Problem, p: np.ndarray, q: np.ndarray,
                                  fd_step: float = 1e-7) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Segment lengths with their gradients with respect to both endpoints.

    Far segments use the differentiated Gauss rule; near segments fall back
    to central differences of the graded rule.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    m = len(p)
    vals = np.empty(m)
    gp = np.empty((m, 2))
    gq = np.empty((m, 2))
    near = _near_mask(problem, p, q)
    far = ~near
    if np.any(far):
        vals[far], gp[far], gq[far] = _far_rule(problem, p[far], q[far], True)
    for i in np.nonzero(near)[0]:
        a, b = p[i], q[i]
        vals[i] = _near_segment(problem, a, b)
        L = float(np.hypot(*(b - a)))
        dist = float(np.min(np.linalg.norm(problem.positions - a, axis=1)))
        distb = float(np.min(np.linalg.norm(problem.positions - b, axis=1)))
        for k in range(2):
            e = np.zeros(2)
            hstep = fd_step * max(min(L, dist), 1e-12)
            e[k] = hstep
            gp[i, k] = (_near_segment(problem, a + e, b) - _near_segment(problem, a - e, b)) / (2 * hstep)
            hstep = fd_step * max(min(L, distb), 1e-12)
            e[k] = hstep
            gq[i, k] = (_near_segment(problem, a, b + e) - _near_segment(problem, a, b - e)) / (2 * hstep)
    return vals, gp, gq


def polyline_length_and_gradient(problem: Problem, vertices: np.ndarray, closed: bool) -> tuple[float, np.ndarray]:
    v = np.asarray(vertices, dtype=float)
    if closed:
        p, q = v, np.roll(v, -1, axis=0)
    else:
        p, q = v[:-1], v[1:]
    vals, gp, gq = segment_lengths_and_gradients(problem, p, q)
    grad = np.zeros_like(v)
    if closed:
        grad += gp + np.roll(gq, 1, axis=0)
    else:
        grad[:-1] += gp
        grad[1:] += gq
    return float(np.sum(vals)), grad


def curve_length(problem: Problem, curve: DiscreteCurve) -> float:
    """Jacobi length J of a polygonal curve; +inf if it ends on a center of order >= 2."""
    v = curve.vertices
    if problem.n:
        r = np.linalg.norm(v[:, None, :] - problem.positions[None], axis=-1)
        hit = np.nonzero(np.any(r == 0, axis=1))[0]
        bad = [int(i) for i in hit if int(i) not in curve.collision_vertices]
        if bad:
            raise SingularityError(f"vertex {bad[0]} sits on a center but is not flagged as a collision endpoint")
        if len(hit):
            cols = np.nonzero(r[hit] == 0)[1]
            if np.any(problem.orders[cols] >= 2):
                return math.inf
    p, q = curve.segments()
    return float(np.sum(segment_lengths(problem, p, q)))


# ---------------------------------------------------------------- distance


@dataclass
class DistanceEstimate:
    value: float
    lower_bound: float
    path: np.ndarray
    converged: bool
    warning: str | None = None


def lower_speed_bound(problem: Problem) -> float:
    """c with J(gamma) >= c * Euclidean length on the domain (sampled)."""
    margin = energy_margin(problem, grid=128, boundary_samples=512)
    x0, x1, y0, y1 = problem.domain.bbox()
    xs, ys = np.meshgrid(np.linspace(x0, x1, 64), np.linspace(y0, y1, 64))
    pts = np.c_[xs.ravel(), ys.ravel()]
    gmin = float(np.min(problem.conformal_factor(pts[problem.domain.contains(pts)])))
    return math.sqrt(max(2.0 * margin * gmin, 0.0))


def jacobi_distance(problem: Problem, x, y, resolution: int = 32, max_iterations: int = 2000,
                    lower_speed: float | None = None) -> DistanceEstimate:
    """Upper estimate of rho(x, y) by minimizing over polygons with `resolution` vertices."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c = lower_speed_bound(problem) if lower_speed is None else lower_speed
    lb = c * float(np.hypot(*(y - x)))
    if np.allclose(x, y, rtol=0, atol=0):
        return DistanceEstimate(0.0, 0.0, np.array([x, y]), True)
    resolution = max(int(resolution), 2)
    t = np.linspace(0.0, 1.0, resolution)
    d = y - x
    normal = np.array([-d[1], d[0]])
    # a small bow keeps interior vertices off any center on the chord
    path = x + t[:, None] * d + (1e-3 * np.sin(np.pi * t))[:, None] * normal
    if resolution == 2:
        val = curve_length(problem, DiscreteCurve(path, closed=False))
        return DistanceEstimate(val, lb, path, True)

    def fun(flat):
        full = np.vstack([x, flat.reshape(-1, 2), y])
        try:
            val, grad = polyline_length_and_gradient(problem, full, closed=False)
        except (SingularityError, ForbiddenRegionError):
            return math.inf, np.zeros_like(flat)
        return val, grad[1:-1].ravel()

    res = sp_minimize(fun, path[1:-1].ravel(), jac=True, method="L-BFGS-B",
                      options={"maxiter": max_iterations, "ftol": 1e-15, "gtol": 1e-10})
    best = np.vstack([x, res.x.reshape(-1, 2), y])
    value = float(res.fun)
    warning = None
    if not res.success and res.status != 0:
        warning = f"distance minimization stopped: {res.message}"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return DistanceEstimate(value, lb, best, res.success, warning)


# ---------------------------------------------------------------- area


def _boundary_distance(domain, origin: np.ndarray, theta: np.ndarray) -> np.ndarray:
    u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    if isinstance(domain, Disk):
        b = origin - np.asarray(domain.center)
        bu = u @ b
        return -bu + np.sqrt(bu * bu - b @ b + domain.radius**2)
    v = domain.vertices
    best = np.full(theta.shape, np.inf)
    for a, c in zip(v, np.roll(v, -1, axis=0)):
        e = c - a
        # origin + r u = a + s e
        det = u[:, 0] * (-e[1]) - u[:, 1] * (-e[0])
        rhs = a - origin
        with np.errstate(divide="ignore", invalid="ignore"):
            r = (rhs[0] * (-e[1]) - rhs[1] * (-e[0])) / det
            s = (u[:, 0] * rhs[1] - u[:, 1] * rhs[0]) / det
        ok = (np.abs(det) > 1e-300) & (r > 0) & (s >= -1e-12) & (s <= 1 + 1e-12)
        best = np.where(ok & (r < best), r, best)
    return best


def _theta_breaks(domain, origin: np.ndarray) -> np.ndarray:
    if isinstance(domain, PolygonDomain):
        d = domain.vertices - origin
        return np.sort(np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * np.pi))
    return np.array([0.0])


def _polar_integral(domain, origin: np.ndarray, radial, n_theta: int, n_r: int) -> float:
    """Integral over the domain of radial(r, theta) dr dtheta in polar coordinates about `origin`.

    `radial` receives arrays of r and theta (same shape) and must already
    include the Jacobian r.  Theta is split at polygon vertex directions.
    """
    breaks = _theta_breaks(domain, origin)
    edges = np.r_[breaks, breaks[0] + 2 * np.pi]
    sr, wr = gauss_legendre01(n_r)
    st, wt = gauss_legendre01(n_theta)
    total = 0.0
    for t0, t1 in zip(edges[:-1], edges[1:]):
        if t1 - t0 <= 0:
            continue
        theta = t0 + (t1 - t0) * st
        R = _boundary_distance(domain, origin, theta)
        r = R[:, None] * sr[None, :]
        th = np.broadcast_to(theta[:, None], r.shape)
        vals = radial(r, th, R[:, None])
        total += (t1 - t0) * float(np.sum(wt[:, None] * wr[None, :] * vals))
    return total


def jacobi_area(problem: Problem, rtol: float = 1e-10, max_level: int = 6) -> float:
    """Area of the domain in the Jacobi metric, the integral of 2 (h - V) g.

    Diverges (returns inf) when any center has order >= 2.  The smooth part
    is integrated in polar coordinates about an interior point; each singular
    term m r**-alpha g is integrated in polar coordinates about its own
    center with r = R v**(1 / (2 - alpha)), which removes the r**(1 - alpha)
    endpoint behaviour.  Node counts double until successive values agree.
    """
    if problem.n and np.any(problem.orders >= 2):
        return math.inf
    dom = problem.domain
    origin = np.asarray(dom.center if isinstance(dom, Disk) else dom.vertices.mean(axis=0), dtype=float)
    g = problem.conformal_factor
    U = problem.background
    h = problem.energy

    def smooth(r, th, R):
        pts = np.stack([origin[0] + r * np.cos(th), origin[1] + r * np.sin(th)], axis=-1)
        return 2.0 * (h - U(pts)) * g(pts) * r * R

    def singular(j):
        a = problem.positions[j]
        m = problem.masses[j]
        alpha = problem.orders[j]
        p = 1.0 / (2.0 - alpha)

        def f(r_lin, th, R):
            # r_lin = R v, so v = r_lin / R in [0, 1]
            v = r_lin / R
            r = R * v**p
            pts = np.stack([a[0] + r * np.cos(th), a[1] + r * np.sin(th)], axis=-1)
            # int_0^R m g r^(1-alpha) dr = m R^(2-alpha) p int_0^1 g dv
            return 2.0 * m * g(pts) * p * R ** (2.0 - alpha)

        return a, f

    prev = None
    n_t, n_r = 32, 16
    for _ in range(max_level):
        total = _polar_integral(dom, origin, smooth, n_t, n_r)
        for j in range(problem.n):
            a, f = singular(j)
            total += _polar_integral(dom, a, f, n_t, n_r)
        if prev is not None and abs(total - prev) <= rtol * abs(total):
            return total
        prev = total
        n_t, n_r = 2 * n_t, 2 * n_r
    return total
