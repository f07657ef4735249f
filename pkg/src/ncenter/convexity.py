"""Geodesic convexity of boundary curves for the Jacobi metric at energy h.

A boundary point q with inner unit normal nu and geodesic curvature kappa
(both for the metric g |dq|^2) is convex when

    <grad V, nu> + 2 kappa (h - V) >= 0.

For the conformal metric g = exp(2 phi) this reads, in Euclidean terms,

    (grad V . n + 2 (h - V) (k - grad g . n / (2 g))) / sqrt(g)

with n the Euclidean inner normal and k the Euclidean curvature.  All
verdicts are sample based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.interpolate import CubicSpline

from .classify import excise_strong, strength_sum
from .jacobi import DiscreteCurve
from .model import Disk, PolygonDomain, Problem, potential_and_gradient

DEFAULT_SAMPLES = 1024


@dataclass
class ConvexityReport:
    min_margin: float
    samples: int
    passed: bool
    worst_point: tuple[float, float]
    method: str = "sampled"

    @property
    def convex(self) -> bool:
        return self.passed

    def to_json(self) -> dict:
        return {
            "min_margin": self.min_margin,
            "samples": self.samples,
            "pass": bool(self.passed),
            "worst_point": list(self.worst_point),
            "method": self.method,
        }


def _margins(problem: Problem, q: np.ndarray, n: np.ndarray, kappa: np.ndarray) -> np.ndarray:
    V, gV = potential_and_gradient(problem, q)
    g = problem.conformal_factor(q)
    gg = problem.conformal_factor.gradient(q)
    h = problem.energy
    kg = kappa - np.sum(gg * n, axis=-1) / (2 * g)
    return (np.sum(gV * n, axis=-1) + 2 * (h - V) * kg) / np.sqrt(g)


def _report(q: np.ndarray, m: np.ndarray, method: str = "sampled") -> ConvexityReport:
    i = int(np.argmin(m))
    mn = float(m[i])
    return ConvexityReport(mn, int(len(m)), mn >= 0, (float(q[i, 0]), float(q[i, 1])), method)


def _segments_intersect(v: np.ndarray) -> bool:
    """True when two non-adjacent edges of the closed polygon v cross."""
    p, q = v, np.roll(v, -1, axis=0)
    N = len(v)

    def orient(a, b, c):
        return np.sign((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))

    P1, P2 = p[:, None], q[:, None]
    Q1, Q2 = p[None, :], q[None, :]
    o1, o2 = orient(P1, P2, Q1), orient(P1, P2, Q2)
    o3, o4 = orient(Q1, Q2, P1), orient(Q1, Q2, P2)
    cross = (o1 * o2 < 0) & (o3 * o4 < 0)
    i, j = np.triu_indices(N, k=2)
    adjacent = (i == 0) & (j == N - 1)
    return bool(np.any(cross[i[~adjacent], j[~adjacent]]))


def boundary_convexity(problem: Problem, boundary: DiscreteCurve | np.ndarray,
                       samples: int = DEFAULT_SAMPLES) -> ConvexityReport:
    """Sampled convexity margin of a closed curve bounding a region, via a periodic cubic spline.

    The curve is reoriented counterclockwise, so nu points into the enclosed
    region (into the ball for a circle around a center).
    """
    v = boundary.vertices if isinstance(boundary, DiscreteCurve) else np.asarray(boundary, dtype=float)
    if len(v) < 4:
        raise ValueError("boundary needs at least 4 vertices")
    if _segments_intersect(v):
        raise ValueError("boundary curve is self-intersecting")
    x, y = v[:, 0], v[:, 1]
    if 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) < 0:
        v = v[::-1]
    closed = np.vstack([v, v[:1]])
    s = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(closed, axis=0), axis=1))]
    spline = CubicSpline(s, closed, bc_type="periodic")
    t = np.linspace(0.0, s[-1], samples, endpoint=False)
    q = spline(t)
    d1 = spline(t, 1)
    d2 = spline(t, 2)
    speed = np.linalg.norm(d1, axis=1)
    tangent = d1 / speed[:, None]
    n = np.c_[-tangent[:, 1], tangent[:, 0]]
    kappa = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed**3
    return _report(q, _margins(problem, q, n, kappa))


def circle_margins(problem: Problem, center, radius: float, samples: int = DEFAULT_SAMPLES) -> tuple[np.ndarray, np.ndarray]:
    """Exact-geometry margins on a circle (inner normal towards its center)."""
    t = 2 * np.pi * np.arange(samples) / samples
    u = np.c_[np.cos(t), np.sin(t)]
    q = np.asarray(center, dtype=float) + radius * u
    return q, _margins(problem, q, -u, np.full(samples, 1.0 / radius))


def disk_convexity(problem: Problem, R: float, samples: int = DEFAULT_SAMPLES) -> ConvexityReport:
    """Margin 2 (h - V) - <grad V, q> on |q| = R (R times the boundary margin; equal to it for g = 1 up to that factor)."""
    R = float(R)
    if problem.n and np.any(np.linalg.norm(problem.positions, axis=1) >= R):
        raise ValueError("every center must lie strictly inside |q| < R")
    q, m = circle_margins(problem, (0.0, 0.0), R, samples)
    return _report(q, R * m, "disk")


def ball_convexity_sign(alpha) -> str:
    a = alpha if isinstance(alpha, Fraction) else float(alpha)
    if not a > 0:
        raise ValueError("order must be positive")
    if a < 2:
        return "convex"
    if a > 2:
        return "concave"
    return "critical"


def ball_convexity(problem: Problem, j: int, epsilon: float, samples: int = DEFAULT_SAMPLES) -> ConvexityReport:
    """Spline-sampled margin on the circle of radius epsilon about center j (0-based)."""
    a = problem.positions[j]
    t = 2 * np.pi * np.arange(samples) / samples
    circle = a + epsilon * np.c_[np.cos(t), np.sin(t)]
    return boundary_convexity(problem, DiscreteCurve(circle), samples)


def ball_margin_scale(problem: Problem, j: int, epsilon: float) -> float:
    """Leading-order margin (2 - alpha) m eps**(-alpha - 1) on the epsilon-circle about center j."""
    s = problem.singularities[j]
    al = float(s.order)
    return (2 - al) * s.mass * epsilon ** (-al - 1)


def domain_convexity(problem: Problem, samples: int = DEFAULT_SAMPLES) -> ConvexityReport:
    """Convexity of the problem's own domain boundary.

    Disks use exact circle geometry; polygon edges have zero curvature and
    their (convex) corners are skipped.
    """
    dom = problem.domain
    if isinstance(dom, Disk):
        q, m = circle_margins(problem, dom.center, dom.radius, samples)
        return _report(q, m, "disk")
    if isinstance(dom, PolygonDomain):
        v = dom.vertices
        w = np.roll(v, -1, axis=0)
        L = np.linalg.norm(w - v, axis=1)
        per = np.maximum(2, np.ceil(samples * L / L.sum()).astype(int))
        qs, ns = [], []
        for a, b, k in zip(v, w, per):
            s = (np.arange(k) + 0.5) / k
            qs.append(a + s[:, None] * (b - a))
            tng = (b - a) / np.linalg.norm(b - a)
            ns.append(np.tile([-tng[1], tng[0]], (k, 1)))
        q, n = np.vstack(qs), np.vstack(ns)
        return _report(q, _margins(problem, q, n, np.zeros(len(q))), "polygon")
    raise TypeError(f"unsupported domain {type(dom).__name__}")


@dataclass
class ConvexRadius:
    radius: float
    method: str  # "disk" or "variational"
    report: ConvexityReport | None = None
    diagnostics: dict = field(default_factory=dict)

    def __float__(self) -> float:
        return self.radius

    def to_json(self) -> dict:
        return {
            "radius": self.radius,
            "method": self.method,
            "report": self.report.to_json() if self.report else None,
            "diagnostics": self.diagnostics,
        }


class ConvexityError(RuntimeError):
    pass


def find_convex_radius(problem: Problem, R_min: float | None = None, R_max: float | None = None,
                       samples: int = DEFAULT_SAMPLES, rtol: float = 1e-6,
                       variational_fallback: bool = True) -> ConvexRadius:
    """Least sampled R >= R_min passing the disk criterion (doubling, then bisection).

    If no R up to R_max passes, minimizes the Jacobi length in the class of a
    loop around every center and returns that curve's circumscribed radius.
    """
    reach = float(np.max(np.linalg.norm(problem.positions, axis=1))) if problem.n else 0.0
    if R_min is None:
        R_min = max(1.05 * reach, 1e-3) if reach > 0 else 1.0
    if R_max is None:
        R_max = max(1e4 * R_min, 1e3)
    R_min = max(float(R_min), reach * (1 + 1e-9) + 1e-12)

    def ok(R):
        return disk_convexity(problem, R, samples).passed

    lo, hi = None, R_min
    while hi <= R_max and not ok(hi):
        lo, hi = hi, 2 * hi
    if hi <= R_max:
        if lo is not None:
            while hi - lo > rtol * hi:
                mid = 0.5 * (lo + hi)
                lo, hi = (lo, mid) if ok(mid) else (mid, hi)
        return ConvexRadius(hi, "disk", disk_convexity(problem, hi, samples))
    diag = {"disk_search": f"no passing radius in [{R_min:.6g}, {R_max:.6g}]"}
    if variational_fallback and problem.n:
        try:
            return _variational_fence(problem, reach, diag)
        except Exception as exc:  # noqa: BLE001 - reported with the disk diagnostics
            diag["variational"] = str(exc)
    raise ConvexityError(f"no geodesically convex disk or variational fence found: {diag}")


def _variational_fence(problem: Problem, reach: float, diag: dict) -> ConvexRadius:
    from .homotopy import word_of_curve
    from .minimize import MinimizeOptions, minimize_in_class

    center = problem.positions.mean(axis=0)
    radius = max(1.5 * float(np.max(np.linalg.norm(problem.positions - center, axis=1))), 1e-3)
    res = max(64, 16 * problem.n)
    t = 2 * np.pi * np.arange(res) / res
    loop = center + radius * np.c_[np.cos(t), np.sin(t)]
    word = word_of_curve(DiscreteCurve(loop), problem)
    result = minimize_in_class(problem, word, MinimizeOptions(resolution=res, check_convexity=False), initial=loop)
    if result.collision_flags:
        raise ConvexityError(f"fence minimizer collided with centers {sorted(result.collision_flags)}")
    R = float(np.max(np.linalg.norm(result.curve.vertices, axis=1)))
    diag["fence_length"] = result.length
    diag["fence_word"] = str(word)
    return ConvexRadius(R, "variational", None, diag)


@dataclass(frozen=True)
class Excision:
    strength_sum: Fraction
    euler_char: int
    strength_sum_excised: Fraction
    euler_char_excised: int
    removed: tuple[int, ...]  # 0-based centers of order >= 2

    @property
    def identity_holds(self) -> bool:
        return self.strength_sum - 2 * self.euler_char == self.strength_sum_excised - 2 * self.euler_char_excised


def excise_strong_balls(problem: Problem, euler_char: int | None = None) -> Excision:
    """D' = D minus small balls about centers of order >= 2, with A and chi updated.

    Order-2 centers are removed too, so that A drops by 2 per ball as the
    n_infinity count requires; their balls are critical rather than concave.
    """
    chi = problem.domain.euler_char if euler_char is None else int(euler_char)
    orders = [s.order for s in problem.singularities]
    _, A2, chi2 = excise_strong(orders, chi)
    removed = tuple(j for j, a in enumerate(orders) if ball_convexity_sign(a) != "convex")
    return Excision(strength_sum(orders), chi, A2, chi2, removed)


def sign_stable_range(problem: Problem, j: int, eps_values=None, samples: int = 256) -> list[tuple[float, float]]:
    """(epsilon, min margin) along a decreasing epsilon sweep about center j."""
    if eps_values is None:
        sep = problem.min_center_separation() if problem.n > 1 else 1.0
        eps_values = sep * np.logspace(-1, -6, 11)
    out = []
    for eps in eps_values:
        out.append((float(eps), ball_convexity(problem, j, float(eps), samples).min_margin))
    return out


__all__ = [
    "ConvexityReport",
    "ConvexRadius",
    "ConvexityError",
    "Excision",
    "boundary_convexity",
    "disk_convexity",
    "domain_convexity",
    "ball_convexity",
    "ball_convexity_sign",
    "ball_margin_scale",
    "circle_margins",
    "find_convex_radius",
    "excise_strong_balls",
    "sign_stable_range",
]

