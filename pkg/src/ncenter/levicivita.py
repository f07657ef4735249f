"""Cone charts z = a_j + w**beta around a singularity of order alpha in (0, 2).

With beta = 2 / (2 - alpha) the pulled-back Jacobi metric is

    beta * sqrt(2 g(z) (m_j + |w|**(2 beta - 2) (h - U(z) - V_others(z)))) |dw|,

finite and positive at w = 0 (value c = beta sqrt(2 m_j g(a_j))).  The chart
angle 2 pi / beta covers a punctured neighbourhood once, so the chart is a
cone of total angle 2 pi / beta < 2 pi; the double cover is a cone of angle
4 pi / beta, smaller than 2 pi exactly when alpha > 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import minimize as sp_minimize

from .classify import classify_singularity
from .model import ForbiddenRegionError, Problem

MARGIN = 1.05


def beta_of_alpha(alpha) -> float | Fraction:
    if isinstance(alpha, Fraction):
        if not 0 < alpha < 2:
            raise ValueError(f"cone charts need 0 < alpha < 2, got {alpha}")
        return Fraction(2) / (2 - alpha)
    alpha = float(alpha)
    if not 0 < alpha < 2:
        raise ValueError(f"cone charts need 0 < alpha < 2, got {alpha}")
    return 2.0 / (2.0 - alpha)


def transformed_order(alpha, k: int):
    """Order of the singularity after pulling back by an order-k branched cover: 2 - k (2 - alpha)."""
    if k < 2 or int(k) != k:
        raise ValueError("cover order must be an integer >= 2")
    if isinstance(alpha, (Fraction, int)):
        return 2 - int(k) * (2 - Fraction(alpha))
    return 2.0 - k * (2.0 - float(alpha))


def cone_chord_bound(beta: float, epsilon: float) -> float:
    """Largest distance between boundary points of a flat cone of total angle 2 pi / beta and radius epsilon."""
    if not beta > 1:
        raise ValueError("beta must exceed 1")
    return 2.0 * epsilon * math.sin(math.pi / (2.0 * beta))


@dataclass(frozen=True)
class ConeChart:
    center_index: int
    beta: float
    epsilon: float
    order_k: int | None = None

    @property
    def total_angle(self) -> float:
        return 2 * math.pi / self.beta

    @property
    def w_radius(self) -> float:
        return self.epsilon ** (1.0 / self.beta)

    @classmethod
    def for_center(cls, problem: Problem, j: int, epsilon: float | None = None) -> "ConeChart":
        alpha = problem.singularities[j].order
        beta = float(beta_of_alpha(alpha))
        cls_ = classify_singularity(alpha)
        k = int(cls_.ladder_index) if cls_.regularizable else None
        eps = default_chart_radius(problem, j) if epsilon is None else float(epsilon)
        return cls(j, beta, eps, k)

    def to_base(self, problem: Problem, w, angle_offset: float = 0.0) -> np.ndarray:
        """z = a_j + w**beta, reading the angle of w as angle_offset + arg(w) with arg in (-pi, pi]."""
        w = np.asarray(w, dtype=float)
        r = np.hypot(w[..., 0], w[..., 1])
        th = angle_offset + np.arctan2(w[..., 1], w[..., 0])
        rb = r**self.beta
        a = problem.positions[self.center_index]
        return np.stack([a[0] + rb * np.cos(self.beta * th), a[1] + rb * np.sin(self.beta * th)], axis=-1)

    def to_chart(self, problem: Problem, z) -> np.ndarray:
        """Preimage with angle in (-pi / beta, pi / beta], the branch `to_base` reads back."""
        z = np.asarray(z, dtype=float) - problem.positions[self.center_index]
        r = np.hypot(z[..., 0], z[..., 1]) ** (1.0 / self.beta)
        th = np.arctan2(z[..., 1], z[..., 0]) / self.beta
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)


def _others_potential(problem: Problem, j: int, z: np.ndarray) -> np.ndarray:
    """U(z) plus the singular terms of every center except j."""
    out = problem.background(z)
    for i, s in enumerate(problem.singularities):
        if i == j:
            continue
        r = np.linalg.norm(z - problem.positions[i], axis=-1)
        out = out - s.mass / r ** float(s.order)
    return out


def pullback_factor(problem: Problem, chart: ConeChart, w, angle_offset: float = 0.0) -> np.ndarray:
    """Pulled-back speed per unit |dw| at chart points w (any shape (..., 2))."""
    w = np.asarray(w, dtype=float)
    r = np.hypot(w[..., 0], w[..., 1])
    if np.any(r > chart.w_radius * (1 + 1e-12)):
        raise ValueError("point outside the cone chart")
    j = chart.center_index
    z = chart.to_base(problem, w, angle_offset)
    m = problem.singularities[j].mass
    inner = m + r ** (2 * chart.beta - 2) * (problem.energy - _others_potential(problem, j, z))
    kin = 2.0 * problem.conformal_factor(z) * inner
    if np.any(kin <= 0):
        raise ForbiddenRegionError("chart point outside {V < h}")
    return chart.beta * np.sqrt(kin)


def pullback_speed(problem: Problem, chart: ConeChart, w, dw) -> np.ndarray:
    return pullback_factor(problem, chart, w) * np.linalg.norm(np.asarray(dw, dtype=float), axis=-1)


def apex_speed(problem: Problem, chart: ConeChart) -> float:
    """c = beta sqrt(2 m_j g(a_j))."""
    j = chart.center_index
    g0 = float(problem.conformal_factor(problem.positions[j]))
    return chart.beta * math.sqrt(2.0 * problem.singularities[j].mass * g0)


def default_chart_radius(problem: Problem, j: int, tolerance: float = 0.05, samples: int = 64) -> float:
    """Largest radius (halving from a quarter of the center spacing) with |speed / c - 1| <= tolerance.

    The deviation is sampled on a polar grid of the chart.
    """
    alpha = problem.singularities[j].order
    beta = float(beta_of_alpha(alpha))
    if problem.n > 1:
        eps = problem.min_center_separation() / 4
    else:
        eps = 0.25
    a = problem.positions[j]
    dom = problem.domain
    bd = dom.boundary(256)
    eps = min(eps, 0.5 * float(np.min(np.linalg.norm(bd - a, axis=1))))
    for _ in range(60):
        chart = ConeChart(j, beta, eps)
        c = apex_speed(problem, chart)
        rr = chart.w_radius * np.linspace(0.0, 1.0, samples)
        th = np.linspace(0.0, chart.total_angle, samples, endpoint=False)
        R, T = np.meshgrid(rr, th)
        w = np.stack([R * np.cos(T), R * np.sin(T)], axis=-1)
        try:
            dev = float(np.max(np.abs(pullback_factor(problem, chart, w) / c - 1.0)))
        except ForbiddenRegionError:
            dev = math.inf
        if dev <= tolerance:
            return eps
        eps /= 2
    raise RuntimeError("no chart radius meets the flatness tolerance")


# ------------------------------------------------------------ cone lemma


@dataclass
class ConeLemmaReport:
    max_ratio: float
    lam: float
    passed: bool
    ratios: np.ndarray
    epsilon: float
    beta: float
    doubled: bool

    def to_json(self) -> dict:
        return {
            "max_ratio": self.max_ratio,
            "lambda": self.lam,
            "pass": bool(self.passed),
            "epsilon": self.epsilon,
            "beta": self.beta,
            "doubled": self.doubled,
            "samples": int(len(self.ratios)),
        }


def radial_distance(problem: Problem, chart: ConeChart, theta: float, nodes: int = 96) -> float:
    """Jacobi distance from the chart boundary point at chart angle theta to the apex, along the ray.

    The ray is split geometrically towards the apex so the |w|**(2 beta - 2)
    term, which is not smooth at 0 for non-integer beta, is resolved.
    """
    u = np.array([math.cos(theta), math.sin(theta)])
    x, wts = np.polynomial.legendre.leggauss(nodes // 4)
    edges = chart.w_radius * np.r_[0.0, 1e-6, 1e-3, 0.1, 1.0]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        s = a + (b - a) * (x + 1) / 2
        total += (b - a) / 2 * float(wts @ pullback_factor(problem, chart, s[:, None] * u))
    return total


def chart_distance(problem: Problem, chart: ConeChart, w0: np.ndarray, w1: np.ndarray, nodes: int = 12,
                   angle_offset: float = 0.0) -> float:
    """Shortest chart path between two chart points, optimized as a polygon with `nodes` interior vertices.

    The points are given in a local unfolded frame (true chart angle =
    angle_offset + local angle) and must span a wedge narrower than pi; the
    path is kept inside the chart disk by radial clipping.
    """
    R = chart.w_radius
    t = np.linspace(0.0, 1.0, nodes + 2)
    init = w0 + t[:, None] * (w1 - w0)
    gl_x, gl_w = np.polynomial.legendre.leggauss(6)
    gl_x = (gl_x + 1) / 2
    gl_w = gl_w / 2

    def length(flat):
        inner = flat.reshape(-1, 2)
        r = np.hypot(inner[:, 0], inner[:, 1])
        scale = np.minimum(1.0, R / np.maximum(r, 1e-300))
        pts = np.vstack([w0, inner * scale[:, None], w1])
        d = np.diff(pts, axis=0)
        q = pts[:-1, None, :] + gl_x[None, :, None] * d[:, None, :]
        f = pullback_factor(problem, chart, q, angle_offset)
        return float(np.sum(np.linalg.norm(d, axis=1) * (f @ gl_w)))

    res = sp_minimize(length, init[1:-1].ravel(), method="L-BFGS-B", options={"maxiter": 500})
    return min(float(res.fun), length(init[1:-1].ravel()))


def verify_cone_lemma(problem: Problem, j: int, epsilon: float | None = None, samples: int = 100,
                      doubled: bool = False, rng: np.random.Generator | int | None = 0,
                      margin: float = MARGIN) -> ConeLemmaReport:
    """Check rho(x, y) < lambda (rho(x, a_j) + rho(a_j, y)) on random pairs of the epsilon-circle.

    Pairs are drawn on the chart circle (on its double cover when `doubled`),
    unfolded into one wedge, and the shortest path in the pulled-back metric
    is optimized there.  lambda = sin(pi / (2 beta)) for the single cone and
    sin(pi / beta) for the doubled cone, times `margin`.
    """
    alpha = problem.singularities[j].order
    if doubled and not float(alpha) > 1:
        raise ValueError("the doubled-cone estimate needs alpha > 1 (total angle 4 pi / beta < 2 pi)")
    chart = ConeChart.for_center(problem, j, epsilon)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    period = chart.total_angle * (2 if doubled else 1)
    R = chart.w_radius
    ratios = np.empty(samples)
    for i in range(samples):
        t0, t1 = rng.uniform(0.0, period, size=2)
        sep = abs(t1 - t0) % period
        sep = min(sep, period - sep)
        d0 = radial_distance(problem, chart, t0 % chart.total_angle)
        d1 = radial_distance(problem, chart, t1 % chart.total_angle)
        # unfold the shorter arc into a local wedge starting at angle 0
        direction = 1.0 if (t1 - t0) % period <= period / 2 else -1.0
        w0 = np.array([R, 0.0])
        w1 = R * np.array([math.cos(direction * sep), math.sin(direction * sep)])
        rho = chart_distance(problem, chart, w0, w1, angle_offset=t0 % chart.total_angle)
        ratios[i] = rho / (d0 + d1)
    lam = math.sin(math.pi / (chart.beta if doubled else 2 * chart.beta)) * margin
    mx = float(np.max(ratios))
    return ConeLemmaReport(mx, lam, mx < lam, ratios, chart.epsilon, chart.beta, doubled)
