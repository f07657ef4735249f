"""Time-parametrized trajectories: reparametrized geodesics and direct integration of Newton's equation.

The configuration metric is g |dq|^2, so H = g |v|^2 / 2 + V and the
equation of motion is

    q'' = -grad V / g - (2 (grad phi . v) v - |v|^2 grad phi),  phi = log(g) / 2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import make_interp_spline

from .jacobi import DiscreteCurve, gauss_legendre01
from .model import ForbiddenRegionError, PhaseState, Problem, SingularityError, potential_and_gradient, potential_eval

DEFAULT_TOLERANCE = 1e-10
MAX_TIGHTENINGS = 3
SPLINE_DEGREE = 5


@dataclass
class Trajectory:
    t: np.ndarray
    q: np.ndarray
    v: np.ndarray
    energy_target: float
    tolerance: float = 1e-8
    collision: int | None = None  # 1-based center index
    status: str = "ok"  # ok | collision | step_failure
    period: float | None = None  # set for closed orbits from geodesic_to_trajectory
    dense: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.q = np.asarray(self.q, dtype=float).reshape(-1, 2)
        self.v = np.asarray(self.v, dtype=float).reshape(-1, 2)
        if not (len(self.t) == len(self.q) == len(self.v)):
            raise ValueError("t, q and v must have the same length")
        dt = np.diff(self.t)
        if len(dt) and not (np.all(dt > 0) or np.all(dt < 0)):
            raise ValueError("sample times must be strictly monotone")

    @property
    def samples(self) -> list[tuple[float, PhaseState]]:
        return [(float(t), PhaseState(q, v)) for t, q, v in zip(self.t, self.q, self.v)]

    def energies(self, problem: Problem) -> np.ndarray:
        kin = 0.5 * problem.conformal_factor(self.q) * np.sum(self.v * self.v, axis=1)
        return kin + potential_eval(problem, self.q)

    def energy_deviation(self, problem: Problem) -> float:
        return float(np.max(np.abs(self.energies(problem) - self.energy_target)))

    def state(self, i: int = -1) -> PhaseState:
        return PhaseState(self.q[i], self.v[i])

    def to_csv(self, problem: Problem, path) -> None:
        H = self.energies(problem)
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "vx", "vy", "H"])
            for row in zip(self.t, self.q[:, 0], self.q[:, 1], self.v[:, 0], self.v[:, 1], H):
                w.writerow([repr(float(x)) for x in row])

    def to_json(self) -> dict:
        return {
            "samples": int(len(self.t)),
            "duration": float(self.t[-1] - self.t[0]) if len(self.t) else 0.0,
            "energy_target": self.energy_target,
            "collision": self.collision,
            "status": self.status,
        }


def acceleration(problem: Problem, q: np.ndarray, v: np.ndarray) -> np.ndarray:
    _, gV = potential_and_gradient(problem, q)
    g = problem.conformal_factor(q)
    a = -gV / np.asarray(g)[..., None]
    if not problem.conformal_factor.is_constant:
        gphi = problem.conformal_factor.gradient(q) / (2 * np.asarray(g)[..., None])
        a = a - (2 * np.sum(gphi * v, axis=-1)[..., None] * v - np.sum(v * v, axis=-1)[..., None] * gphi)
    return a


# ------------------------------------------------------------ geodesic -> trajectory


def geodesic_to_trajectory(problem: Problem, curve: DiscreteCurve, refine: int = 4,
                           min_clearance: float | None = None) -> Trajectory:
    """Traverse the curve at the energy-h speed |q'|_g = sqrt(2 (h - V)).

    The curve is interpolated by a quintic spline in Euclidean arclength (periodic
    for closed curves; a cubic's second derivative error would swamp the
    residual check at desk resolution), sampled `refine` times per original segment, and time
    is accumulated with dt = sqrt(g) ds / sqrt(2 (h - V)).
    """
    v = curve.vertices
    if len(v) < 4:
        raise ValueError("curve needs at least 4 vertices")
    h = problem.energy
    sep = problem.min_center_separation() if problem.n > 1 else 1.0
    clearance = 1e-6 * sep if min_clearance is None else min_clearance
    pts = np.vstack([v, v[:1]]) if curve.closed else v
    s = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))]
    if np.any(np.diff(s) == 0):
        raise ValueError("curve has repeated consecutive vertices")
    spline = make_interp_spline(s, pts, k=SPLINE_DEGREE, bc_type="periodic" if curve.closed else None)
    m = (len(s) - 1) * refine
    sp = np.linspace(0.0, s[-1], m + (0 if curve.closed else 1), endpoint=not curve.closed)
    q = spline(sp)
    if problem.n:
        d = np.linalg.norm(q[:, None, :] - problem.positions[None], axis=-1)
        if np.min(d) <= clearance:
            j = int(np.argmin(np.min(d, axis=0)))
            raise SingularityError(f"curve comes within {np.min(d):.3g} of center {j + 1}")

    def speed(x):
        V = potential_eval(problem, x)
        if np.any(V >= h):
            raise ForbiddenRegionError("curve leaves the region V < h")
        return np.sqrt(2 * (h - V) / problem.conformal_factor(x))

    # time increments by Gauss-Legendre on each sampled piece
    nodes, wts = gauss_legendre01(8)
    edges = np.r_[sp, s[-1]] if curve.closed else sp
    a, b = edges[:-1], edges[1:]
    ss = a[:, None] + (b - a)[:, None] * nodes[None]
    dq = spline(ss, 1)
    inv = np.linalg.norm(dq, axis=-1) / speed(spline(ss))
    dt = (b - a) * (inv @ wts)
    t = np.r_[0.0, np.cumsum(dt)][: len(sp)]
    tangent = spline(sp, 1)
    tangent /= np.linalg.norm(tangent, axis=1)[:, None]
    vel = tangent * speed(q)[:, None]
    period = float(np.sum(dt)) if curve.closed else None
    return Trajectory(t, q, vel, h, tolerance=1e-8 * max(1.0, abs(h)), period=period)


# ------------------------------------------------------------ integration


def _rhs(problem: Problem):
    def f(_t, y):
        q, v = y[:2], y[2:]
        return np.r_[v, acceleration(problem, q, v)]

    return f


def integrate_newton(problem: Problem, initial: PhaseState, duration: float,
                     tolerance: float = DEFAULT_TOLERANCE, delta: float | None = None,
                     max_step: float = np.inf) -> Trajectory:
    """DOP853 (order 8 with embedded 5/3 error estimates) from `initial` for `duration` (negative runs backwards).

    Stops with a collision flag when the position enters a delta-ball about
    a center.  If |H - H(0)| exceeds 10 tolerance |duration| the run is
    repeated with a tenfold tighter tolerance, up to three times.
    """
    y0 = initial.as_array()
    if problem.n:
        d0 = np.linalg.norm(problem.positions - y0[:2], axis=1)
        if np.any(d0 == 0):
            raise SingularityError("initial position is a center")
    sep = problem.min_center_separation() if problem.n > 1 else 1.0
    delta = 1e-6 * (sep if math.isfinite(sep) else 1.0) if delta is None else float(delta)
    H0 = float(problem.conformal_factor(y0[:2]) * (y0[2] ** 2 + y0[3] ** 2) / 2 + potential_eval(problem, y0[:2]))

    events = []
    for j, a in enumerate(problem.positions):
        def ev(_t, y, a=a):
            return math.hypot(y[0] - a[0], y[1] - a[1]) - delta

        ev.terminal = True
        ev.direction = -1
        events.append(ev)

    budget = 10 * tolerance * max(abs(duration), 1.0)
    tol = tolerance
    for _ in range(MAX_TIGHTENINGS + 1):
        sol = solve_ivp(_rhs(problem), (0.0, float(duration)), y0, method="DOP853", rtol=tol,
                        atol=tol * 1e-2, events=events or None, dense_output=True, max_step=max_step)
        traj = Trajectory(sol.t, sol.y[:2].T, sol.y[2:].T, H0, tolerance=budget, dense=sol.sol)
        if sol.status == 1:
            hit = [j for j, te in enumerate(sol.t_events) if len(te)]
            traj.collision = hit[0] + 1 if hit else None
            traj.status = "collision"
        elif sol.status == -1:
            traj.status = "step_failure"
        drift = traj.energy_deviation(problem)
        if drift <= budget or traj.status != "ok" or tol < 1e-15:
            return traj
        tol = max(tol / 10, 2.3e-16)
    return traj


def jacobi_action(problem: Problem, traj: Trajectory, nodes: int = 8) -> float:
    """Integral of 2 (h - V) dt along the dense output (the Jacobi length of the path)."""
    if traj.dense is None:
        raise ValueError("trajectory has no dense output")
    x, w = gauss_legendre01(nodes)
    a, b = traj.t[:-1], traj.t[1:]
    tt = a[:, None] + (b - a)[:, None] * x[None]
    q = traj.dense(tt.ravel())[:2].T
    val = 2 * (traj.energy_target - potential_eval(problem, q)).reshape(tt.shape)
    return float(np.sum((b - a) * (val @ w)))


def path_jacobi_length(problem: Problem, traj: Trajectory, points_per_step: int = 16) -> float:
    """Jacobi length of the integrated path, from the speed sqrt(2 (h - V) g) |q'| on the dense output."""
    if traj.dense is None:
        raise ValueError("trajectory has no dense output")
    x, w = gauss_legendre01(points_per_step)
    a, b = traj.t[:-1], traj.t[1:]
    tt = (a[:, None] + (b - a)[:, None] * x[None]).ravel()
    y = traj.dense(tt)
    q, v = y[:2].T, y[2:].T
    sp = np.sqrt(2 * (traj.energy_target - potential_eval(problem, q)) * problem.conformal_factor(q))
    sp = (sp * np.linalg.norm(v, axis=1)).reshape(-1, points_per_step)
    return float(np.sum(np.abs(b - a) * (sp @ w)))


# ------------------------------------------------------------ residual


def _hermite_second_derivative(t: np.ndarray, q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """q'' at the middle of each consecutive triple from the quintic Hermite interpolant of (t, q, v)."""
    t0, t1, t2 = t[:-2], t[1:-1], t[2:]
    tau = np.stack([t0 - t1, np.zeros_like(t1), t2 - t1], axis=1)  # (M, 3)
    M = len(t1)
    A = np.zeros((M, 6, 6))
    powers = np.arange(6)
    for i in range(3):
        A[:, 2 * i, :] = tau[:, i, None] ** powers
        A[:, 2 * i + 1, 1:] = powers[1:] * tau[:, i, None] ** (powers[1:] - 1)
    rhs = np.empty((M, 6, 2))
    rhs[:, 0::2] = np.stack([q[:-2], q[1:-1], q[2:]], axis=1)
    rhs[:, 1::2] = np.stack([v[:-2], v[1:-1], v[2:]], axis=1)
    coef = np.linalg.solve(A, rhs)
    return 2 * coef[:, 2]


def newton_residual(problem: Problem, traj: Trajectory) -> float:
    """sup over interior samples of |a_fd - a_newton| / (1 + |grad V / g|)."""
    if len(traj.t) < 5:
        raise ValueError("need at least 5 samples")
    t, q, v = traj.t, traj.q, traj.v
    if traj.period is not None:
        # closed orbit: wrap one sample on each side
        P = traj.period
        t = np.r_[t[-1] - P, t, t[0] + P]
        q = np.vstack([q[-1:], q, q[:1]])
        v = np.vstack([v[-1:], v, v[:1]])
    a_fd = _hermite_second_derivative(t, q, v)
    qi, vi = q[1:-1], v[1:-1]
    a = acceleration(problem, qi, vi)
    _, gV = potential_and_gradient(problem, qi)
    scale = 1 + np.linalg.norm(gV / np.asarray(problem.conformal_factor(qi))[..., None], axis=1)
    return float(np.max(np.linalg.norm(a_fd - a, axis=1) / scale))


def write_orbit_csv(problem: Problem, traj: Trajectory, path) -> None:
    traj.to_csv(problem, path)
