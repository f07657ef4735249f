"""Problem data for the generalized n-center problem in the plane.

The potential is

    V(q) = -sum_j m_j / |q - a_j|**alpha_j + U(q)

with a polynomial background ``U`` and a polynomial conformal factor ``g`` for
the kinetic metric ``g(q) |dq|**2``.  Everything here is vectorized over a
trailing axis of length 2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Sequence, Union

import numpy as np
from numpy.polynomial import polynomial as npoly

Order = Union[float, Fraction]

MAX_POLY_DEGREE = 8


class SingularityError(ValueError):
    """Raised when a quantity is evaluated exactly at a center."""


class ForbiddenRegionError(ValueError):
    """Raised when a point lies outside the region {V < h}."""


def parse_order(value: Any) -> Order:
    """Accept ``1``, ``1.5`` or ``"4/3"``; strings become exact fractions."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"invalid order {value!r}") from exc
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"invalid order {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    return float(value)


@dataclass(frozen=True)
class Singularity:
    position: tuple[float, float]
    mass: float
    order: Order

    def __post_init__(self):
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        object.__setattr__(self, "order", parse_order(self.order))
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not self.order > 0:
            raise ValueError(f"order must be positive, got {self.order}")

    @property
    def alpha(self) -> float:
        return float(self.order)


@dataclass(frozen=True)
class PhaseState:
    position: tuple[float, float]
    velocity: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        object.__setattr__(self, "velocity", (float(self.velocity[0]), float(self.velocity[1])))

    def as_array(self) -> np.ndarray:
        return np.array([*self.position, *self.velocity])


@dataclass(frozen=True)
class Poly2:
    """Bivariate polynomial sum c[i, j] x**i y**j."""

    coeffs: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if c.ndim != 2:
            raise ValueError("polynomial coefficients must be a 2-d table")
        if c.shape[0] - 1 + c.shape[1] - 1 > 2 * MAX_POLY_DEGREE or max(c.shape) > MAX_POLY_DEGREE + 1:
            raise ValueError(f"polynomial degree exceeds {MAX_POLY_DEGREE}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def constant(cls, value: float) -> "Poly2":
        return cls(np.array([[float(value)]]))

    @classmethod
    def linear(cls, c0: float, cx: float, cy: float) -> "Poly2":
        return cls(np.array([[c0, cy], [cx, 0.0]]))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    @property
    def is_constant(self) -> bool:
        c = self.coeffs.copy()
        c[0, 0] = 0.0
        return not np.any(c)

    def __call__(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return npoly.polyval2d(q[..., 0], q[..., 1], self.coeffs)

    def gradient(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.is_constant:
            return np.zeros(q.shape)
        dx = npoly.polyder(self.coeffs, axis=0) if self.coeffs.shape[0] > 1 else np.zeros((1, 1))
        dy = npoly.polyder(self.coeffs, axis=1) if self.coeffs.shape[1] > 1 else np.zeros((1, 1))
        return np.stack(
            [npoly.polyval2d(q[..., 0], q[..., 1], dx), npoly.polyval2d(q[..., 0], q[..., 1], dy)],
            axis=-1,
        )

    def to_json(self) -> dict:
        return {"coeffs": self.coeffs.tolist()}


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("disk radius must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    euler_char = 1

    def contains(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return np.hypot(q[..., 0] - self.center[0], q[..., 1] - self.center[1]) <= self.radius

    def boundary(self, samples: int) -> np.ndarray:
        t = 2 * np.pi * np.arange(samples) / samples
        return np.c_[self.center[0] + self.radius * np.cos(t), self.center[1] + self.radius * np.sin(t)]

    def bbox(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        r = self.radius
        return cx - r, cx + r, cy - r, cy + r

    def area(self) -> float:
        return math.pi * self.radius**2


@dataclass(frozen=True)
class PolygonDomain:
    """Convex region bounded by a closed counterclockwise polygon."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("polygon domain needs at least 3 planar vertices")
        if _signed_area(v) < 0:
            v = v[::-1]
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    euler_char = 1

    def contains(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        inside = np.ones(q.shape[:-1], dtype=bool)
        v = self.vertices
        for a, b in zip(v, np.roll(v, -1, axis=0)):
            cross = (b[0] - a[0]) * (q[..., 1] - a[1]) - (b[1] - a[1]) * (q[..., 0] - a[0])
            inside &= cross >= 0
        return inside

    def boundary(self, samples: int) -> np.ndarray:
        v = self.vertices
        closed = np.vstack([v, v[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        s = np.r_[0.0, np.cumsum(seg)]
        t = np.linspace(0.0, s[-1], samples, endpoint=False)
        return np.c_[np.interp(t, s, closed[:, 0]), np.interp(t, s, closed[:, 1])]

    def bbox(self) -> tuple[float, float, float, float]:
        v = self.vertices
        return v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max()

    def area(self) -> float:
        return _signed_area(self.vertices)


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


Domain = Union[Disk, PolygonDomain]


@dataclass(frozen=True)
class Problem:
    singularities: tuple[Singularity, ...] = ()
    background: Poly2 = field(default_factory=Poly2)
    conformal_factor: Poly2 = field(default_factory=lambda: Poly2.constant(1.0))
    energy: float = 1.0
    domain: Domain = field(default_factory=lambda: Disk((0.0, 0.0), 10.0))

    def __post_init__(self):
        sing = tuple(self.singularities)
        object.__setattr__(self, "singularities", sing)
        object.__setattr__(self, "energy", float(self.energy))
        pos = self.positions
        for i in range(len(pos)):
            for j in range(i + 1, len(pos)):
                if np.hypot(*(pos[i] - pos[j])) == 0:
                    raise ValueError(f"centers {i + 1} and {j + 1} coincide")

    @property
    def positions(self) -> np.ndarray:
        if not self.singularities:
            return np.zeros((0, 2))
        return np.array([s.position for s in self.singularities], dtype=float)

    @property
    def masses(self) -> np.ndarray:
        return np.array([s.mass for s in self.singularities], dtype=float)

    @property
    def orders(self) -> np.ndarray:
        return np.array([s.alpha for s in self.singularities], dtype=float)

    @property
    def n(self) -> int:
        return len(self.singularities)

    def min_center_separation(self) -> float:
        pos = self.positions
        if len(pos) < 2:
            return math.inf
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        d[np.diag_indices(len(pos))] = np.inf
        return float(d.min())

    def replace(self, **changes) -> "Problem":
        from dataclasses import replace

        return replace(self, **changes)


def _center_offsets(problem: Problem, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q = np.asarray(q, dtype=float)
    diff = q[..., None, :] - problem.positions
    r = np.hypot(diff[..., 0], diff[..., 1])
    if np.any(r == 0):
        raise SingularityError("evaluation at a singularity position")
    return diff, r


def singular_part(problem: Problem, q: np.ndarray) -> np.ndarray:
    """-sum m_j / r_j**alpha_j."""
    if problem.n == 0:
        return np.zeros(np.shape(q)[:-1])
    _, r = _center_offsets(problem, q)
    return -np.sum(problem.masses / r**problem.orders, axis=-1)


def potential_eval(problem: Problem, q) -> np.ndarray | float:
    q = np.asarray(q, dtype=float)
    v = singular_part(problem, q) + problem.background(q)
    return float(v) if q.ndim == 1 else v


def potential_gradient(problem: Problem, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    grad = problem.background.gradient(q)
    if problem.n:
        diff, r = _center_offsets(problem, q)
        # d/dq (-m r**-a) = a m r**(-a-2) (q - a_j)
        coef = problem.orders * problem.masses / r ** (problem.orders + 2)
        grad = grad + np.sum(coef[..., None] * diff, axis=-2)
    return grad


def potential_and_gradient(problem: Problem, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q = np.asarray(q, dtype=float)
    v = problem.background(q)
    grad = problem.background.gradient(q)
    if problem.n:
        diff, r = _center_offsets(problem, q)
        rp = r ** problem.orders
        v = v - np.sum(problem.masses / rp, axis=-1)
        coef = problem.orders * problem.masses / (rp * r * r)
        grad = grad + np.sum(coef[..., None] * diff, axis=-2)
    return v, grad


def hamiltonian(problem: Problem, q, v) -> np.ndarray | float:
    """Energy of a state; velocities are coordinate velocities, so |p|**2 = g |v|**2."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    kin = 0.5 * problem.conformal_factor(q) * np.sum(v * v, axis=-1)
    return kin + potential_eval(problem, q)


def energy_margin(problem: Problem, grid: int = 256, boundary_samples: int = 1024) -> float:
    """h minus the sampled maximum of V over the domain (grid plus boundary).

    The grid is not a certificate: V tends to -inf at every center, so the
    supremum sits away from them, but a narrow spike of U could be missed.
    """
    x0, x1, y0, y1 = problem.domain.bbox()
    xs, ys = np.meshgrid(np.linspace(x0, x1, grid), np.linspace(y0, y1, grid), indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel()], axis=-1)
    pts = pts[problem.domain.contains(pts)]
    pts = np.vstack([pts, problem.domain.boundary(boundary_samples)])
    if problem.n:
        r = np.linalg.norm(pts[:, None, :] - problem.positions, axis=-1)
        pts = pts[np.all(r > 0, axis=1)]
    vmax = float(np.max(potential_eval(problem, pts)))
    return problem.energy - vmax


def check_problem(problem: Problem, grid: int = 256) -> None:
    pos = problem.positions
    if len(pos) and not np.all(problem.domain.contains(pos)):
        raise ValueError("all centers must lie inside the domain")
    margin = energy_margin(problem, grid)
    if not margin > 0:
        raise ForbiddenRegionError(f"energy h={problem.energy} does not exceed sampled max V (margin {margin:.3g})")
    gvals = problem.conformal_factor(problem.domain.boundary(256))
    if np.any(gvals <= 0):
        raise ValueError("conformal factor must be positive on the domain")


_TOP_KEYS = {"centers", "U", "g", "h", "domain"}
_CENTER_KEYS = {"x", "y", "mass", "alpha"}


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise ValueError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")


def problem_from_dict(doc: dict, validate: bool = True) -> Problem:
    _check_keys(doc, _TOP_KEYS, "problem")
    centers = []
    for i, c in enumerate(doc.get("centers", [])):
        _check_keys(c, _CENTER_KEYS, f"centers[{i}]")
        centers.append(Singularity((c["x"], c["y"]), float(c.get("mass", 1.0)), parse_order(c.get("alpha", 1))))
    kwargs: dict[str, Any] = {"singularities": tuple(centers)}
    for key, name in (("U", "background"), ("g", "conformal_factor")):
        if key in doc:
            _check_keys(doc[key], {"coeffs"}, key)
            kwargs[name] = Poly2(np.asarray(doc[key]["coeffs"], dtype=float))
    if "h" not in doc:
        raise ValueError("problem: missing energy 'h'")
    kwargs["energy"] = float(doc["h"])
    if "domain" in doc:
        kwargs["domain"] = _domain_from_dict(doc["domain"])
    else:
        kwargs["domain"] = _default_disk(centers)
    problem = Problem(**kwargs)
    if validate:
        check_problem(problem)
    return problem


def _default_disk(centers: Sequence[Singularity]) -> Disk:
    if not centers:
        return Disk((0.0, 0.0), 10.0)
    pos = np.array([c.position for c in centers])
    mid = pos.mean(axis=0)
    rad = float(np.max(np.linalg.norm(pos - mid, axis=1)))
    return Disk((mid[0], mid[1]), 4.0 * max(rad, 1.0))


def _domain_from_dict(d: dict) -> Domain:
    kind = d.get("type") if isinstance(d, dict) else None
    if kind == "disk":
        _check_keys(d, {"type", "cx", "cy", "R"}, "domain")
        return Disk((d.get("cx", 0.0), d.get("cy", 0.0)), float(d["R"]))
    if kind == "polygon":
        _check_keys(d, {"type", "vertices"}, "domain")
        return PolygonDomain(np.asarray(d["vertices"], dtype=float))
    raise ValueError(f"domain: unsupported type {kind!r}")


def problem_to_dict(problem: Problem) -> dict:
    centers = []
    for s in problem.singularities:
        alpha: Any = str(s.order) if isinstance(s.order, Fraction) else s.order
        centers.append({"x": s.position[0], "y": s.position[1], "mass": s.mass, "alpha": alpha})
    dom = problem.domain
    if isinstance(dom, Disk):
        ddoc = {"type": "disk", "cx": dom.center[0], "cy": dom.center[1], "R": dom.radius}
    else:
        ddoc = {"type": "polygon", "vertices": dom.vertices.tolist()}
    return {
        "centers": centers,
        "U": problem.background.to_json(),
        "g": problem.conformal_factor.to_json(),
        "h": problem.energy,
        "domain": ddoc,
    }


def load_problem(path, validate: bool = True) -> Problem:
    with open(path) as fh:
        return problem_from_dict(json.load(fh), validate=validate)


def n_center(positions, masses=1.0, orders=1, energy=1.0, domain: Domain | None = None,
             background: Poly2 | None = None) -> Problem:
    """Convenience constructor for the plain n-center problem."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    k = len(positions)
    masses = np.broadcast_to(np.asarray(masses, dtype=float), (k,))
    if isinstance(orders, (list, tuple)):
        orders_seq = list(orders)
    else:
        orders_seq = [orders] * k
    sing = tuple(Singularity(tuple(p), float(m), a) for p, m, a in zip(positions, masses, orders_seq))
    if domain is None:
        domain = _default_disk(sing)
    return Problem(sing, background if background is not None else Poly2(), Poly2.constant(1.0), energy, domain)
