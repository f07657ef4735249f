"""Minimal closed geodesics of the Jacobi metric in a fixed homotopy class.

The curve is a closed polygon.  Vertices close to a regularizable center
(order A_k, integer k >= 2) are stored in the chart coordinate w with
z = a + w**k; consecutive vertices in the same chart are joined by straight
segments in w, where the pulled-back metric is smooth, so the curve may press
against the center (a collision-reflection in the limit) without the length
functional becoming singular.  All other segments are straight in z.

Descent is L-BFGS with Armijo backtracking.  Every accepted step is checked
against the target word; a step that changes it is rejected and halved.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .classify import StrengthClass, classify_singularity
from .homotopy import (HomotopyWord, _closest_offset, enumerate_cyclic_words, is_trivial, reduce_word, seed_curve, word_from_offsets,
                       word_of_curve)
from .jacobi import DiscreteCurve, gauss_legendre01, segment_lengths_and_gradients
from .model import ForbiddenRegionError, Problem, SingularityError

CHART_NODES = 8
LBFGS_MEMORY = 10
ARMIJO = 1e-4
ANGLE_STEP = math.pi / 16
POLISH_STEPS = 6


class NonConvergenceError(RuntimeError):
    pass


@dataclass
class MinimizeOptions:
    resolution: int = 64
    max_iterations: int = 4000
    step_tolerance: float = 1e-9
    collision_guard_radius: float | Sequence[float] | None = None
    refinement_levels: int = 1
    seed: int = 0
    respace_every: int = 10
    window: int = 20
    use_charts: bool = True
    chart_radius: float | None = None
    time_limit: float | None = None
    check_convexity: bool = True


@dataclass
class GeodesicResult:
    curve: DiscreteCurve
    length: float
    word: HomotopyWord
    min_center_distance: dict[int, float]
    converged: bool
    collision_flags: set[int]
    history: list[float] = field(default_factory=list)
    level_lengths: list[float] = field(default_factory=list)
    level_min_distances: list[dict[int, float]] = field(default_factory=list)
    iterations: int = 0
    guard: dict[int, float] = field(default_factory=dict)
    dense: np.ndarray | None = None

    def to_json(self) -> dict:
        return {
            "word": str(self.word),
            "length": self.length,
            "closed": True,
            "vertices": self.curve.vertices.tolist(),
            "min_center_distance": {str(k): v for k, v in sorted(self.min_center_distance.items())},
            "converged": bool(self.converged),
            "collision_flags": sorted(self.collision_flags),
            "level_lengths": self.level_lengths,
        }


# ------------------------------------------------------------------ state


def _jt(D: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Transpose of the Jacobian of a holomorphic map with derivative D, applied to g."""
    p, q = D.real, D.imag
    return np.stack([p * g[:, 0] + q * g[:, 1], -q * g[:, 0] + p * g[:, 1]], axis=-1)


class _Polygon:
    """Vertex coordinates plus chart labels; pure functions of (x, chart)."""

    def __init__(self, problem: Problem, chart_centers: dict[int, tuple[int, float]]):
        self.problem = problem
        self.charts = chart_centers  # center -> (k, radius)
        self.pos = problem.positions
        n = problem.n
        self.k_of = np.ones(n, dtype=int)
        for c, (k, _) in chart_centers.items():
            self.k_of[c] = k

    # coordinates
    def to_z(self, x: np.ndarray, chart: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = x.copy()
        D = np.ones(len(x), dtype=complex)
        idx = np.nonzero(chart >= 0)[0]
        if len(idx):
            c = chart[idx]
            k = self.k_of[c]
            w = x[idx, 0] + 1j * x[idx, 1]
            zc = w**k
            z[idx, 0] = self.pos[c, 0] + zc.real
            z[idx, 1] = self.pos[c, 1] + zc.imag
            D[idx] = k * w ** (k - 1)
        return z, D

    def wseg_mask(self, chart: np.ndarray) -> np.ndarray:
        nxt = np.roll(chart, -1)
        return (chart >= 0) & (chart == nxt)

    # chart metric
    def chart_factor(self, c: int, w: np.ndarray, with_grad: bool):
        pr = self.problem
        k = int(self.k_of[c])
        a = self.pos[c]
        wc = w[..., 0] + 1j * w[..., 1]
        zc = wc**k
        z = np.stack([a[0] + zc.real, a[1] + zc.imag], axis=-1)
        E = pr.energy - pr.background(z)
        gradE = -pr.background.gradient(z) if with_grad else None
        for i, s in enumerate(pr.singularities):
            if i == c:
                continue
            d = z - self.pos[i]
            r2 = np.sum(d * d, axis=-1)
            al = float(s.order)
            E = E + s.mass * r2 ** (-al / 2)
            if with_grad:
                gradE = gradE - (al * s.mass * r2 ** (-al / 2 - 1))[..., None] * d
        r2w = w[..., 0] ** 2 + w[..., 1] ** 2
        sfac = r2w ** (k - 1)
        m = pr.singularities[c].mass
        F = m + sfac * E
        g = pr.conformal_factor(z)
        kin = 2.0 * g * F
        if np.any(kin <= 0):
            raise ForbiddenRegionError("chart point outside {V < h}")
        f = k * np.sqrt(kin)
        if not with_grad:
            return f, None
        D = k * wc ** (k - 1)
        shape = w.shape
        flatD = D.reshape(-1)
        grad_s = ((2 * k - 2) * r2w ** (k - 2))[..., None] * w if k > 1 else np.zeros_like(w)
        gE_w = _jt(flatD, gradE.reshape(-1, 2)).reshape(shape)
        gF = E[..., None] * grad_s + sfac[..., None] * gE_w
        if pr.conformal_factor.is_constant:
            gf = k * g[..., None] * gF / np.sqrt(kin)[..., None]
        else:
            gg = _jt(flatD, pr.conformal_factor.gradient(z).reshape(-1, 2)).reshape(shape)
            gf = k * (F[..., None] * gg + g[..., None] * gF) / np.sqrt(kin)[..., None]
        return f, gf

    def chart_segments(self, c: int, p: np.ndarray, q: np.ndarray, with_grad: bool):
        s, wt = gauss_legendre01(CHART_NODES)
        d = q - p
        L = np.linalg.norm(d, axis=1)
        pts = p[:, None, :] + s[None, :, None] * d[:, None, :]
        f, gf = self.chart_factor(c, pts, with_grad)
        avg = f @ wt
        if not with_grad:
            return L * avg, None, None
        u = d / np.maximum(L, 1e-300)[:, None]
        gp = -u * avg[:, None] + L[:, None] * np.einsum("k,mkd->md", wt * (1 - s), gf)
        gq = u * avg[:, None] + L[:, None] * np.einsum("k,mkd->md", wt * s, gf)
        return L * avg, gp, gq

    # length
    def segment_values(self, x: np.ndarray, chart: np.ndarray, with_grad: bool = True):
        N = len(x)
        z, D = self.to_z(x, chart)
        if not np.all(self.problem.domain.contains(z)):
            raise ForbiddenRegionError("vertex left the domain")
        wmask = self.wseg_mask(chart)
        nxt = (np.arange(N) + 1) % N
        vals = np.empty(N)
        grad = np.zeros_like(x)
        zi = np.nonzero(~wmask)[0]
        if len(zi):
            a, b = z[zi], z[nxt[zi]]
            if np.any(np.all(a == b, axis=1)):
                raise SingularityError("degenerate segment")
            v, gp, gq = segment_lengths_and_gradients(self.problem, a, b)
            vals[zi] = v
            if with_grad:
                np.add.at(grad, zi, _jt(D[zi], gp))
                np.add.at(grad, nxt[zi], _jt(D[nxt[zi]], gq))
        for c in np.unique(chart[wmask]):
            idx = np.nonzero(wmask & (chart == c))[0]
            v, gp, gq = self.chart_segments(int(c), x[idx], x[nxt[idx]], with_grad)
            vals[idx] = v
            if with_grad:
                np.add.at(grad, idx, gp)
                np.add.at(grad, nxt[idx], gq)
        return vals, grad

    # dense image
    def dense(self, x: np.ndarray, chart: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Polyline through the image curve and the curve parameter of each point.

        z-segments are exact as they stand.  A chart segment is sampled
        uniformly in its angle about w = 0, fine enough that each piece of its
        image turns by less than pi/8 about the center.
        """
        pts, param, _ = self.dense_offsets(x, chart)
        return pts, param

    def dense_offsets(self, x: np.ndarray, chart: np.ndarray):
        """dense() plus the offsets of every point from every center.

        Offsets of chart points from their own center are w**k exactly, which
        stays meaningful when z = a + w**k rounds to a.
        """
        N = len(x)
        z, _ = self.to_z(x, chart)
        wmask = self.wseg_mask(chart)
        if not np.any(wmask):
            return z, np.arange(N, dtype=float), self._offsets(z, x, chart)
        nxt = (np.arange(N) + 1) % N
        idx = np.nonzero(wmask)[0]
        p, q = x[idx], x[nxt[idx]]
        d = q - p
        L = np.linalg.norm(d, axis=1)
        u = d / L[:, None]
        tf = -np.sum(p * u, axis=1)  # foot of the perpendicular from w = 0, as arclength from p
        foot = p + tf[:, None] * u
        h = np.linalg.norm(foot, axis=1)
        if np.any(h == 0):
            raise SingularityError("chart segment passes through the center")
        psi_a = np.arctan2(-tf, h)
        psi_b = np.arctan2(L - tf, h)
        k = self.k_of[chart[idx]]
        m = np.clip(np.ceil(k * (psi_b - psi_a) / (ANGLE_STEP * 2)).astype(int), 1, 4096)
        counts = np.ones(N, dtype=int)
        counts[idx] = m
        seg = np.repeat(np.arange(N), counts)
        start = np.r_[0, np.cumsum(counts)[:-1]]
        j = np.arange(len(seg)) - start[seg]
        pts = z[seg].copy()
        param = seg.astype(float)
        pos_in = np.full(N, -1)
        pos_in[idx] = np.arange(len(idx))
        sel = (j > 0) & wmask[seg]
        r = pos_in[seg[sel]]
        frac = j[sel] / m[r]
        psi = psi_a[r] + frac * (psi_b[r] - psi_a[r])
        sarc = tf[r] + h[r] * np.tan(psi)
        w = p[r] + sarc[:, None] * u[r]
        c = chart[seg[sel]]
        wc = (w[:, 0] + 1j * w[:, 1]) ** self.k_of[c]
        pts[sel] = self.pos[c] + np.c_[wc.real, wc.imag]
        param[sel] = seg[sel] + sarc / L[r]
        wd = x[seg].copy()
        wd[sel] = w
        cd = np.where((j == 0) | sel, chart[seg], -1)
        return pts, param, self._offsets(pts, wd, cd)

    def _offsets(self, pts: np.ndarray, w: np.ndarray, owner: np.ndarray) -> np.ndarray:
        rel = pts[:, None, :] - self.pos[None, :, :]
        idx = np.nonzero(owner >= 0)[0]
        if len(idx):
            c = owner[idx]
            wc = (w[idx, 0] + 1j * w[idx, 1]) ** self.k_of[c]
            rel[idx, c] = np.c_[wc.real, wc.imag]
        return rel

    def sweeps(self, x: np.ndarray, chart: np.ndarray, c: int, z: np.ndarray | None = None) -> np.ndarray:
        """Signed angle swept about center c by each segment's image."""
        N = len(x)
        if z is None:
            z, _ = self.to_z(x, chart)
        nxt = (np.arange(N) + 1) % N
        ra = z - self.pos[c]
        rb = z[nxt] - self.pos[c]
        out = np.arctan2(ra[:, 0] * rb[:, 1] - ra[:, 1] * rb[:, 0], np.sum(ra * rb, axis=1))
        own = self.wseg_mask(chart) & (chart == c)
        if np.any(own):
            wa, wb = x[own], x[nxt[own]]
            out[own] = self.k_of[c] * np.arctan2(wa[:, 0] * wb[:, 1] - wa[:, 1] * wb[:, 0], np.sum(wa * wb, axis=1))
        return out


# ------------------------------------------------------------------ helpers


def _default_guard(problem: Problem) -> np.ndarray:
    sep = problem.min_center_separation() if problem.n > 1 else 1.0
    return np.full(problem.n, 1e-3 * sep)


def _guards(problem: Problem, opt: MinimizeOptions) -> np.ndarray:
    if opt.collision_guard_radius is None:
        g = _default_guard(problem)
    else:
        g = np.broadcast_to(np.asarray(opt.collision_guard_radius, dtype=float), (problem.n,)).copy()
    if problem.n > 1 and np.any(g >= problem.min_center_separation() / 2):
        raise ValueError("collision guard radius must stay below half the minimal center separation")
    return g


def _chart_setup(problem: Problem, opt: MinimizeOptions) -> dict[int, tuple[int, float]]:
    if not opt.use_charts:
        return {}
    sep = problem.min_center_separation() if problem.n > 1 else 1.0
    bd = problem.domain.boundary(512)
    out = {}
    for i, s in enumerate(problem.singularities):
        cls = classify_singularity(s.order)
        if not cls.regularizable:
            continue
        eps = opt.chart_radius if opt.chart_radius is not None else sep / 8
        eps = min(eps, 0.5 * float(np.min(np.linalg.norm(bd - problem.positions[i], axis=1))))
        out[i] = (int(cls.ladder_index), float(eps))
    return out


def _word_ok(poly: _Polygon, x, chart, target: HomotopyWord) -> bool:
    try:
        _, _, rel = poly.dense_offsets(x, chart)
        w = word_from_offsets(rel, poly.pos, closed=True)
    except (ValueError, SingularityError, RuntimeError):
        return False
    return w.same_cyclic_class(target)


def _min_distances(poly: _Polygon, x, chart) -> tuple[np.ndarray, np.ndarray]:
    pts, _, rel = poly.dense_offsets(x, chart)
    d = np.roll(rel, -1, axis=0) - rel
    L2 = np.maximum(np.sum(d * d, axis=-1), 1e-300)
    t = np.clip(-np.sum(rel * d, axis=-1) / L2, 0, 1)
    out = np.min(np.linalg.norm(_closest_offset(rel, rel + d, t), axis=-1), axis=0)
    # chart segments: closest approach of the straight w-segment to w = 0, raised to k
    wmask = poly.wseg_mask(chart)
    if np.any(wmask):
        idx = np.nonzero(wmask)[0]
        p, q = x[idx], x[(idx + 1) % len(x)]
        dd = q - p
        t = np.clip(-np.sum(p * dd, axis=1) / np.maximum(np.sum(dd * dd, axis=1), 1e-300), 0, 1)
        r = np.linalg.norm(_closest_offset(p, q, t), axis=1) ** poly.k_of[chart[idx]]
        for c in np.unique(chart[idx]):
            out[c] = min(out[c], float(np.min(r[chart[idx] == c])))
    return out, pts


def _respace(poly: _Polygon, x, chart, target: HomotopyWord, n_new: int | None = None):
    """Redistribute vertices uniformly in Jacobi arclength; returns None if the word would change.

    New vertices inside a chart get the w-branch that continues the angle of
    the old curve about that center, so each new chart segment turns the same
    way as the stretch of old curve it replaces.
    """
    N = len(x)
    n_new = N if n_new is None else n_new
    vals, _ = poly.segment_values(x, chart, with_grad=False)
    cum = np.r_[0.0, np.cumsum(vals)]
    targets = np.linspace(0.0, cum[-1], n_new, endpoint=False)
    i = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, N - 1)
    phi = np.clip((targets - cum[i]) / np.maximum(vals[i], 1e-300), 0.0, 1.0)
    z, _ = poly.to_z(x, chart)
    # old vertices that wrap tightly around a center are kept exactly, otherwise
    # a new chord could cut the corner across the center
    for a_idx in _anchors(poly, z):
        k_near = int(np.argmin(np.abs((targets - cum[a_idx] + cum[-1] / 2) % cum[-1] - cum[-1] / 2)))
        i[k_near], phi[k_near] = a_idx, 0.0
    nxt = (i + 1) % N
    wmask = poly.wseg_mask(chart)
    znew = z[i] + phi[:, None] * (z[nxt] - z[i])
    in_w = wmask[i]
    wv = x[i] + phi[:, None] * (x[nxt] - x[i])
    if np.any(in_w):
        c = chart[i[in_w]]
        wc = (wv[in_w, 0] + 1j * wv[in_w, 1]) ** poly.k_of[c]
        znew[in_w] = poly.pos[c] + np.c_[wc.real, wc.imag]
    keep = np.where(in_w | (phi < 0.5), chart[i], chart[nxt])

    xn = znew.copy()
    cn = np.full(n_new, -1)
    for c, (k, eps) in poly.charts.items():
        a = poly.pos[c]
        r = np.linalg.norm(znew - a, axis=1)
        inside = ((r < eps) | ((keep == c) & (r < 2 * eps))) & (cn < 0)
        if not np.any(inside):
            continue
        theta_v = np.r_[0.0, np.cumsum(poly.sweeps(x, chart, c, z))][:N] + math.atan2(z[0, 1] - a[1], z[0, 0] - a[0])
        sel = np.nonzero(inside)[0]
        ii = i[sel]
        ra = z[ii] - a
        rb = znew[sel] - a
        local = np.arctan2(ra[:, 0] * rb[:, 1] - ra[:, 1] * rb[:, 0], np.sum(ra * rb, axis=1))
        own = in_w[sel] & (chart[ii] == c)
        if np.any(own):
            wa, wb = x[ii[own]], wv[sel[own]]
            local[own] = k * np.arctan2(wa[:, 0] * wb[:, 1] - wa[:, 1] * wb[:, 0], np.sum(wa * wb, axis=1))
        theta = theta_v[ii] + local
        rw = r[sel] ** (1.0 / k)
        xn[sel] = np.c_[rw * np.cos(theta / k), rw * np.sin(theta / k)]
        cn[sel] = c
    if not _word_ok(poly, xn, cn, target):
        return None
    return xn, cn


def _local_normals(poly: _Polygon, x: np.ndarray, chart: np.ndarray) -> np.ndarray:
    """Unit normal at each vertex in that vertex's own coordinates.

    A neighbour in other coordinates is mapped into the vertex's chart on the
    root nearest the vertex.
    """
    N = len(x)
    z, _ = poly.to_z(x, chart)
    nb = []
    for j in ((np.arange(N) + 1) % N, (np.arange(N) - 1) % N):
        y = x[j].copy()
        for i in np.nonzero(chart[j] != chart)[0]:
            c = chart[i]
            if c < 0:
                y[i] = z[j[i]]
                continue
            k = poly.k_of[c]
            u = complex(*(z[j[i]] - poly.pos[c]))
            roots = abs(u) ** (1.0 / k) * np.exp(1j * (np.angle(u) + 2 * np.pi * np.arange(k)) / k)
            r = roots[np.argmin(np.abs(roots - complex(*x[i])))]
            y[i] = (r.real, r.imag)
        nb.append(y)
    tang = nb[0] - nb[1]
    return np.c_[-tang[:, 1], tang[:, 0]] / np.linalg.norm(tang, axis=1)[:, None]


def _polish(poly: _Polygon, x: np.ndarray, chart: np.ndarray, target: HomotopyWord, f: float):
    """Newton steps on vertex offsets along the curve normals.

    L-BFGS with re-spacing stops once the length decrease is at rounding level,
    which leaves normal jitter of order sqrt(tol * h) that a trajectory built
    from the curve sees amplified by 1/h**2.  The Hessian in normal offsets is
    cyclic tridiagonal, so colored central differences recover it exactly.
    """
    N = len(x)
    if N < 6:
        return x, f
    colors = np.arange(N) % 3
    colors[N - N % 3:] = 3 + np.arange(N % 3)

    def normal_grad(xx, nrm):
        try:
            vals, grad = poly.segment_values(xx, chart)
        except (ForbiddenRegionError, SingularityError):
            return math.inf, None
        return float(np.sum(vals)), np.sum(grad * nrm, axis=1)

    for _ in range(POLISH_STEPS):
        nrm = _local_normals(poly, x, chart)
        edge = np.linalg.norm(np.roll(x, -1, axis=0) - x, axis=1)
        f0, g0 = normal_grad(x, nrm)
        if g0 is None:
            break
        eta = 1e-5 * float(np.median(edge))
        rows, cols, vals = [], [], []
        for c in np.unique(colors):
            e = np.where(colors == c, eta, 0.0)
            _, gp = normal_grad(x + e[:, None] * nrm, nrm)
            _, gm = normal_grad(x - e[:, None] * nrm, nrm)
            if gp is None or gm is None:
                return x, f
            col = (gp - gm) / (2 * eta)
            j = np.nonzero(e)[0]
            for i in ((j - 1) % N, j, (j + 1) % N):
                rows.append(i)
                cols.append(j)
                vals.append(col[i])
        H = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
        t = -spsolve((0.5 * (H + H.T)).tocsc(), g0)
        # a minimizer's Hessian is positive definite; anything else is no Newton step
        if not np.all(np.isfinite(t)) or t @ g0 >= 0:
            break
        lim = 0.25 * np.minimum(edge, np.roll(edge, 1))
        t *= min(1.0, float(np.min(lim / np.maximum(np.abs(t), 1e-300))))
        step = _safe_step(poly, x, chart, t[:, None] * nrm)
        xn = x + step
        fn, gn = normal_grad(xn, nrm)
        if gn is None or fn > f0 + 1e-13 * abs(f0) or not _word_ok(poly, xn, chart, target):
            break
        if np.max(np.abs(gn)) >= np.max(np.abs(g0)):
            break
        x, f = xn, fn
        if np.max(np.abs(step)) < 1e-13 * float(np.median(edge)) * N:
            break
    return x, f


def _anchors(poly: _Polygon, z: np.ndarray) -> list[int]:
    """Vertices much closer to some center than to either neighbour."""
    if poly.problem.n == 0:
        return []
    r = np.min(np.linalg.norm(z[:, None, :] - poly.pos[None], axis=-1), axis=1)
    prev = np.linalg.norm(z - np.roll(z, 1, axis=0), axis=1)
    nxt = np.linalg.norm(np.roll(z, -1, axis=0) - z, axis=1)
    return [int(v) for v in np.nonzero(r < 0.25 * np.minimum(prev, nxt))[0]]


def _subdivide(x: np.ndarray, chart: np.ndarray, poly: _Polygon) -> tuple[np.ndarray, np.ndarray]:
    """Insert the midpoint of every segment (in w on chart segments); the image curve is unchanged."""
    N = len(x)
    nxt = (np.arange(N) + 1) % N
    wmask = poly.wseg_mask(chart)
    z, _ = poly.to_z(x, chart)
    mid = np.where(wmask[:, None], 0.5 * (x + x[nxt]), 0.5 * (z + z[nxt]))
    mchart = np.where(wmask, chart, -1)
    xn = np.empty((2 * N, 2))
    cn = np.empty(2 * N, dtype=int)
    xn[0::2], xn[1::2] = x, mid
    cn[0::2], cn[1::2] = chart, mchart
    return xn, cn


class _LBFGS:
    def __init__(self, m: int):
        self.m = m
        self.S: list[np.ndarray] = []
        self.Y: list[np.ndarray] = []

    def reset(self):
        self.S.clear()
        self.Y.clear()

    def direction(self, g: np.ndarray) -> np.ndarray:
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(self.S), reversed(self.Y)):
            rho = 1.0 / (y @ s)
            a = rho * (s @ q)
            alphas.append((a, rho, s, y))
            q -= a * y
        if self.S:
            s, y = self.S[-1], self.Y[-1]
            q *= (s @ y) / (y @ y)
        for a, rho, s, y in reversed(alphas):
            b = rho * (y @ q)
            q += (a - b) * s
        return -q

    def update(self, s: np.ndarray, y: np.ndarray):
        if s @ y > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            self.S.append(s)
            self.Y.append(y)
            if len(self.S) > self.m:
                self.S.pop(0)
                self.Y.pop(0)


def _segment_ends(poly: _Polygon, x: np.ndarray, chart: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Offsets of each segment's endpoints from each center, in the coordinates the segment is straight in.

    Chart segments are straight in w, so for their own center the offsets are
    the w coordinates; other centers are farther than the chart radius and are
    skipped (NaN).
    """
    N = len(x)
    nxt = (np.arange(N) + 1) % N
    z, _ = poly.to_z(x, chart)
    rel = poly._offsets(z, x, chart)
    P, Q = rel.copy(), rel[nxt].copy()
    wmask = poly.wseg_mask(chart)
    if np.any(wmask):
        idx = np.nonzero(wmask)[0]
        P[idx] = np.nan
        Q[idx] = np.nan
        c = chart[idx]
        P[idx, c] = x[idx]
        Q[idx, c] = x[nxt[idx]]
    return P, Q


def _first_contact(P0, Q0, P1, Q1) -> np.ndarray:
    """Smallest tau in (0, 1] at which the segment [P0 + tau dP, Q0 + tau dQ] contains the origin, else inf."""
    dP, dQ = P1 - P0, Q1 - Q0
    A = _cross2(dP, dQ)
    B = _cross2(dP, Q0) + _cross2(P0, dQ)
    C = _cross2(P0, Q0)
    with np.errstate(invalid="ignore", divide="ignore"):
        disc = B * B - 4 * A * C
        sq = np.sqrt(np.maximum(disc, 0.0))
        # stable quadratic roots; linear fallback when A is negligible
        qq = -0.5 * (B + np.copysign(sq, B))
        r1 = np.where(np.abs(A) > 1e-300, qq / A, np.inf)
        r2 = np.where(np.abs(qq) > 1e-300, C / qq, np.where(np.abs(B) > 1e-300, -C / B, np.inf))
        roots = np.stack([r1, r2])
        roots = np.where((disc >= 0) & np.isfinite(roots) & (roots > 0) & (roots <= 1), roots, np.inf)
        Pt = P0[None] + roots[..., None] * dP[None]
        Qt = Q0[None] + roots[..., None] * dQ[None]
        between = np.sum(Pt * Qt, axis=-1) <= 0
        roots = np.where(between, roots, np.inf)
    out = np.min(roots, axis=0)
    return np.where(np.isnan(out), np.inf, out)


def _cross2(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _safe_step(poly: _Polygon, x: np.ndarray, chart: np.ndarray, step: np.ndarray, rounds: int = 8) -> np.ndarray:
    """Shrink the moves of vertices whose segments would sweep across a center.

    Only the endpoints of offending segments are held back, so the rest of the
    polygon (and tangential sliding near a center) keeps the full step.
    """
    N = len(x)
    nxt = (np.arange(N) + 1) % N
    scale = np.ones(N)
    P0, Q0 = _segment_ends(poly, x, chart)
    floor = _clearance_floor(poly, chart)
    for _ in range(rounds):
        P1, Q1 = _segment_ends(poly, x + scale[:, None] * step, chart)
        tau = np.min(_first_contact(P0, Q0, P1, Q1), axis=1)
        L2 = np.maximum(np.sum((Q1 - P1) ** 2, axis=-1), 1e-300)
        t = np.clip(-np.sum(P1 * (Q1 - P1), axis=-1) / L2, 0, 1)
        dist = np.linalg.norm(_closest_offset(P1, Q1, t), axis=-1)
        close = np.any(dist < floor, axis=1)
        hit = np.isfinite(tau) | close
        if not np.any(hit):
            return scale[:, None] * step
        idx = np.nonzero(hit)[0]
        for i, ti in zip(idx, np.where(np.isfinite(tau[idx]), 0.5 * tau[idx], 0.5)):
            s = ti * min(scale[i], scale[nxt[i]])
            scale[i] = min(scale[i], s)
            scale[nxt[i]] = min(scale[nxt[i]], s)
    return scale[:, None] * step * 0.5


def _clearance_floor(poly: _Polygon, chart: np.ndarray) -> np.ndarray:
    """Smallest allowed segment-to-center distance, per segment and center.

    Below it z = a + w**k no longer resolves the offset in double precision,
    so the class of the polygon stops being well defined.
    """
    sep = poly.problem.min_center_separation() if poly.problem.n > 1 else 1.0
    floor = np.full((len(chart), poly.problem.n), 1e-12 * sep)
    wmask = poly.wseg_mask(chart)
    for c, (k, eps) in poly.charts.items():
        own = wmask & (chart == c)
        floor[own, c] = 1e-9 * eps ** (1.0 / k)
    return floor


def _check_convex(problem: Problem):
    from .convexity import domain_convexity

    try:
        rep = domain_convexity(problem)
    except Exception as exc:  # noqa: BLE001 - the check is advisory
        warnings.warn(f"convexity check failed to run: {exc}", RuntimeWarning, stacklevel=3)
        return
    if not rep.passed:
        warnings.warn(
            f"domain boundary is not geodesically convex at energy {problem.energy} "
            f"(margin {rep.min_margin:.3g}); minimizers may touch the boundary",
            RuntimeWarning,
            stacklevel=3,
        )


# ------------------------------------------------------------------ main


def minimize_in_class(problem: Problem, word: HomotopyWord | str, options: MinimizeOptions | None = None,
                      initial: np.ndarray | None = None) -> GeodesicResult:
    opt = options or MinimizeOptions()
    if isinstance(word, str):
        word = HomotopyWord.parse(word)
    word = reduce_word(HomotopyWord(word.letters, True))
    if is_trivial(word):
        raise ValueError("class is trivial, infimum attained on a point curve")
    if opt.resolution < max(16, 8 * len(word)):
        raise ValueError(f"resolution must be at least {max(16, 8 * len(word))} for word {word}")
    guard = _guards(problem, opt)
    if opt.check_convexity:
        _check_convex(problem)
    poly = _Polygon(problem, _chart_setup(problem, opt))

    if initial is None:
        x = np.array(seed_curve(word, problem, opt.resolution).vertices)
    else:
        x = np.asarray(initial, dtype=float).copy()
        if not word_of_curve(DiscreteCurve(x), problem).same_cyclic_class(word):
            raise ValueError("initial curve is not in the requested class")
    chart = np.full(len(x), -1)

    t_start = time.monotonic()
    history: list[float] = []
    level_lengths: list[float] = []
    level_dists: list[dict[int, float]] = []
    level = 0
    converged = False
    it_total = 0
    lb = _LBFGS(LBFGS_MEMORY)

    def fg(xf, ch):
        try:
            vals, grad = poly.segment_values(xf.reshape(-1, 2), ch)
        except (ForbiddenRegionError, SingularityError):
            return math.inf, None
        return float(np.sum(vals)), grad.ravel()

    r = _respace(poly, x, chart, word)
    if r is not None:
        x, chart = r
    f, g = fg(x.ravel(), chart)
    if not math.isfinite(f):
        raise ValueError("seed curve leaves the admissible region")
    level_start = 0
    while True:
        stalled = False
        level_converged = False
        for _ in range(opt.max_iterations):
            it_total += 1
            d = lb.direction(g)
            if g @ d >= 0:
                lb.reset()
                d = -g
            t = 1.0
            accepted = False
            while t > 1e-14:
                step = _safe_step(poly, x, chart, t * d.reshape(-1, 2)).ravel()
                xn = x.ravel() + step
                fn, gn = fg(xn, chart)
                if fn <= f + ARMIJO * (g @ step) and _word_ok(poly, xn.reshape(-1, 2), chart, word):
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                if lb.S:
                    lb.reset()
                    continue
                stalled = True
                break
            lb.update(xn - x.ravel(), gn - g)
            x, f, g = xn.reshape(-1, 2), fn, gn
            history.append(f)
            if len(history) - level_start >= opt.window and history[-opt.window] - f < opt.step_tolerance:
                level_converged = True
                break
            if opt.respace_every and len(history) % opt.respace_every == 0:
                r = _respace(poly, x, chart, word)
                if r is not None:
                    fr, gr = fg(r[0].ravel(), r[1])
                    if math.isfinite(fr):
                        x, chart = r
                        f, g = fr, gr
                        lb.reset()
            if opt.time_limit and time.monotonic() - t_start > opt.time_limit:
                break
        dists, _ = _min_distances(poly, x, chart)
        level_lengths.append(f)
        level_dists.append({j + 1: float(v) for j, v in enumerate(dists)})
        done = level_converged or stalled
        if level >= opt.refinement_levels or not done:
            converged = done
            break
        if opt.time_limit and time.monotonic() - t_start > opt.time_limit:
            break
        level += 1
        r = _respace(poly, x, chart, word, n_new=2 * len(x))
        x, chart = r if r is not None else _subdivide(x, chart, poly)
        f, g = fg(x.ravel(), chart)
        lb.reset()
        level_start = len(history)

    if converged:
        x, f = _polish(poly, x, chart, word, f)
        if np.any(chart >= 0) and np.all(_min_distances(poly, x, chart)[0] >= guard):
            # a noncollision curve needs no chart; one segment type all along removes
            # the defect where w-straight and z-straight segments meet
            flat = _Polygon(problem, {})
            z, _ = poly.to_z(x, chart)
            zc = np.full(len(z), -1)
            zp, fp = _polish(flat, z, zc, word, float(np.sum(flat.segment_values(z, zc, with_grad=False)[0])))
            if zp is not z:
                poly, x, chart, f = flat, zp, zc, fp
    dists, dense_pts = _min_distances(poly, x, chart)
    z, _ = poly.to_z(x, chart)
    curve = DiscreteCurve(z, closed=True)
    mcd = {j + 1: float(v) for j, v in enumerate(dists)}
    flags = {j + 1 for j, v in enumerate(dists) if v < guard[j]}
    return GeodesicResult(
        curve=curve,
        length=f,
        word=word,
        min_center_distance=mcd,
        converged=converged,
        collision_flags=flags,
        history=history,
        level_lengths=level_lengths,
        level_min_distances=level_dists,
        iterations=it_total,
        guard={j + 1: float(v) for j, v in enumerate(guard)},
        dense=dense_pts,
    )


# ------------------------------------------------------------------ reports


@dataclass
class CenterReport:
    strength: StrengthClass
    min_distance: float
    verdict: str
    stability: float | None = None

    def to_json(self) -> dict:
        return {
            "class": self.strength.kind,
            "ladder_index": None if math.isinf(self.strength.ladder_index) else int(self.strength.ladder_index),
            "min_distance": self.min_distance,
            "verdict": self.verdict,
            "stability": self.stability,
        }


def _reverses_at(dense: np.ndarray, a: np.ndarray, probe: float) -> bool:
    """Does the curve come in and go out along the same ray at its closest approach to a?"""
    r = np.linalg.norm(dense - a, axis=1)
    i0 = int(np.argmin(r))
    n = len(dense)
    idx_f = next((i0 + s) % n for s in range(1, n) if r[(i0 + s) % n] >= probe)
    idx_b = next((i0 - s) % n for s in range(1, n) if r[(i0 - s) % n] >= probe)
    u = dense[idx_f] - a
    v = dense[idx_b] - a
    cosang = u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
    return cosang > math.cos(0.2)


def collision_report(result: GeodesicResult, problem: Problem) -> dict[int, CenterReport]:
    """Per-center verdict: "avoided", "reflection" (Newtonian-type bounce) or "collision"."""
    out = {}
    for j, s in enumerate(problem.singularities):
        label = j + 1
        cls = classify_singularity(s.order)
        dmin = result.min_center_distance[label]
        guard = result.guard.get(label, 0.0)
        stab = None
        if len(result.level_min_distances) >= 2:
            d0 = result.level_min_distances[-2][label]
            d1 = result.level_min_distances[-1][label]
            stab = abs(d1 - d0) / max(d0, 1e-300)
        if dmin >= guard and (stab is None or stab < 0.1):
            verdict = "avoided"
        elif dmin < guard and cls.regularizable and result.dense is not None and _reverses_at(
            result.dense, problem.positions[j], max(10 * guard, 1e-2 * (problem.min_center_separation() if problem.n > 1 else 1.0))
        ):
            verdict = "reflection"
        elif dmin >= guard:
            verdict = "unstable"
        else:
            verdict = "collision"
        out[label] = CenterReport(cls, dmin, verdict, stab)
    return out


def _survey_one(args):
    problem, word, opt = args
    try:
        return minimize_in_class(problem, word, opt)
    except (ValueError, RuntimeError) as exc:
        return exc


def survey_classes(problem: Problem, max_word_length: int, options: MinimizeOptions | None = None,
                   workers: int = 1) -> list[GeodesicResult]:
    """Minimize in every nontrivial cyclic class up to the given word length; sorted by length."""
    if max_word_length <= 0 or problem.n < 2:
        return []
    from .classify import chaos_certificate

    cert = chaos_certificate(problem, area=math.inf)
    if not cert.verdict:
        warnings.warn("chaos certificate is false for this configuration", RuntimeWarning, stacklevel=2)
    opt = options or MinimizeOptions()
    words = enumerate_cyclic_words(problem.n, max_word_length, up_to_inverse=True)
    jobs = []
    for w in words:
        o = MinimizeOptions(**{**opt.__dict__, "resolution": max(opt.resolution, 16, 8 * len(w))})
        jobs.append((problem, w, o))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_survey_one, jobs))
    else:
        results = [_survey_one(j) for j in jobs]
    good = [r for r in results if isinstance(r, GeodesicResult)]
    good.sort(key=lambda r: (r.length, str(r.word)))
    return good
