"""Reduced words in the free group of the punctured plane.

Generator x_j is the class of a small counterclockwise loop around center j.
Words of curves are read off from signed crossings with rays cast from each
center in the direction -pi/2 (perturbed deterministically if a vertex or a
center lands on a ray).  A crossing of ray j with the ray on the right of the
direction of motion counts as x_j.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .jacobi import DiscreteCurve
from .model import Problem, Singularity, SingularityError

RAY_ANGLE = -math.pi / 2
RAY_STEP = 1e-7
MAX_RAY_ATTEMPTS = 64
_ON_RAY_TOL = 1e-9

Letter = tuple[int, int]

_TOKEN = re.compile(r"^x(\d+)(?:\^\(?([+-]?\d+)\)?)?$")


def _free_reduce(letters: Sequence[Letter]) -> list[Letter]:
    out: list[Letter] = []
    for j, e in letters:
        if out and out[-1][0] == j and out[-1][1] == -e:
            out.pop()
        else:
            out.append((j, e))
    return out


def _cyclic_reduce(letters: list[Letter]) -> list[Letter]:
    i, k = 0, len(letters) - 1
    while i < k and letters[i][0] == letters[k][0] and letters[i][1] == -letters[k][1]:
        i += 1
        k -= 1
    return letters[i : k + 1]


@dataclass(frozen=True)
class HomotopyWord:
    letters: tuple[Letter, ...] = ()
    cyclic: bool = True

    def __post_init__(self):
        letters = tuple((int(j), int(e)) for j, e in self.letters)
        for j, e in letters:
            if j < 1 or e not in (1, -1):
                raise ValueError(f"bad letter ({j}, {e})")
        object.__setattr__(self, "letters", letters)

    @classmethod
    def parse(cls, text: str, cyclic: bool = True, reduce: bool = True) -> "HomotopyWord":
        """Parse "x1 x2^-1 x1"; "x3^2" expands to two letters; "" and "1" are the empty word."""
        text = text.replace("⁻¹", "^-1").replace("*", " ").strip()
        letters: list[Letter] = []
        if text not in ("", "1", "e"):
            for tok in text.split():
                m = _TOKEN.match(tok)
                if not m:
                    raise ValueError(f"cannot parse word token {tok!r}")
                j = int(m.group(1))
                p = int(m.group(2)) if m.group(2) is not None else 1
                if j < 1:
                    raise ValueError(f"generator index must be >= 1 in {tok!r}")
                letters.extend([(j, 1 if p > 0 else -1)] * abs(p))
        w = cls(tuple(letters), cyclic)
        return reduce_word(w) if reduce else w

    def __str__(self) -> str:
        return " ".join(f"x{j}" if e == 1 else f"x{j}^-1" for j, e in self.letters)

    def __len__(self) -> int:
        return len(self.letters)

    @property
    def generators(self) -> set[int]:
        return {j for j, _ in self.letters}

    def inverse(self) -> "HomotopyWord":
        return HomotopyWord(tuple((j, -e) for j, e in reversed(self.letters)), self.cyclic)

    def exponent_sums(self, n: int) -> np.ndarray:
        out = np.zeros(n, dtype=int)
        for j, e in self.letters:
            out[j - 1] += e
        return out

    def rotations(self) -> list[tuple[Letter, ...]]:
        L = self.letters
        return [L[i:] + L[:i] for i in range(len(L))] or [()]

    def same_cyclic_class(self, other: "HomotopyWord") -> bool:
        a, b = reduce_word(self), reduce_word(other)
        if len(a) != len(b):
            return False
        return b.letters in a.rotations()

    def canonical(self, up_to_inverse: bool = False) -> tuple[Letter, ...]:
        """Lexicographically least rotation (optionally also over the inverse)."""
        w = reduce_word(self)
        cands = w.rotations()
        if up_to_inverse:
            cands += w.inverse().rotations()
        return min(cands)


def reduce_word(word: HomotopyWord) -> HomotopyWord:
    letters = _free_reduce(word.letters)
    if word.cyclic:
        letters = _cyclic_reduce(letters)
    return HomotopyWord(tuple(letters), word.cyclic)


def is_trivial(word: HomotopyWord) -> bool:
    """Empty, or a power of one generator (a loop that retracts into a small ball)."""
    w = reduce_word(HomotopyWord(word.letters, True))
    return len(w.generators) <= 1


def is_admissible(word: HomotopyWord) -> bool:
    """Conservative syntactic admissibility test (sufficient, not necessary).

    Accepts a cyclically reduced word only if it uses at least two
    generators, all exponents share one sign, and no generator is repeated
    cyclically adjacent.  Mixed signs are rejected because they produce
    lobes such as u x_j u^-1 or the figure-eight x_i x_j^-1, whose loops can
    bound a disk around a single center; a repeated x_j x_j forces an inner
    loop around a_j alone.
    """
    w = reduce_word(HomotopyWord(word.letters, True))
    if is_trivial(w):
        return False
    signs = {e for _, e in w.letters}
    if len(signs) != 1:
        return False
    L = w.letters
    return all(L[i][0] != L[(i + 1) % len(L)][0] for i in range(len(L)))


def is_reversible(word: HomotopyWord) -> bool:
    """True iff some cyclic shift of the word equals the word read backwards.

    A reflection fixing the centers sends x_j to x_j^-1 and reversing time
    inverts the word, so the class of the reflected, reversed curve is the
    original letters in reverse order.
    """
    w = reduce_word(HomotopyWord(word.letters, True))
    return tuple(reversed(w.letters)) in w.rotations()


# ---------------------------------------------------------------- curves


def _ray_direction(attempt: int) -> np.ndarray:
    a = RAY_ANGLE + attempt * RAY_STEP
    return np.array([math.cos(a), math.sin(a)])


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _rays_ok(rel: np.ndarray, centers: np.ndarray, d: np.ndarray) -> bool:
    # angular test, so a vertex very close to a center does not block every ray
    dist = np.linalg.norm(rel, axis=-1)
    on = (np.abs(_cross(d, rel)) <= _ON_RAY_TOL * dist) & (rel @ d >= 0)
    if np.any(on):
        return False
    if len(centers) > 1:
        relc = centers[:, None, :] - centers[None, :, :]
        distc = np.linalg.norm(relc, axis=-1)
        hit = (np.abs(_cross(d, relc)) <= _ON_RAY_TOL * distc) & (relc @ d > 0)
        if np.any(hit):
            return False
    return True


def _crossings(rel: np.ndarray, closed: bool, d: np.ndarray) -> list[Letter]:
    if closed:
        p, q = rel, np.roll(rel, -1, axis=0)
    else:
        p, q = rel[:-1], rel[1:]
    s0 = _cross(d, p)
    s1 = _cross(d, q)
    seg, j = np.nonzero(np.sign(s0) != np.sign(s1))
    if len(seg) == 0:
        return []
    t = s0[seg, j] / (s0[seg, j] - s1[seg, j])
    v = q[seg, j] - p[seg, j]
    point = p[seg, j] + t[:, None] * v
    keep = point @ d > 0
    seg, j, t, v = seg[keep], j[keep], t[keep], v[keep]
    sign = np.where(_cross(d, v) > 0, 1, -1)
    order = np.lexsort((t, seg))
    return [(int(j[i]) + 1, int(sign[i])) for i in order]


def _closest_offset(p: np.ndarray, q: np.ndarray, t: np.ndarray) -> np.ndarray:
    """p + t (q - p), measured from the nearer endpoint so tiny endpoints are not rounded away."""
    t = t[..., None]
    return np.where(t < 0.5, p + t * (q - p), q + (1 - t) * (p - q))


def word_from_offsets(rel: np.ndarray, centers: np.ndarray, closed: bool = True) -> HomotopyWord:
    """Word of a polyline given its vertices relative to each center, rel[i, j] = vertex_i - center_j.

    Passing offsets rather than absolute points keeps the word well defined
    for vertices far closer to a center than the absolute coordinates resolve.
    """
    rel = np.asarray(rel, dtype=float)
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if len(centers) == 0:
        return HomotopyWord((), closed)
    p = rel
    q = np.roll(rel, -1, axis=0) if closed else rel[1:]
    if not closed:
        p = rel[:-1]
    seg = q - p
    L2 = np.maximum(np.sum(seg * seg, axis=-1), 1e-300)
    t = np.clip(-np.sum(p * seg, axis=-1) / L2, 0, 1)
    dist = np.linalg.norm(_closest_offset(p, q, t), axis=-1)
    if np.any(dist == 0):
        raise SingularityError("curve touches a singularity")
    for attempt in range(MAX_RAY_ATTEMPTS):
        d = _ray_direction(attempt)
        if _rays_ok(rel, centers, d):
            return reduce_word(HomotopyWord(tuple(_crossings(rel, closed, d)), closed))
    raise RuntimeError("no ray direction in the perturbation schedule avoids the curve vertices")


def word_of_curve(curve: DiscreteCurve, singularities: Sequence[Singularity] | Problem) -> HomotopyWord:
    if isinstance(singularities, Problem):
        singularities = singularities.singularities
    centers = np.array([s.position for s in singularities], dtype=float).reshape(-1, 2)
    if len(centers) == 0:
        return HomotopyWord((), curve.closed)
    rel = curve.vertices[:, None, :] - centers[None, :, :]
    return word_from_offsets(rel, centers, curve.closed)


def winding_numbers(curve: DiscreteCurve, points: np.ndarray) -> np.ndarray:
    """Winding number of a closed curve around each point, by summing turning angles."""
    v = curve.vertices
    w = np.roll(v, -1, axis=0)
    out = []
    for a in np.atleast_2d(points):
        u0 = v - a
        u1 = w - a
        ang = np.arctan2(_cross(u0, u1), np.sum(u0 * u1, axis=1))
        out.append(int(round(np.sum(ang) / (2 * np.pi))))
    return np.array(out)


def _resample(points: np.ndarray, n: int) -> np.ndarray:
    closed = np.vstack([points, points[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s = np.r_[0.0, np.cumsum(seg)]
    targets = np.linspace(0.0, s[-1], n, endpoint=False)
    x = np.interp(targets, s, closed[:, 0])
    y = np.interp(targets, s, closed[:, 1])
    return np.c_[x, y]


def _seed_polyline(word: HomotopyWord, centers: np.ndarray, radius: float, gap: float, tilt: float,
                   d: np.ndarray, arc_points: int) -> np.ndarray:
    """Dense loop: for each letter drop from a common line beyond all centers, circle the center, return.

    Tails run parallel to the rays so they cross none; where a tail would pass
    within `radius` of another center it bulges around it on the side it is
    already on.  The circle opening is centred at angle pi/2 + tilt.
    """
    up = -d
    side = np.array([up[1], -up[0]])
    lat = centers @ side
    hgt = centers @ up
    top = float(np.max(hgt)) + 2.0 * radius
    tail_pts = max(8, arc_points // 2)

    def tail(j, x, y0):
        ys = np.linspace(y0, top, tail_pts)
        xs = np.full_like(ys, x)
        for k in range(len(centers)):
            if k == j:
                continue
            dx = x - lat[k]
            if abs(dx) >= radius:
                continue
            dy = ys - hgt[k]
            near = np.abs(dy) < radius
            sgn = 1.0 if dx >= 0 else -1.0
            xs[near] = lat[k] + sgn * np.maximum(np.abs(dx), np.sqrt(radius**2 - dy[near] ** 2))
        return xs[:, None] * side + ys[:, None] * up

    pts = []
    for j, e in word.letters:
        a = centers[j - 1]
        start = np.pi / 2 + tilt + e * gap / 2
        angles = start + e * np.linspace(0.0, 2 * np.pi - gap, arc_points)
        circ = a + radius * (np.cos(angles)[:, None] * side + np.sin(angles)[:, None] * up)
        down = tail(j - 1, float(circ[0] @ side), float(circ[0] @ up))[::-1]
        back = tail(j - 1, float(circ[-1] @ side), float(circ[-1] @ up))
        pts.extend(down[:-1])
        pts.extend(circ)
        pts.extend(back[1:])
    return np.array(pts)


def seed_curve(word: HomotopyWord, problem: Problem, resolution: int = 64) -> DiscreteCurve:
    """A closed polygon with `resolution` vertices whose word is `word` (up to cyclic shift)."""
    w = reduce_word(HomotopyWord(word.letters, True))
    n = problem.n
    if any(j > n for j in w.generators):
        raise ValueError(f"word {w} references a generator beyond x{n}")
    if len(w) == 0:
        raise ValueError("cannot seed the empty word")
    centers = problem.positions
    sep = problem.min_center_separation() if n > 1 else 1.0
    radius = sep / 4
    resolution = int(resolution)
    if resolution < 4 * len(w):
        raise ValueError(f"resolution {resolution} too small for a word of length {len(w)}")
    d = _ray_direction(0)
    for gap in (0.5, 0.25, 0.1):
        for tilt in (0.0, 0.6, -0.6, 1.0, -1.0):
            dense = _seed_polyline(w, centers, radius, gap, tilt, d, max(32, 4 * resolution // len(w)))
            pts = _resample(dense, resolution)
            try:
                curve = DiscreteCurve(pts, closed=True)
                got = word_of_curve(curve, problem.singularities)
            except (ValueError, SingularityError):
                continue
            if got.same_cyclic_class(w):
                return curve
    raise RuntimeError(f"could not realize word {w} at resolution {resolution}")


def enumerate_cyclic_words(n: int, max_length: int, min_length: int = 1,
                           up_to_inverse: bool = True, nontrivial_only: bool = True) -> list[HomotopyWord]:
    """Cyclically reduced words over x_1..x_n, one per class modulo shift (and inversion)."""
    letters = [(j, e) for j in range(1, n + 1) for e in (1, -1)]
    seen: set = set()
    out = []
    for length in range(min_length, max_length + 1):
        for combo in itertools.product(letters, repeat=length):
            ok = all(combo[i][0] != combo[i + 1][0] or combo[i][1] == combo[i + 1][1] for i in range(length - 1))
            if not ok or (length > 1 and combo[0][0] == combo[-1][0] and combo[0][1] == -combo[-1][1]):
                continue
            w = HomotopyWord(combo, True)
            key = w.canonical(up_to_inverse)
            if key in seen:
                continue
            seen.add(key)
            if nontrivial_only and is_trivial(w):
                continue
            out.append(HomotopyWord(key, True))
    return out


def parse_words(items: Iterable[str]) -> list[HomotopyWord]:
    return [HomotopyWord.parse(s) for s in items]
