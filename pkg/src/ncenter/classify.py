"""Strength classes of singularities, the strength sum and cover bookkeeping."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real
from typing import Iterable, Sequence

from .model import Problem, Singularity, parse_order

EQ_TOL = 1e-12

WEAK, NEWTONIAN, MODERATE, JACOBI, STRONG = "weak", "newtonian", "moderate", "jacobi", "strong"

INF = math.inf


def ladder_value(k: int | float) -> Fraction:
    """A_k = 2 - 2/k, exact; k = inf gives 2."""
    if k == INF:
        return Fraction(2)
    if k < 1 or int(k) != k:
        raise ValueError(f"ladder index must be a positive integer or inf, got {k}")
    return 2 - Fraction(2, int(k))


def _equals(alpha: Real, target: Fraction) -> bool:
    if isinstance(alpha, Fraction):
        return alpha == target
    return abs(float(alpha) - float(target)) <= EQ_TOL


@dataclass(frozen=True)
class StrengthClass:
    kind: str
    ladder_index: int | float
    regularizable: bool

    @property
    def ladder_value(self) -> Fraction:
        return ladder_value(self.ladder_index)


def classify_singularity(alpha) -> StrengthClass:
    alpha = parse_order(alpha) if not isinstance(alpha, (Fraction, float)) else alpha
    if not alpha > 0:
        raise ValueError(f"singularity order must be positive, got {alpha}")
    if _equals(alpha, Fraction(2)) or alpha > 2:
        kind = JACOBI if _equals(alpha, Fraction(2)) else STRONG
        return StrengthClass(kind, INF, False)
    if isinstance(alpha, Fraction):
        k = math.floor(2 / (2 - alpha))
    else:
        k = max(1, math.floor(2.0 / (2.0 - float(alpha))))
        # snap to the ladder when alpha sits within tolerance of A_k or A_{k+1}
        if _equals(alpha, ladder_value(k + 1)):
            k += 1
        elif k > 1 and not _equals(alpha, ladder_value(k)) and alpha < float(ladder_value(k)):
            k -= 1
    regularizable = k >= 2 and _equals(alpha, ladder_value(k))
    if _equals(alpha, Fraction(1)):
        kind = NEWTONIAN
    elif alpha < 1:
        kind = WEAK
    else:
        kind = MODERATE
    return StrengthClass(kind, k, regularizable)


def _orders(items: Iterable) -> list:
    out = []
    for it in items:
        out.append(it.order if isinstance(it, Singularity) else parse_order(it) if isinstance(it, str) else it)
    return out


def strength_sum(singularities: Iterable) -> Fraction:
    """A(Delta) = sum over non-weak centers of their ladder value; exact."""
    total = Fraction(0)
    for alpha in _orders(singularities):
        cls = classify_singularity(alpha)
        if cls.ladder_index != 1:
            total += cls.ladder_value
    return total


def ladder_counts(singularities: Iterable) -> Counter:
    """n_k for every ladder index present (k = inf for alpha >= 2)."""
    return Counter(classify_singularity(a).ladder_index for a in _orders(singularities))


@dataclass
class CoverStep:
    """One cyclic branched covering of order k over `branch_count` points."""

    k: int
    branch_count: int
    branch_orders: list
    euler_char_before: int
    euler_char_after: int


@dataclass
class CoverPlan:
    degree: int
    branch_indices: dict[int, int]
    euler_char_cover: Fraction
    construction: str
    steps: list[CoverStep] = field(default_factory=list)


def riemann_hurwitz(degree: int, euler_char: int | Fraction, ramification: Iterable[tuple[int, int]]) -> Fraction:
    """chi(X) = K chi(D) - sum (e - 1) over points upstairs.

    `ramification` lists (index e, number of points upstairs with that index).
    """
    chi = Fraction(degree) * Fraction(euler_char)
    for e, count in ramification:
        chi -= (e - 1) * count
    return chi


def _transformed(alpha, k: int):
    # local order after an order-k cyclic cover branched at the center
    if isinstance(alpha, Fraction):
        return 2 - k * (2 - alpha)
    return 2.0 - k * (2.0 - float(alpha))


def cover_plan(singularities: Sequence, euler_char: int, simply_connected_plane_domain: bool = True) -> CoverPlan:
    """Degree, branch indices and Euler characteristic of the regularizing cover.

    Plane domains (and surfaces where every n_k is divisible by k) get the
    fiber product of the cyclic covers w_i**k_i = prod (z - a_j).  Other
    surfaces with chi <= 0 are first unbranched-covered (degree K), giving
    degree K**2.  The sphere uses the cascade of cyclic covers from
    `sphere_cascade`.
    """
    orders = _orders(singularities)
    for i, a in enumerate(orders):
        cls = classify_singularity(a)
        if cls.ladder_index == INF:
            raise ValueError(
                f"center {i + 1} has order {a} >= 2; excise strong and Jacobi centers first (see excise_strong)"
            )
    indices = {i: classify_singularity(a).ladder_index for i, a in enumerate(orders)}
    branch = {i: int(k) for i, k in indices.items() if k >= 2}
    counts = Counter(branch.values())
    K = math.prod(counts) if counts else 1
    A = strength_sum(orders)
    chi = Fraction(euler_char)

    divisible = all(n % k == 0 for k, n in counts.items())
    if simply_connected_plane_domain or divisible:
        chi_x = K * (chi - A / 2)
        return CoverPlan(K, branch, chi_x, "fiber_product")
    if euler_char <= 0:
        chi_x = K * K * (chi - A / 2)
        return CoverPlan(K * K, branch, chi_x, "precover_fiber_product")
    if euler_char == 2:
        steps, degree, chi_x = sphere_cascade(orders)
        return CoverPlan(degree, branch, Fraction(chi_x), "sphere_cascade", steps)
    raise ValueError(f"unsupported closed surface with euler characteristic {euler_char}")


def sphere_cascade(orders: Sequence, euler_char: int = 2, max_steps: int = 64) -> tuple[list[CoverStep], int, int]:
    """Plan successive cyclic branched covers of a closed surface.

    At each step the smallest ladder class k still present is handled.  If it
    has at least k members, an order-k cover branched over a multiple of k of
    them regularizes those (they become weak or vanish) and replicates the
    rest k times.  Otherwise a double cover replicates the class; it is
    branched over ordinary points (and over the lone member when k = 2).  Returns the
    steps, the total degree and the final Euler characteristic.
    """
    state = list(orders)
    chi = euler_char
    degree = 1
    steps: list[CoverStep] = []
    for _ in range(max_steps):
        active = [(classify_singularity(a).ladder_index, i) for i, a in enumerate(state)]
        active = [(k, i) for k, i in active if k != 1 and k != INF]
        if not active:
            return steps, degree, chi
        kmin = min(k for k, _ in active)
        group = [i for k, i in active if k == kmin]
        if len(group) >= kmin:
            k = int(kmin)
            chosen = group[: k * (len(group) // k)]
        else:
            # replicate the class; branching a center of another class at index 2 would leave it off the ladder
            k = 2
            chosen = group[:1] if kmin == 2 else []
        padded = 2 - len(chosen) if k == 2 and len(chosen) < 2 else 0
        new_state = []
        for i, a in enumerate(state):
            if i in chosen:
                t = _transformed(a, k)
                if t > 0 and not _equals(t, Fraction(0)):
                    new_state.append(t)
            else:
                new_state.extend([a] * k)
        nb = len(chosen) + padded
        new_chi = k * chi - nb * (k - 1)
        steps.append(CoverStep(k, nb, [state[i] for i in chosen], chi, new_chi))
        state, chi, degree = new_state, new_chi, degree * k
    raise RuntimeError("cover cascade did not terminate")


@dataclass
class ChaosCertificate:
    strength_sum: Fraction
    euler_char_base: int
    verdict: bool
    cover_degree: int | None
    euler_char_cover: Fraction | None
    entropy_lower_bound: float | None
    construction: str | None = None
    jacobi_area: float | None = None

    def to_json(self) -> dict:
        def num(x):
            if x is None:
                return None
            if isinstance(x, Fraction):
                return int(x) if x.denominator == 1 else float(x)
            return x

        ent = self.entropy_lower_bound
        return {
            "A": num(self.strength_sum),
            "A_exact": str(self.strength_sum),
            "chi": self.euler_char_base,
            "verdict": bool(self.verdict),
            "K": self.cover_degree,
            "chiX": num(self.euler_char_cover),
            "entropy_lb": "undefined" if ent is None else ent,
        }


def excise_strong(orders: Sequence, euler_char: int) -> tuple[list, Fraction, int]:
    """Remove centers of order >= 2 by cutting out small balls around them.

    Returns the remaining orders, A(Delta') and chi(D') with
    A(Delta) - 2 chi(D) == A(Delta') - 2 chi(D').
    """
    orders = _orders(orders)
    kept = [a for a in orders if classify_singularity(a).ladder_index != INF]
    removed = len(orders) - len(kept)
    return kept, strength_sum(orders) - 2 * removed, euler_char - removed


def entropy_lower_bound(strength_sum: Real, euler_char: int, jacobi_area: float) -> float | None:
    """sqrt(pi (A - 2 chi) / Vol_J); 0 when there is no certificate, None if the area diverges."""
    if jacobi_area is None or not math.isfinite(jacobi_area):
        return None
    excess = float(strength_sum) - 2.0 * euler_char
    if excess <= 0:
        return 0.0
    if not jacobi_area > 0:
        raise ValueError("Jacobi area must be positive")
    return math.sqrt(math.pi * excess / jacobi_area)


def chaos_certificate(problem: Problem, euler_char: int | None = None, plane: bool | None = None,
                      area: float | None = None) -> ChaosCertificate:
    from .jacobi import jacobi_area

    if euler_char is None:
        euler_char = problem.domain.euler_char
    if plane is None:
        plane = euler_char == 1
    orders = [s.order for s in problem.singularities]
    A = strength_sum(orders)
    verdict = A > 2 * euler_char
    kept, _, chi_kept = excise_strong(orders, euler_char)
    try:
        plan = cover_plan(kept, chi_kept, simply_connected_plane_domain=plane)
    except ValueError:
        plan = None
    if area is None and euler_char == problem.domain.euler_char:
        area = jacobi_area(problem)
    entropy = entropy_lower_bound(A, euler_char, area) if area is not None else None
    return ChaosCertificate(
        strength_sum=A,
        euler_char_base=euler_char,
        verdict=verdict,
        cover_degree=plan.degree if plan else None,
        euler_char_cover=plan.euler_char_cover if plan else None,
        entropy_lower_bound=entropy,
        construction=plan.construction if plan else None,
        jacobi_area=area,
    )
