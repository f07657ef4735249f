"""Topological chaos certificates and Jacobi-metric geodesics for n-center problems."""

__version__ = "0.1.0"

from .classify import (  # noqa: E402
    ChaosCertificate,
    CoverPlan,
    StrengthClass,
    chaos_certificate,
    classify_singularity,
    cover_plan,
    entropy_lower_bound,
    ladder_value,
    riemann_hurwitz,
    strength_sum,
)
from .homotopy import HomotopyWord, is_admissible, is_reversible, reduce_word, word_of_curve  # noqa: E402
from .jacobi import DiscreteCurve, curve_length, jacobi_area, jacobi_distance  # noqa: E402
from .model import (  # noqa: E402
    Disk,
    ForbiddenRegionError,
    PhaseState,
    PolygonDomain,
    Poly2,
    Problem,
    Singularity,
    SingularityError,
    load_problem,
    n_center,
    potential_eval,
    potential_gradient,
)

__all__ = [
    "ChaosCertificate",
    "CoverPlan",
    "DiscreteCurve",
    "Disk",
    "ForbiddenRegionError",
    "HomotopyWord",
    "PhaseState",
    "PolygonDomain",
    "Poly2",
    "Problem",
    "Singularity",
    "SingularityError",
    "StrengthClass",
    "chaos_certificate",
    "classify_singularity",
    "cover_plan",
    "curve_length",
    "entropy_lower_bound",
    "is_admissible",
    "is_reversible",
    "jacobi_area",
    "jacobi_distance",
    "ladder_value",
    "load_problem",
    "n_center",
    "potential_eval",
    "potential_gradient",
    "reduce_word",
    "riemann_hurwitz",
    "strength_sum",
    "word_of_curve",
]
