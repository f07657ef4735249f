"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line (collected in the terminal summary)."""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction as F

import numpy as np

import oracles
from ncenter.classify import (
    chaos_certificate,
    classify_singularity,
    cover_plan,
    excise_strong,
    ladder_value,
    riemann_hurwitz,
    strength_sum,
)
from ncenter.convexity import ball_convexity, ball_convexity_sign, disk_convexity, excise_strong_balls
from ncenter.dynamics import geodesic_to_trajectory, integrate_newton, newton_residual
from ncenter.homotopy import HomotopyWord, enumerate_cyclic_words, is_admissible
from ncenter.jacobi import jacobi_area, speed_factor
from ncenter.levicivita import ConeChart, pullback_factor, transformed_order, verify_cone_lemma
from ncenter.minimize import MinimizeOptions, collision_report, minimize_in_class, survey_classes
from ncenter.model import Disk, PhaseState, n_center


def triangle_problem(orders=1):
    pts = [[math.cos(2 * math.pi * k / 3 + math.pi / 2), math.sin(2 * math.pi * k / 3 + math.pi / 2)] for k in range(3)]
    return n_center(pts, 1.0, orders, 1.0, Disk((0.0, 0.0), 4.0))


def test_criterion_01_ladder(criterion):
    t0 = time.perf_counter()
    got = {k: ladder_value(k) for k in (2, 3, 4)}
    got["inf"] = ladder_value(math.inf)
    want = {2: F(1), 3: F(4, 3), 4: F(3, 2), "inf": F(2)}
    ok = got == want and all(isinstance(v, F) for v in got.values())
    ok &= all(ladder_value(k) == oracles.ladder_reference(k) for k in range(2, 50))
    detail = ", ".join(f"A_{k}={v}" for k, v in got.items())
    assert criterion(1, ok, detail, time.perf_counter() - t0, 1.0)


def test_criterion_02_worked_example(criterion):
    t0 = time.perf_counter()
    orders = [1, 1, 1, F(4, 3)]
    A = strength_sum(orders)
    p = n_center([[0, 0], [1, 0], [0, 1], [1, 1]], 1.0, orders, 1.0)
    sphere = chaos_certificate(p, euler_char=2, area=math.inf)
    plane = chaos_certificate(p, euler_char=1, area=math.inf)
    ok = A == F(13, 3) and sphere.verdict is True and plane.verdict is True
    assert criterion(2, ok, f"A={A}, chi=2 -> {sphere.verdict}, chi=1 -> {plane.verdict}", time.perf_counter() - t0, 1.0)


def test_criterion_03_cover_bookkeeping(criterion):
    t0 = time.perf_counter()
    step = riemann_hurwitz(3, 2, [(3, 3)])
    formula = 3 * (2 - F(1, 2) * 3 * F(4, 3))
    plan3 = cover_plan([F(4, 3)] * 3, 2, simply_connected_plane_domain=False)
    plan2 = cover_plan([1, 1, 1, 1], 1)
    V, E, Fc = oracles.double_cover_euler(12, [(2, 1), (4, 4), (7, 6), (9, 10)])
    ok = step == formula == 0 and plan3.euler_char_cover == 0
    ok &= plan2.degree == 2 and plan2.euler_char_cover == 2 * 1 - 4 == V - E + Fc
    detail = f"chi step={step}, double cover chi(X)={plan2.euler_char_cover}, triangulation V-E+F={V}-{E}+{Fc}={V - E + Fc}"
    assert criterion(3, ok, detail, time.perf_counter() - t0, 5.0)


def test_criterion_04_levi_civita(criterion):
    t0 = time.perf_counter()
    ok = all(transformed_order(ladder_value(k), k) == 0 for k in range(2, 13))
    ok &= transformed_order(F(3, 2), 2) == 1
    rng = np.random.default_rng(4)
    worst = 0.0
    for alpha in (0.5, 1.0, F(4, 3), 1.5):
        p = n_center([[0.0, 0.0], [1.3, 0.4]], [1.2, 0.8], [alpha, 1], 1.1, Disk((0.5, 0.0), 4.0))
        chart = ConeChart.for_center(p, 0, 0.2)
        r = chart.w_radius * np.sqrt(rng.uniform(1e-6, 1.0, 1000))
        th = rng.uniform(0, chart.total_angle, 1000)
        w = np.c_[r * np.cos(th), r * np.sin(th)]
        direct = speed_factor(p, chart.to_base(p, w)) * chart.beta * r ** (chart.beta - 1)
        worst = max(worst, float(np.max(np.abs(pullback_factor(p, chart, w) / direct - 1))))
    ok &= worst <= 1e-10
    assert criterion(4, ok, f"ladder orders removed for k=2..12, 3/2 -> 1, chain rule max rel err {worst:.2e}",
                     time.perf_counter() - t0, 5.0)


def test_criterion_05_cone_lemmas(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    eps = 1e-2
    lines, ok = [], True
    for alpha, doubled in ((0.5, False), (1.5, True)):
        beta = 2 / (2 - alpha)
        lam = math.sin(math.pi / (beta if doubled else 2 * beta)) * 1.05
        oracle = oracles.ConeOracle(alpha, eps, per_eps=400, doubled=doubled)
        period = 4 * math.pi if doubled else 2 * math.pi
        # rotational symmetry: a pair is determined by its (shorter) separation along the cover
        a, b = rng.uniform(0, period, (2, 100))
        sep = np.abs(a - b) % period
        sep = np.minimum(sep, period - sep)
        ratios = np.array([oracle.ratio(s) for s in sep])
        lib = verify_cone_lemma(n_center([[0.0, 0.0]], 1.0, alpha, 1.0, Disk((0.0, 0.0), 1.0)), 0, eps,
                                samples=100, doubled=doubled, rng=5)
        ok &= bool(np.all(ratios <= lam)) and lib.passed
        lines.append(f"alpha={alpha}: oracle max {ratios.max():.4f}, library max {lib.max_ratio:.4f} <= lambda {lam:.4f}")
    assert criterion(5, ok, "; ".join(lines), time.perf_counter() - t0, 60.0)


def test_criterion_06_two_center(criterion):
    t0 = time.perf_counter()
    p = n_center([[-1.0, 0.0], [1.0, 0.0]], 1.0, 1, 1.0, Disk((0.0, 0.0), 4.0))
    oracle = oracles.two_center_loop_oracle(2048, 400)
    loop = minimize_in_class(p, "x1 x2", MinimizeOptions(resolution=64))
    eight = minimize_in_class(p, "x1 x2^-1", MinimizeOptions(resolution=64))
    rel = abs(loop.length / oracle - 1)
    # the degenerate curve must lie on the inter-center segment
    off_axis = float(np.max(np.abs(eight.curve.vertices[:, 1])))
    inside = bool(np.all(np.abs(eight.curve.vertices[:, 0]) <= 1 + 1e-9))
    ok = loop.converged and rel <= 1e-3 and eight.converged and eight.collision_flags == {1, 2}
    ok &= off_axis < 1e-4 * 2.0 and inside
    detail = (f"J(x1 x2)={loop.length:.8f} vs oracle {oracle:.8f} (rel {rel:.1e}); "
              f"x1 x2^-1 flags {sorted(eight.collision_flags)}, max |y| {off_axis:.1e}")
    assert criterion(6, ok, detail, time.perf_counter() - t0, 120.0)


def _orbit_checks(args):
    problem, result = args
    traj = geodesic_to_trajectory(problem, result.curve)
    return traj.energy_deviation(problem), newton_residual(problem, traj)


def test_criterion_07_noncollision_orbits(criterion):
    t0 = time.perf_counter()
    p = triangle_problem()
    opt = MinimizeOptions(resolution=64, refinement_levels=3)
    results = survey_classes(p, 2, opt, workers=4)
    n_classes = len(enumerate_cyclic_words(3, 2))
    converged = [r for r in results if r.converged]
    free = [r for r in converged if not r.collision_flags]
    checks = []
    if free:
        with ProcessPoolExecutor(4) as ex:
            checks = list(ex.map(_orbit_checks, [(p, r) for r in free]))
    orbit_ok = all(dev <= 1e-6 * abs(p.energy) and res <= 1e-4 for dev, res in checks)
    # congruent classes: the triangle's symmetry group permutes the length-2 classes in orbits of equal length
    lengths = sorted(r.length for r in converged)
    groups: list[list[float]] = []
    for x in lengths:
        if groups and x - groups[-1][-1] < 1e-3 * x:
            groups[-1].append(x)
        else:
            groups.append([x])
    spread = max(((max(g) - min(g)) / min(g) for g in groups), default=math.nan)
    # supplementary: the loop around all three centers has a noncollision minimizer
    extra = minimize_in_class(p, "x1 x3 x2", MinimizeOptions(resolution=64, refinement_levels=4))
    extra_dev, extra_res = _orbit_checks((p, extra)) if not extra.collision_flags else (math.nan, math.nan)
    ok = len(free) >= 3 and orbit_ok and spread <= 1e-6
    detail = (f"{len(converged)}/{n_classes} classes converged, {len(free)} noncollision (need >= 3); "
              f"congruent-length spread {spread:.1e}; "
              f"supplementary x1 x3 x2: collisions {sorted(extra.collision_flags)}, "
              f"dH {extra_dev:.1e}, residual {extra_res:.1e}")
    assert criterion(7, ok, detail, time.perf_counter() - t0, 300.0)


def test_criterion_08_moderate_avoidance(criterion):
    t0 = time.perf_counter()
    p = triangle_problem([F(3, 2), 1, 1])
    word = HomotopyWord.parse("x1 x2")
    res = minimize_in_class(p, word, MinimizeOptions(resolution=64, refinement_levels=1))
    d0, d1 = (lv[1] for lv in res.level_min_distances[-2:])
    change = abs(d1 - d0) / d0
    verdict = collision_report(res, p)[1].verdict
    ok = is_admissible(word) and res.converged and 1 not in res.collision_flags and change < 0.1 and verdict == "avoided"
    detail = f"delta {d0:.5f} -> {d1:.5f} under mesh doubling (change {change:.1%}), verdict {verdict}"
    assert criterion(8, ok, detail, time.perf_counter() - t0, 300.0)


def test_criterion_09_convexity(criterion):
    t0 = time.perf_counter()
    signs = []
    ok = True
    for alpha in (0.5, 1, 1.5, 3):
        p = n_center([[0.0, 0.0], [1.0, 0.3]], 1.0, [alpha, 1], 1.0, Disk((0.5, 0.0), 3.0))
        pred = ball_convexity_sign(alpha)
        for eps in (1e-2, 1e-3, 1e-4):
            rep = ball_convexity(p, 0, eps)
            ok &= rep.passed == (pred == "convex")
        signs.append(f"{alpha}:{pred}")
    rng = np.random.default_rng(9)
    pos = rng.uniform(-1, 1, (3, 2))
    p0 = n_center(pos, rng.uniform(0.5, 2.0, 3), 1, 0.0, Disk((0.0, 0.0), 30.0))
    big = disk_convexity(p0, 30.0)
    ok &= big.passed
    detail = f"ball signs {', '.join(signs)}; h=0 disk R=30 min margin {big.min_margin:.3f}"
    assert criterion(9, ok, detail, time.perf_counter() - t0, 30.0)


def _random_problem(rng):
    n = int(rng.integers(2, 6))
    pos = []
    while len(pos) < n:
        c = rng.uniform(-1, 1, 2)
        if all(np.hypot(*(c - q)) > 0.3 for q in pos):
            pos.append(c)
    ladder = [F(1, 2), F(1), F(4, 3), F(3, 2), F(7, 5), F(8, 5), F(2), F(5, 2), F(3)]
    orders = [ladder[i] for i in rng.integers(0, len(ladder), n)]
    return n_center(pos, rng.uniform(0.5, 2.0, n), orders, float(rng.uniform(0.3, 2.0)), Disk((0.0, 0.0), 2.5))


def test_criterion_10_certificate_coherence(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    agree, ident, positives = 0, 0, 0
    for _ in range(50):
        p = _random_problem(rng)
        chi = int(rng.integers(0, 3))
        orders = [s.order for s in p.singularities]
        area = jacobi_area(p)
        cert = chaos_certificate(p, euler_char=chi, area=area)
        lb = cert.entropy_lower_bound
        positive = lb is not None and lb > 0
        expected = strength_sum(orders) > 2 * chi and all(classify_singularity(a).ladder_index != math.inf for a in orders)
        agree += positive == expected
        positives += positive
        _, A2, chi2 = excise_strong(orders, chi)
        ex = excise_strong_balls(p, chi)
        ident += (strength_sum(orders) - 2 * chi == A2 - 2 * chi2) and ex.identity_holds
    ok = agree == 50 and ident == 50
    assert criterion(10, ok, f"entropy/verdict agreement {agree}/50 ({positives} positive), excision identity {ident}/50",
                     time.perf_counter() - t0, 60.0)


def test_criterion_11_integrator(criterion):
    t0 = time.perf_counter()
    kepler = n_center([[0.0, 0.0]], 1.0, 1, 1.0, Disk((0.0, 0.0), 1e3))
    q0 = np.array([-10.0, 1.0])
    hyp = integrate_newton(kepler, PhaseState(q0, (math.sqrt(2 * (1 + 1 / np.hypot(*q0))), 0.0)), 100.0)
    drift = hyp.energy_deviation(kepler)
    c, m1, m2 = 1.0, 1.0, 0.6
    euler = n_center([[c, 0.0], [-c, 0.0]], [m1, m2], 1, 0.5, Disk((0.0, 0.0), 1e3))
    traj = integrate_newton(euler, PhaseState((0.3, 1.1), (0.6, -0.2)), 20.0, tolerance=1e-12)
    G = oracles.euler_integral_function()
    vals = G(traj.q[:, 0], traj.q[:, 1], traj.v[:, 0], traj.v[:, 1], c, m1, m2)
    g_dev = float(np.max(np.abs(vals - vals[0])))
    ok = hyp.status == "ok" and drift <= 1e-10 and traj.status == "ok" and g_dev <= 1e-8
    assert criterion(11, ok, f"Kepler drift {drift:.1e}; Euler integral deviation {g_dev:.1e}",
                     time.perf_counter() - t0, 30.0)
