"""ncenter command line: classify, certify, convexity, cone-check, minimize, survey, integrate.

Exit codes: 0 success or verdict true, 1 verdict false, 2 invalid input,
3 guard refusal, 4 nonconvergence.  Not a web service.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .classify import chaos_certificate, classify_singularity, ladder_value, strength_sum
from .model import Disk, PhaseState, Problem, Singularity, load_problem, parse_order, problem_to_dict

EXIT_OK = 0
EXIT_FALSE = 1
EXIT_INVALID = 2
EXIT_GUARD = 3
EXIT_NONCONVERGED = 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


@dataclass
class RunManifest:
    config_hash: str
    command: str
    parameters: dict
    tool_version: str
    seed: int
    outputs: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def load_schema(name: str) -> dict:
    """One of the shipped JSON schemas, e.g. load_schema("curve")."""
    from importlib.resources import files

    return json.loads(files("ncenter").joinpath("schemas", f"{name}.schema.json").read_text())


def config_hash(problem: Problem | None) -> str:
    doc = problem_to_dict(problem) if problem is not None else {}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, set):
        return sorted(x)
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


class _Run:
    """Shared state for one invocation: problem, output directory, manifest."""

    def __init__(self, args: argparse.Namespace, problem: Problem | None):
        self.args = args
        self.problem = problem
        self.out = Path(args.out)
        self.outputs: list[str] = []

    def write(self, name: str, text: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        p.write_text(text)
        self.outputs.append(name)
        return p

    def manifest(self, params: dict) -> None:
        m = RunManifest(config_hash(self.problem), self.args.command, params, __version__, self.args.seed,
                        list(self.outputs))
        self.write("manifest.json", _dump(m.to_json()))


def _load(args) -> Problem:
    if not args.config:
        raise CliError("--config FILE is required for this command")
    try:
        return load_problem(args.config)
    except FileNotFoundError as exc:
        raise CliError(f"config not found: {exc.filename}") from exc
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CliError(f"invalid config: {exc}") from exc


def _orders_arg(text: str) -> list:
    try:
        return [parse_order(t) for t in text.replace(",", " ").split()]
    except (ValueError, ZeroDivisionError) as exc:
        raise CliError(f"invalid --orders: {exc}") from exc


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("NCENTER_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise CliError(f"NCENTER_THREADS must be an integer, got {env!r}") from exc
    return 1


# ------------------------------------------------------------ commands


def cmd_classify(args) -> int:
    if args.orders is not None:
        orders = _orders_arg(args.orders)
        for a in orders:
            if not a > 0:
                raise CliError(f"order must be positive, got {a}")
        problem = None
    else:
        problem = _load(args)
        orders = [s.order for s in problem.singularities]
    print(f"{'j':>3}  {'alpha':>8}  {'kind':<9}  {'k':>4}  {'A_k':>6}")
    for j, a in enumerate(orders, 1):
        c = classify_singularity(a)
        k = "inf" if c.ladder_index == float("inf") else str(c.ladder_index)
        A = str(ladder_value(c.ladder_index))
        print(f"{j:>3}  {str(a):>8}  {c.kind:<9}  {k:>4}  {A:>6}")
    print(f"A = {strength_sum(orders)}")
    return EXIT_OK


def cmd_certify(args) -> int:
    if args.orders is not None:
        orders = _orders_arg(args.orders)
        sing = [Singularity((float(i), 0.0), 1.0, a) for i, a in enumerate(orders)]
        problem = Problem(tuple(sing), energy=1.0, domain=Disk((0.0, 0.0), 10.0 + len(sing)))
        # orders alone carry no geometry, so no Jacobi area and no entropy bound
        cert = chaos_certificate(problem, euler_char=args.euler_char, area=float("inf"))
    else:
        problem = _load(args)
        cert = chaos_certificate(problem, euler_char=args.euler_char)
    doc = cert.to_json()
    print(_dump(doc), end="")
    if args.out_file:
        Path(args.out_file).write_text(_dump(doc))
    return EXIT_OK if cert.verdict else EXIT_FALSE


def cmd_convexity(args) -> int:
    from .convexity import ConvexityError, disk_convexity, find_convex_radius

    problem = _load(args)
    if args.R == "auto":
        try:
            res = find_convex_radius(problem, samples=args.samples)
        except ConvexityError as exc:
            print(_dump({"error": str(exc)}), end="")
            return EXIT_FALSE
        doc = res.to_json()
        ok = True
    else:
        try:
            R = float(args.R)
        except ValueError as exc:
            raise CliError(f"--R must be 'auto' or a number, got {args.R!r}") from exc
        try:
            rep = disk_convexity(problem, R, args.samples)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
        doc = rep.to_json()
        ok = rep.passed
    print(_dump(doc), end="")
    return EXIT_OK if ok else EXIT_FALSE


def cmd_cone_check(args) -> int:
    from .levicivita import verify_cone_lemma

    problem = _load(args)
    j = args.center - 1
    if not 0 <= j < problem.n:
        raise CliError(f"--center must be in 1..{problem.n}")
    try:
        rep = verify_cone_lemma(problem, j, epsilon=args.eps, samples=args.samples,
                                doubled=args.alpha_mode == "double", rng=args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    doc = {"center": args.center, "alpha_mode": args.alpha_mode, **rep.to_json()}
    print(_dump(doc), end="")
    return EXIT_OK if rep.passed else EXIT_FALSE


def _guard_convex(problem: Problem, force: bool) -> None:
    from .convexity import domain_convexity

    rep = domain_convexity(problem)
    if not rep.passed and not force:
        raise CliError(
            f"domain boundary is not geodesically convex at h={problem.energy} (margin {rep.min_margin:.3g}); "
            "rerun with --force to minimize anyway",
            EXIT_GUARD,
        )


def _minimize_options(args):
    from .minimize import MinimizeOptions

    return MinimizeOptions(resolution=args.resolution, max_iterations=args.max_iterations,
                           refinement_levels=args.refine, seed=args.seed, check_convexity=False)


def cmd_minimize(args) -> int:
    from .dynamics import geodesic_to_trajectory
    from .homotopy import HomotopyWord, is_trivial, reduce_word
    from .minimize import collision_report, minimize_in_class

    problem = _load(args)
    try:
        word = reduce_word(HomotopyWord.parse(args.word))
    except ValueError as exc:
        raise CliError(f"invalid word: {exc}") from exc
    if is_trivial(word):
        raise CliError(f"word {args.word!r} is trivial (at most one generator); its infimum is a point curve")
    if any(j > problem.n for j, _ in word.letters):
        raise CliError(f"word uses generators beyond x{problem.n}")
    _guard_convex(problem, args.force)
    out_path = Path(args.out)
    curve_name = "curve.json"
    if out_path.suffix == ".json":
        curve_name = out_path.name
        args.out = str(out_path.parent)
    run = _Run(args, problem)
    try:
        res = minimize_in_class(problem, word, _minimize_options(args))
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    report = collision_report(res, problem)
    doc = res.to_json()
    doc["collision_report"] = {str(k): v.verdict for k, v in sorted(report.items())}
    run.write(curve_name, _dump(doc))
    notes = {}
    if res.collision_flags:
        notes["orbit"] = f"skipped: curve meets centers {sorted(res.collision_flags)}"
    else:
        try:
            traj = geodesic_to_trajectory(problem, res.curve)
            run.out.mkdir(parents=True, exist_ok=True)
            traj.to_csv(problem, run.out / "orbit.csv")
            run.outputs.append("orbit.csv")
        except ValueError as exc:
            notes["orbit"] = f"skipped: {exc}"
    if not args.no_svg:
        run.write("plot.svg", render_svg(problem, [res.curve.vertices], title=str(res.word)))
    run.manifest({"word": str(word), "resolution": args.resolution, "refine": args.refine,
                  "max_iterations": args.max_iterations, "force": bool(args.force), **notes})
    print(f"{res.word}  length={res.length:.10g}  converged={res.converged}  "
          f"collisions={sorted(res.collision_flags)}")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_survey(args) -> int:
    from .homotopy import enumerate_cyclic_words
    from .minimize import collision_report, survey_classes

    problem = _load(args)
    if args.max_length < 1:
        raise CliError("--max-length must be at least 1")
    if problem.n >= 2:
        _guard_convex(problem, args.force)
    run = _Run(args, problem)
    n_words = len(enumerate_cyclic_words(problem.n, args.max_length)) if problem.n >= 2 else 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        results = survey_classes(problem, args.max_length, _minimize_options(args), workers=_threads(args))
    rows = []
    print(f"{'word':<24}  {'length':>14}  {'conv':>5}  collisions")
    for r in results:
        rep = collision_report(r, problem)
        rows.append({
            "word": str(r.word),
            "length": r.length,
            "converged": bool(r.converged),
            "collision_flags": sorted(r.collision_flags),
            "min_center_distance": {str(k): v for k, v in sorted(r.min_center_distance.items())},
            "verdicts": {str(k): v.verdict for k, v in sorted(rep.items())},
        })
        print(f"{str(r.word):<24}  {r.length:>14.10g}  {str(r.converged):>5}  {sorted(r.collision_flags)}")
    run.write("survey.json", _dump({"max_word_length": args.max_length, "classes": n_words, "results": rows}))
    if results and not args.no_svg:
        run.write("survey.svg", render_svg(problem, [r.curve.vertices for r in results], title="survey"))
    run.manifest({"max_length": args.max_length, "resolution": args.resolution, "refine": args.refine,
                  "threads": _threads(args)})
    return EXIT_OK


def cmd_integrate(args) -> int:
    from .dynamics import integrate_newton

    problem = _load(args)
    try:
        q = [float(t) for t in args.q.split(",")]
        v = [float(t) for t in args.v.split(",")]
        if len(q) != 2 or len(v) != 2:
            raise ValueError
    except ValueError as exc:
        raise CliError("--q and --v take two comma-separated numbers") from exc
    run = _Run(args, problem)
    try:
        traj = integrate_newton(problem, PhaseState(q, v), args.duration, args.tolerance)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    run.out.mkdir(parents=True, exist_ok=True)
    traj.to_csv(problem, run.out / "orbit.csv")
    run.outputs.append("orbit.csv")
    summary = {**traj.to_json(), "energy_drift": traj.energy_deviation(problem)}
    run.manifest({"q": q, "v": v, "duration": args.duration, "tolerance": args.tolerance})
    print(_dump(summary), end="")
    return EXIT_OK


# ------------------------------------------------------------ plotting


def render_svg(problem: Problem, curves: list[np.ndarray], title: str = "") -> str:
    """Static figure: domain boundary, centers (labelled), closed curves."""
    import io

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "ncenter"
    fig, ax = plt.subplots(figsize=(5, 5))
    bd = problem.domain.boundary(512)
    bd = np.vstack([bd, bd[:1]])
    ax.plot(bd[:, 0], bd[:, 1], color="0.6", lw=0.8)
    for c in curves:
        c = np.vstack([c, c[:1]])
        ax.plot(c[:, 0], c[:, 1], lw=1.0)
    for j, s in enumerate(problem.singularities, 1):
        ax.plot(*s.position, "k.", ms=6)
        ax.annotate(f"a{j}", s.position, textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_aspect("equal")
    ax.set_title(title, fontsize=9)
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


# ------------------------------------------------------------ parser


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    def d(value):
        return argparse.SUPPRESS if suppress else value

    p.add_argument("--config", default=d(None), help="problem JSON file")
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--out", default=d("."), help="output directory (minimize also accepts a .json file path)")
    p.add_argument("--threads", type=int, default=d(None), help="worker processes (default: NCENTER_THREADS or 1)")


def _subparser_class(common: argparse.ArgumentParser):
    class Sub(argparse.ArgumentParser):
        def __init__(self, *a, **k):
            k.setdefault("parents", [common])
            super().__init__(*a, **k)

    return Sub


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ncenter", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ncenter {__version__}")
    _global_flags(p, suppress=False)
    # the same flags are accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_subparser_class(common))

    s = sub.add_parser("classify", help="per-center strength classes and A(Delta)")
    s.add_argument("--orders", help="orders instead of a config, e.g. '1,1,1,4/3'")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("certify", help="chaos certificate as JSON")
    s.add_argument("--orders", help="orders instead of a config")
    s.add_argument("--euler-char", type=int, default=None, help="Euler characteristic of the base (default: domain's)")
    s.add_argument("--out-file", default=None, help="also write the JSON here")
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("convexity", help="disk convexity report or radius search")
    s.add_argument("--R", default="auto", help="'auto' or a radius")
    s.add_argument("--samples", type=int, default=1024)
    s.set_defaults(func=cmd_convexity)

    s = sub.add_parser("cone-check", help="numerical cone lemma at one center")
    s.add_argument("--center", type=int, required=True, help="1-based center index")
    s.add_argument("--alpha-mode", choices=["single", "double"], default="single")
    s.add_argument("--eps", type=float, default=None)
    s.add_argument("--samples", type=int, default=100)
    s.set_defaults(func=cmd_cone_check)

    for name, helptext in (("minimize", "shortest curve in one class"), ("survey", "all classes up to a word length")):
        s = sub.add_parser(name, help=helptext)
        if name == "minimize":
            s.add_argument("--word", required=True, help="e.g. 'x1 x2^-1'")
            s.set_defaults(func=cmd_minimize)
        else:
            s.add_argument("--max-length", type=int, required=True)
            s.set_defaults(func=cmd_survey)
        s.add_argument("--resolution", type=int, default=64)
        s.add_argument("--refine", type=int, default=1, help="mesh doublings after the first convergence")
        s.add_argument("--max-iterations", type=int, default=4000)
        s.add_argument("--force", action="store_true", help="run even if the domain is not certified convex")
        s.add_argument("--no-svg", action="store_true")

    s = sub.add_parser("integrate", help="integrate Newton's equation and write orbit.csv")
    s.add_argument("--q", required=True, help="x,y")
    s.add_argument("--v", required=True, help="vx,vy")
    s.add_argument("--duration", type=float, required=True)
    s.add_argument("--tolerance", type=float, default=1e-10)
    s.set_defaults(func=cmd_integrate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"ncenter: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
