"""Command-line interface: problem ingestion, bundled examples, reports.

Subcommands:
  solve PATH          run the hierarchy driver on a problem file
  examples [NAME]     list or run the bundled fixture corpus (ex51..ex56)
  check-moments PATH  standalone representing-measure check for a sequence

Problem and report formats are JSON, validated against the schemas shipped
in dromkit/schemas; every rejection names the offending path.  Exit codes:
0 certified, 1 input error, 2 undecided (or fixture mismatch), 3
infeasible or unbounded.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from importlib import resources

import jsonschema
import numpy as np

from .conesolve import SolverOptions
from .drom import (
    CertificateSet,
    DromOptions,
    DromProblem,
    LmiYBlock,
    PolyhedralYBlock,
    ReportStatus,
    SecondOrderYBlock,
    SolveReport,
    Tightness,
    assemble_order_k,
    certify,
    run,
)
from .momentkit import (
    AtmpStatus,
    SemiAlgSet,
    Tms,
    atmp_solve,
    check_flat,
    extract_atoms,
    ExtractionError,
)
from .polycore import Poly, basis_size
from .soskit import random_sos

REPORT_SCHEMA_VERSION = "1"
EXAMPLE_NAMES = ("ex51", "ex52", "ex53", "ex54", "ex55", "ex56")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_UNDECIDED = 2
EXIT_INFEASIBLE = 3


class ProblemFormatError(ValueError):
    """Problem file failed schema or consistency validation."""


def _load_schema(name: str) -> dict:
    text = resources.files("dromkit.schemas").joinpath(name).read_text()
    return json.loads(text)


def _validate(instance: dict, schema_name: str) -> None:
    schema = _load_schema(schema_name)
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(instance), key=lambda e: len(list(e.absolute_path)))
    if errors:
        err = errors[-1]
        raise ProblemFormatError(f"at {err.json_path}: {err.message}")


def _poly_from_terms(terms: list, nvars: int, path: str) -> Poly:
    acc = {}
    for i, term in enumerate(terms):
        exp = tuple(term["exponent"])
        if len(exp) != nvars:
            raise ProblemFormatError(
                f"at {path}[{i}].exponent: has {len(exp)} entries, expected {nvars}"
            )
        acc[exp] = acc.get(exp, 0.0) + float(term["coeff"])
    return Poly(nvars, acc)


def _terms_from_poly(poly: Poly) -> list:
    order = sorted(poly.coeffs, key=lambda a: (sum(a), tuple(-e for e in a)))
    return [{"exponent": list(a), "coeff": poly.coeffs[a]} for a in order]


def load_problem(data: dict) -> tuple[DromProblem, DromOptions, dict | None]:
    """Build the problem, run options and optional expected block from JSON."""
    _validate(data, "problem.schema.json")
    dims = data["dimensions"]
    n, p, d = dims["n"], dims["p"], dims["d"]
    L = basis_size(p, d)

    f = _poly_from_terms(data["objective"], n, "$.objective")

    inequalities, equalities = [], []
    for i, entry in enumerate(data.get("decision_constraints", [])):
        poly = _poly_from_terms(entry["terms"], n, f"$.decision_constraints[{i}].terms")
        if entry.get("equality", False):
            equalities.append(poly)
        else:
            inequalities.append(poly)
    constraints = tuple(inequalities)
    for h in equalities:
        constraints = constraints + (h, -h)

    gens = []
    for i, entry in enumerate(data["support"]):
        gens.append(_poly_from_terms(entry["terms"], p, f"$.support[{i}].terms"))
    support = SemiAlgSet(generators=tuple(gens))

    hspec = data["h"]
    if "matrix" in hspec:
        A = np.asarray(hspec["matrix"]["A"], dtype=float)
        b = np.asarray(hspec["matrix"]["b"], dtype=float)
        if A.shape != (L, n):
            raise ProblemFormatError(
                f"at $.h.matrix.A: shape {A.shape} does not match "
                f"(basis({p},{d}) = {L}) x n = {n}"
            )
        if b.shape != (L,):
            raise ProblemFormatError(f"at $.h.matrix.b: length {b.shape[0]}, expected {L}")
        kwargs = {"A": A, "b": b}
        problem = DromProblem(
            n=n, p=p, d=d, f=f, constraints=constraints, support=support,
            y_blocks=_load_moment_set(data["moment_set"], L), **kwargs,
        )
    else:
        triples = []
        for i, t in enumerate(hspec["bilinear_terms"]):
            xe, xie = tuple(t["x_exponent"]), tuple(t["xi_exponent"])
            if len(xe) != n:
                raise ProblemFormatError(
                    f"at $.h.bilinear_terms[{i}].x_exponent: "
                    f"has {len(xe)} entries, expected {n}"
                )
            if len(xie) != p:
                raise ProblemFormatError(
                    f"at $.h.bilinear_terms[{i}].xi_exponent: "
                    f"has {len(xie)} entries, expected {p}"
                )
            if sum(xie) > d:
                raise ProblemFormatError(
                    f"at $.h.bilinear_terms[{i}].xi_exponent: degree {sum(xie)} > d = {d}"
                )
            triples.append((xe, xie, float(t["coeff"])))
        try:
            problem = DromProblem.from_bilinear_terms(
                n=n, p=p, d=d, terms=triples, f=f, constraints=constraints,
                support=support, y_blocks=_load_moment_set(data["moment_set"], L),
            )
        except ValueError as exc:
            raise ProblemFormatError(f"at $.h.bilinear_terms: {exc}") from exc

    options = _load_options(data.get("options", {}))
    return problem, options, data.get("expected")


def _load_moment_set(entries: list, L: int) -> tuple:
    blocks = []
    for i, entry in enumerate(entries):
        path = f"$.moment_set[{i}]"
        try:
            if "polyhedral" in entry:
                spec = entry["polyhedral"]
                blocks.append(
                    PolyhedralYBlock(
                        T=np.asarray(spec["T"], dtype=float),
                        u=np.asarray(spec["u"], dtype=float),
                        homogenized=spec.get("homogenized", False),
                    )
                )
            elif "lmi" in entry:
                spec = entry["lmi"]
                blocks.append(
                    LmiYBlock(
                        coeff_mats=np.asarray(spec["coeff_mats"], dtype=float),
                        B=np.asarray(spec["B"], dtype=float),
                        bounded=spec["bounded"],
                    )
                )
            else:
                spec = entry["second_order"]
                blocks.append(
                    SecondOrderYBlock(
                        rows=np.asarray(spec["rows"], dtype=float),
                        offset=np.asarray(spec["offset"], dtype=float),
                    )
                )
        except ValueError as exc:
            raise ProblemFormatError(f"at {path}: {exc}") from exc
        if blocks[-1].y_dim != L:
            raise ProblemFormatError(
                f"at {path}: block acts on y of length {blocks[-1].y_dim}, expected {L}"
            )
    return tuple(blocks)


def _load_options(spec: dict) -> DromOptions:
    tols = spec.get("tolerances", {})
    overrides = None
    if "multiplier_degrees" in spec:
        overrides = {int(k): int(v) for k, v in spec["multiplier_degrees"].items()}
    return DromOptions(
        order=spec.get("order"),
        max_order=spec.get("max_order"),
        level_max=spec.get("level_max"),
        seed=spec.get("seed", 42),
        tol_certificate=tols.get("certificate", 1e-6),
        tol_complementarity=tols.get("complementarity", 1e-5),
        tol_moment_match=tols.get("moment_match", 1e-4),
        tol_support=tols.get("support", 1e-6),
        ball_radius=spec.get("ball_radius"),
        multiplier_overrides=overrides,
    )


def problem_to_dict(problem: DromProblem, options: DromOptions | None = None) -> dict:
    """Serialize a problem back to the file format (round-trip safe)."""
    out = {
        "monomial_order": "grlex",
        "schema_version": "1",
        "dimensions": {"n": problem.n, "p": problem.p, "d": problem.d},
        "objective": _terms_from_poly(problem.f),
        "decision_constraints": [
            {"terms": _terms_from_poly(c), "equality": False} for c in problem.constraints
        ],
        "support": [{"terms": _terms_from_poly(g)} for g in problem.support.generators],
        "h": {"matrix": {"A": problem.A.tolist(), "b": problem.b.tolist()}},
        "moment_set": [],
    }
    for blk in problem.y_blocks:
        if isinstance(blk, PolyhedralYBlock):
            out["moment_set"].append(
                {"polyhedral": {"T": blk.T.tolist(), "u": blk.u.tolist(),
                                "homogenized": blk.homogenized}}
            )
        elif isinstance(blk, LmiYBlock):
            out["moment_set"].append(
                {"lmi": {"coeff_mats": [m.tolist() for m in blk.coeff_mats],
                         "B": blk.B.tolist(), "bounded": True}}
            )
        else:
            out["moment_set"].append(
                {"second_order": {"rows": blk.rows.tolist(), "offset": blk.offset.tolist()}}
            )
    if options is not None:
        opt = {}
        if options.order is not None:
            opt["order"] = options.order
        if options.max_order is not None:
            opt["max_order"] = options.max_order
        if options.seed != 42:
            opt["seed"] = options.seed
        if options.ball_radius is not None:
            opt["ball_radius"] = options.ball_radius
        if opt:
            out["options"] = opt
    return out


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def report_to_dict(report: SolveReport) -> dict:
    certs = None
    if report.certificates is not None:
        c = report.certificates
        certs = {
            "duality_gap": c.duality_gap,
            "feasibility_residual": float(c.feasibility_residual),
            "objective_match": float(c.objective_match),
            "complementarity": float(c.complementarity),
            "complementarity_scaled": float(c.complementarity_scaled),
            "moment_match": c.moment_match,
            "support_violation": c.support_violation,
            "cone_membership_residual": c.cone_membership_residual,
            "worst_case_expectation": c.worst_case_expectation,
        }
    measure = None
    if report.worst_case_measure is not None:
        measure = {
            "atoms": [a.tolist() for a in report.worst_case_measure.atoms],
            "weights": list(report.worst_case_measure.weights),
        }
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "status": report.status.value,
        "tightness": report.tightness.value,
        "order_k": report.order_k,
        "optimal_value": report.optimal_value,
        "gamma": report.gamma,
        "x": None if report.x is None else list(map(float, report.x)),
        "y": None if report.y is None else report.y.values.tolist(),
        "z": None if report.z is None else report.z.values.tolist(),
        "w": None if report.w is None else report.w.values.tolist(),
        "measure": measure,
        "certificates": certs,
        "attempts": report.attempts,
        "detail": report.detail,
        "seed": report.seed,
        "solver_iterations": report.solver_iterations,
        "wall_clock": report.wall_time,
    }


def recheck_certificates(problem: DromProblem, report_dict: dict) -> CertificateSet:
    """Recompute the pure-evaluation residuals from a stored report."""
    x = np.asarray(report_dict["x"], dtype=float)
    w = Tms(problem.n, _even_degree_of(problem.n, len(report_dict["w"])), report_dict["w"])
    y = Tms(problem.p, problem.d, report_dict["y"])
    return certify(
        problem, x, w, report_dict["optimal_value"], y,
        duality_gap=report_dict["certificates"]["duality_gap"],
    )


def _even_degree_of(nvars: int, length: int) -> int:
    deg = 0
    while basis_size(nvars, deg) < length:
        deg += 1
    if basis_size(nvars, deg) != length:
        raise ProblemFormatError(f"stored vector length {length} fits no degree")
    return deg


def _dump_report(report_dict: dict, path: str | None) -> None:
    text = json.dumps(report_dict, indent=2, sort_keys=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _exit_code(status: ReportStatus) -> int:
    if status == ReportStatus.SOLVED:
        return EXIT_OK
    if status in (ReportStatus.INFEASIBLE, ReportStatus.UNBOUNDED_OR_ORDER_LIMIT):
        return EXIT_INFEASIBLE
    return EXIT_UNDECIDED


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ProblemFormatError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(f"{path} is not valid JSON: {exc}") from exc


def _options_with_flags(options: DromOptions, args) -> DromOptions:
    kw = {}
    if args.order is not None:
        kw["order"] = args.order
    if args.max_order is not None:
        kw["max_order"] = args.max_order
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.tol is not None:
        kw["tol_certificate"] = args.tol
    if args.ball_radius is not None:
        kw["ball_radius"] = args.ball_radius
    if not kw:
        return options
    from dataclasses import replace

    return replace(options, **kw)


def cmd_solve(args) -> int:
    try:
        data = _read_json(args.path)
        problem, options, _ = load_problem(data)
    except ProblemFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    options = _options_with_flags(options, args)
    if args.dump_conic:
        program, _ = assemble_order_k(
            problem,
            options.order or max(
                math.ceil(problem.d / 2), math.ceil(problem.support.degree / 2)
            ),
        )
        with open(args.dump_conic, "w") as fh:
            fh.write(program.to_text() + "\n")
    report = run(problem, options)
    _dump_report(report_to_dict(report), args.report)
    return _exit_code(report.status)


def fixture_path(name: str):
    return resources.files("dromkit.fixtures").joinpath(f"{name}.json")


def load_fixture(name: str) -> tuple[DromProblem, DromOptions, dict | None]:
    data = json.loads(fixture_path(name).read_text())
    return load_problem(data)


def _check_fixture(name: str, report: SolveReport, expected: dict) -> list[str]:
    failures = []
    if "optimal_value" in expected:
        tol = expected.get("optimal_value_tol", 1e-4)
        if report.optimal_value is None or not math.isfinite(report.optimal_value):
            failures.append("no optimal value")
        elif abs(report.optimal_value - expected["optimal_value"]) > tol:
            failures.append(
                f"optimal value {report.optimal_value:.6f} vs "
                f"{expected['optimal_value']:.6f} (tol {tol:g})"
            )
    if "x" in expected:
        tol = expected.get("x_tol", 1e-2)
        want = np.asarray(expected["x"], dtype=float)
        if report.x is None:
            failures.append("no decision vector")
        elif np.max(np.abs(report.x - want)) > tol:
            failures.append(
                f"decision {np.round(report.x, 4).tolist()} vs "
                f"{want.tolist()} (sup tol {tol:g})"
            )
    if "order" in expected and report.order_k != expected["order"]:
        failures.append(f"certified at order {report.order_k}, expected {expected['order']}")
    if "moment_match_tol" in expected:
        got = None if report.certificates is None else report.certificates.moment_match
        if got is None or got > expected["moment_match_tol"]:
            failures.append(f"moment match {got} above {expected['moment_match_tol']:g}")
    if "atoms" in expected:
        tol = expected.get("atom_tol", 1e-2)
        want_atoms = [np.asarray(a, dtype=float) for a in expected["atoms"]]
        want_weights = expected.get("weights")
        mu = report.worst_case_measure
        if mu is None or len(mu) != len(want_atoms):
            failures.append(
                f"expected {len(want_atoms)} atoms, got "
                f"{0 if mu is None else len(mu)}"
            )
        else:
            used = set()
            for wa_i, wa in enumerate(want_atoms):
                hit = None
                for j, got_atom in enumerate(mu.atoms):
                    if j not in used and np.max(np.abs(got_atom - wa)) <= tol:
                        hit = j
                        break
                if hit is None:
                    failures.append(f"no atom matches {wa.tolist()} within {tol:g}")
                else:
                    used.add(hit)
                    if want_weights is not None:
                        dw = abs(mu.weights[hit] - want_weights[wa_i])
                        if dw > tol:
                            failures.append(
                                f"weight of atom {wa.tolist()}: "
                                f"{mu.weights[hit]:.4f} vs {want_weights[wa_i]:.4f}"
                            )
    if report.status != ReportStatus.SOLVED:
        failures.append(f"status {report.status.value}")
    return failures


def cmd_examples(args) -> int:
    if args.name is None:
        print("bundled fixtures:")
        for name in EXAMPLE_NAMES:
            data = json.loads(fixture_path(name).read_text())
            print(f"  {name}: {data.get('description', '')}")
        return EXIT_OK
    if args.name not in EXAMPLE_NAMES:
        print(
            f"error: unknown fixture {args.name!r}; valid names: "
            + ", ".join(EXAMPLE_NAMES),
            file=sys.stderr,
        )
        return EXIT_INPUT
    problem, options, expected = load_fixture(args.name)
    report = run(problem, options)
    failures = _check_fixture(args.name, report, expected or {})
    note = (expected or {}).get("note")
    if failures:
        print(f"{args.name}: FAIL")
        for line in failures:
            print(f"  - {line}")
        if note:
            print(f"  note: {note}")
        return EXIT_UNDECIDED
    value = "n/a" if report.optimal_value is None else f"{report.optimal_value:.4f}"
    print(f"{args.name}: PASS (value {value}, order {report.order_k})")
    return EXIT_OK


def cmd_check_moments(args) -> int:
    try:
        data = _read_json(args.path)
        _validate(data, "moments.schema.json")
        p, d = data["dimensions"]["p"], data["dimensions"]["d"]
        L = basis_size(p, d)
        if len(data["moments"]) != L:
            raise ProblemFormatError(
                f"at $.moments: length {len(data['moments'])}, expected {L}"
            )
        gens = tuple(
            _poly_from_terms(entry["terms"], p, f"$.support[{i}].terms")
            for i, entry in enumerate(data["support"])
        )
        support = SemiAlgSet(generators=gens)
    except ProblemFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    y = Tms(p, d, data["moments"])
    opts = data.get("options", {})
    seed = args.seed if args.seed is not None else opts.get("seed", 42)
    t0 = math.ceil(d / 2)
    d0 = max(1, math.ceil(support.degree / 2))
    level0 = args.level if args.level is not None else opts.get("level", t0 + 1)
    level_max = (
        args.max_level if args.max_level is not None else opts.get("max_level", t0 + 4)
    )
    level0 = max(level0, math.ceil(max(d, support.degree) / 2))
    R = random_sos(seed, p, t0)

    result = {"verdict": "undecided", "levels_tried": [], "seed": seed}
    for level in range(level0, level_max + 1):
        res = atmp_solve(y, support, R, level)
        result["levels_tried"].append(level)
        if res.status == AtmpStatus.INFEASIBLE:
            result["verdict"] = "no_measure"
            result["level"] = level
            break
        if res.status == AtmpStatus.INCONCLUSIVE:
            continue
        flat = check_flat(res.omega, d0, t0)
        if flat is None:
            continue
        try:
            mu = extract_atoms(res.omega, flat[0], flat[1], support=support, seed=seed)
        except ExtractionError:
            continue
        result["verdict"] = "measure"
        result["level"] = level
        result["flat_order"] = flat[0]
        result["rank"] = flat[1]
        result["atoms"] = [a.tolist() for a in mu.atoms]
        result["weights"] = list(mu.weights)
        break

    _dump_report(result, args.report)
    if result["verdict"] == "measure":
        return EXIT_OK
    if result["verdict"] == "no_measure":
        return EXIT_INFEASIBLE
    return EXIT_UNDECIDED


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dromkit",
        description="Robust moment optimization via moment-SOS relaxations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="solve a problem file")
    ps.add_argument("path")
    ps.add_argument("--order", type=int, default=None, help="initial relaxation order")
    ps.add_argument("--max-order", type=int, default=None, help="order budget")
    ps.add_argument("--seed", type=int, default=None, help="seed for the generic objective")
    ps.add_argument("--tol", type=float, default=None, help="certificate tolerance")
    ps.add_argument("--report", default=None, help="write the JSON report here")
    ps.add_argument("--ball-radius", type=float, default=None,
                    help="append a redundant ball constraint of this radius to the support")
    ps.add_argument("--dump-conic", default=None, metavar="PATH",
                    help="write the assembled standard-form program as text")
    ps.set_defaults(func=cmd_solve)

    pe = sub.add_parser("examples", help="list or run the bundled fixtures")
    pe.add_argument("name", nargs="?", default=None)
    pe.set_defaults(func=cmd_examples)

    pc = sub.add_parser("check-moments", help="representing-measure check for a sequence")
    pc.add_argument("path")
    pc.add_argument("--level", type=int, default=None, help="initial completion level")
    pc.add_argument("--max-level", type=int, default=None, help="completion level budget")
    pc.add_argument("--seed", type=int, default=None)
    pc.add_argument("--report", default=None)
    pc.set_defaults(func=cmd_check_moments)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
