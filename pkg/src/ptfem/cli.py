"""Command-line entry point: ``ptfem <subcommand> --problem problem.json ...``.

Exit codes: 0 success, 2 invalid input, 3 mathematical failure.  Failures
print a JSON diagnostic on stderr; artifacts are written atomically.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import problem as problem_mod
from .coefficients import (SamplingPlan, check_scalar_positivity_conditions, check_strong_ellipticity,
                           estimate_positivity_constants, verify_uniform_positivity)
from .convergence import (KINDS, grading_map, make_case, mesh_hierarchy, run_rate_study,
                          shift_constant_probe)
from .errors import PtfemError, ValidationError, WeightRangeError
from .exponents import eta_for_domain
from .fem import FESpace, assemble, h1_norm, make_cutoffs, solve, solve_augmented
from .geometry import SmoothedDistance, classify_singular_points
from .io import atomic_write_json, atomic_write_text, csv_text, fmt
from .mesh import write_mesh
from .norms import MODES, FEField, NormSpec, broken_norm_details
from .parallel import default_threads
from .parametric import (CollocationGrid, build_surrogate, decay_fit, l2uv_error, parametric_derivative,
                         parse_sampler, scan_samples)

SCHEMA_VERSION = problem_mod.SCHEMA_VERSION


# -- argument helpers ------------------------------------------------------------

def _floats(text: str, what: str) -> tuple:
    try:
        return tuple(float(v) for v in text.replace(" ", "").split(",") if v != "")
    except ValueError:
        raise ValidationError(f"cannot parse {what} {text!r}", f"$.{what}") from None


def _ints(text: str, what: str) -> tuple:
    try:
        return tuple(int(v) for v in text.replace(" ", "").split(",") if v != "")
    except ValueError:
        raise ValidationError(f"cannot parse {what} {text!r}", f"$.{what}") from None


def _y(args, prob) -> tuple:
    y = _floats(args.y, "y") if getattr(args, "y", None) else tuple(0.0 for _ in range(prob.s))
    if len(y) != prob.s:
        raise ValidationError(f"y needs {prob.s} components, got {len(y)}", "$.y")
    if any(abs(v) > 1 for v in y):
        raise ValidationError("y must lie in [-1, 1]^s", "$.y")
    return y


def _space(prob, args, y):
    level = prob.level if getattr(args, "level", None) is None else args.level
    degree = prob.degree if getattr(args, "degree", None) is None else args.degree
    mode = prob.mode if getattr(args, "mode", None) is None else args.mode
    if level < 0 or degree < 1:
        raise ValidationError("level must be >= 0 and degree >= 1", "$.discretization")
    kappa = grading_map(prob.domain, prob.fam, degree, y) if mode == "graded" else None
    mesh = mesh_hierarchy(prob.domain, level, mode, kappa, prob.target_h)[-1]
    if getattr(args, "export_mesh", None):
        write_mesh(mesh, args.export_mesh)
    return FESpace(mesh, degree), level, degree, mode, kappa


def _out(args, name: str) -> Path:
    return Path(args.out) / name


def _emit(summary: dict) -> None:
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")


# -- subcommands -------------------------------------------------------------------

def cmd_solve(args) -> dict:
    prob = problem_mod.load(args.problem)
    y = _y(args, prob)
    space, level, degree, mode, kappa = _space(prob, args, y)
    system = assemble(prob.fam, space, y, data=prob.data)
    has_vs = any(q.in_Vs for q in classify_singular_points(prob.domain))
    sol = solve_augmented(system) if has_vs else solve(system)
    mesh = space.mesh
    l2 = broken_norm_details(FEField(space, sol.u), NormSpec(0, 0.0, "broken-Hm"), mesh).value
    meta = {"schema_version": SCHEMA_VERSION, "problem": prob.raw, "level": level, "degree": degree,
            "mode": mode, "kappa": {str(k): v for k, v in sorted((kappa or {}).items())},
            "y": list(y), "norms": {"H1": h1_norm(space, sol.u), "L2": l2}, **sol.metadata(),
            "u": sol.u.tolist()}
    rows = [[fmt(x), fmt(z), fmt(sol.u[i])] for i, (x, z) in enumerate(mesh.vertices)]
    atomic_write_text(_out(args, "solution.txt"), "x1 x2 u\n" + "\n".join(" ".join(r) for r in rows) + "\n")
    atomic_write_json(_out(args, "solution.json"), meta)
    return {"ndof": space.ndof, "residual": sol.residual, "H1": meta["norms"]["H1"],
            "ws_coefficients": meta["ws_coefficients"]}


def cmd_exponents(args) -> dict:
    prob = problem_mod.load(args.problem)
    if prob.s and not args.y:
        rep = eta_for_domain(prob.domain, prob.fam, samples=[tuple(v) for v in scan_samples(prob.s, 3)])
    else:
        rep = eta_for_domain(prob.domain, prob.fam, _y(args, prob))
    out = rep.to_dict()
    out["recommended_kappa"] = {str(m): k for m, k in rep.recommended_kappa((1, 2, 3, 4)).items()}
    atomic_write_json(_out(args, "exponents.json"), out)
    return {"eta_min": rep.eta_min, "n_points": len(rep.corners)}


def cmd_norms(args) -> dict:
    path = Path(args.solution)
    try:
        sol = json.loads(path.read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read solution file: {exc.strerror}", "$") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON: {exc.msg}", "$") from None
    for key in ("problem", "level", "degree", "mode", "u"):
        if key not in sol:
            raise ValidationError(f"solution file lacks {key!r}", f"$.{key}")
    prob = problem_mod.from_dict(sol["problem"])
    kappa = {int(k): float(v) for k, v in sol.get("kappa", {}).items()} or None
    mesh = mesh_hierarchy(prob.domain, int(sol["level"]), sol["mode"], kappa, prob.target_h)[-1]
    space = FESpace(mesh, int(sol["degree"]))
    u = np.asarray(sol["u"], dtype=float)
    if u.shape != (space.ndof,):
        raise ValidationError(f"solution vector has {u.size} entries, expected {space.ndof}", "$.u")
    mode = args.norm_mode or ("broken-Kma" if args.a is not None else "broken-Hm")
    spec = NormSpec(args.m, 0.0 if args.a is None else args.a, mode)
    sd = SmoothedDistance.from_domain(prob.domain)
    det = broken_norm_details(FEField(space, u), spec, mesh, sd)
    cut = make_cutoffs(space)
    u_r = u.copy()
    for c in cut:
        u_r -= u[space.vertex_dof(c.vertex)] * c.values
    det_r = broken_norm_details(FEField(space, u_r), spec, mesh, sd)
    header = ["m", "a", "mode", "norm_u", "norm_u_r", "divergent"]
    row = [args.m, fmt(spec.a), mode, fmt(det.value), fmt(det_r.value), int(det.divergent or det_r.divergent)]
    text = csv_text(header, [row])
    atomic_write_text(_out(args, "norms.csv"), text)
    sys.stdout.write(text.splitlines()[1] + "\n")
    return {}


def cmd_converge(args) -> dict:
    prob = problem_mod.load(args.problem)
    y = tuple(0.0 for _ in range(prob.s))
    degree = args.p or prob.degree
    report = eta_for_domain(prob.domain, prob.fam, y)
    if args.a is not None and not 0 < args.a < report.eta_min:
        raise WeightRangeError(f"weight a = {args.a} is not in (0, eta_min = {report.eta_min:.6g})",
                               a=args.a, eta_min=report.eta_min)
    case = make_case(args.case, prob.domain, prob.fam, y)
    rep = run_rate_study(case, p=degree, levels=args.levels, mode=args.mode, y=y,
                         target_h=prob.target_h, check_monotone=not args.no_monotone_check,
                         fit_last=args.fit_last)
    out = {"schema_version": SCHEMA_VERSION, "case": args.case, "rate_report": rep.to_dict(),
           "eta_min": report.eta_min}
    if args.a is not None:
        probe = shift_constant_probe(case, a=args.a, m=args.m, levels=min(args.levels, 4), y=y,
                                     report=report)
        out["shift_probe"] = probe.to_dict()
    header = ["level", "h", "ndof", "err_h1", "err_l2"]
    atomic_write_text(_out(args, "converge.csv"), csv_text(header, [
        [lv, float(h), nd, float(e1), float(e0)] for lv, h, nd, e1, e0 in rep.rows()]))
    atomic_write_json(_out(args, "converge.json"), out)
    if args.emit_plot_data:
        lines = ["# level h ndof err_h1 err_l2"]
        lines += [f"{lv} {fmt(h)} {nd} {fmt(e1)} {fmt(e0)}" for lv, h, nd, e1, e0 in rep.rows()]
        atomic_write_text(_out(args, "converge.dat"), "\n".join(lines) + "\n")
    return {"slope_h1": rep.slope_h1, "slope_l2": rep.slope_l2, "passed": rep.passed}


def _grid(args, prob) -> CollocationGrid:
    counts = _ints(args.grid, "grid")
    if len(counts) == 1 and prob.s > 1:
        counts = counts * prob.s
    if len(counts) != prob.s:
        raise ValidationError(f"grid needs {prob.s} counts, got {len(counts)}", "$.grid")
    return CollocationGrid(counts, args.family)


def cmd_uq(args) -> dict:
    prob = problem_mod.load(args.problem)
    if prob.s < 1:
        raise ValidationError("uq needs a parametric problem (parameters.s >= 1)", "$.parameters.s")
    grid = _grid(args, prob)
    sampler = parse_sampler(args.sampler)
    space, *_ = _space(prob, args, tuple(0.0 for _ in range(prob.s)))
    out = {"schema_version": SCHEMA_VERSION}
    if space.n_free <= 1500:
        cert = verify_uniform_positivity(prob.fam, space, SamplingPlan("grid", 3), threads=args.threads)
        out["positivity"] = cert.to_dict()
    sur = build_surrogate(prob.fam, prob.data, space, grid, threads=args.threads)
    err = l2uv_error(sur, prob.fam, prob.data, space, sampler, seed=args.seed, threads=args.threads)
    out.update(sur.metadata)
    out["error"] = err.to_dict()
    if args.decay:
        ns, es = [], []
        for n in range(1, max(grid.counts) + 1):
            g = CollocationGrid(tuple(n for _ in range(prob.s)), args.family)
            s_n = build_surrogate(prob.fam, prob.data, space, g, threads=args.threads)
            ns.append(n)
            es.append(l2uv_error(s_n, prob.fam, prob.data, space, sampler, seed=args.seed,
                                 threads=args.threads).estimate)
        out["decay"] = {"n": ns, "errors": es, **decay_fit(ns, es)}
    header = [f"y{j + 1}" for j in range(prob.s)] + ["weight", "h1_norm"]
    rows = [[*map(float, y), float(w), h1_norm(space, u)]
            for y, w, u in zip(grid.nodes, grid.weights, sur.values)]
    atomic_write_text(_out(args, "uq_nodes.csv"), csv_text(header, rows))
    atomic_write_json(_out(args, "uq.json"), out)
    return {"dim_Sn": sur.dim_Sn, "estimate": err.estimate, "stderr": err.stderr}


def cmd_uq_derivative(args) -> dict:
    prob = problem_mod.load(args.problem)
    if prob.s < 1:
        raise ValidationError("uq-derivative needs parameters.s >= 1", "$.parameters.s")
    y0 = _floats(args.y0, "y0") if args.y0 else tuple(0.0 for _ in range(prob.s))
    alpha = _ints(args.alpha, "alpha")
    if len(y0) != prob.s or len(alpha) != prob.s:
        raise ValidationError(f"y0 and alpha need {prob.s} components", "$.alpha")
    space, *_ = _space(prob, args, y0)
    res = parametric_derivative(prob.fam, prob.data, space, y0, alpha, threads=args.threads)
    out = {"schema_version": SCHEMA_VERSION, **res.to_dict(), "ndof": space.ndof}
    atomic_write_json(_out(args, "uq_derivative.json"), out)
    return {"H1": res.norms["H1"], "fd_residual": res.fd_residual}


def cmd_check_positivity(args) -> dict:
    prob = problem_mod.load(args.problem)
    plan = SamplingPlan(args.plan, args.samples, args.seed)
    y = _y(args, prob)
    space, *_ = _space(prob, args, y)
    out = {"schema_version": SCHEMA_VERSION,
           "scalar_conditions": check_scalar_positivity_conditions(prob.fam, prob.domain, plan)}
    ell = check_strong_ellipticity(prob.fam, prob.domain, plan, space.mesh)
    out["ellipticity"] = {"r_e": ell.r_e, "R_e": ell.R_e, "witness_min": ell.witness_min,
                          "witness_max": ell.witness_max, "ok": ell.ok}
    if prob.s and not args.y:
        out["certificate"] = verify_uniform_positivity(prob.fam, space, plan, threads=args.threads).to_dict()
    else:
        est = estimate_positivity_constants(prob.fam, space, y)
        out["certificate"] = {"r": est.r_h, "R": est.R_h, "y": list(y), "ndof": est.ndof}
    atomic_write_json(_out(args, "positivity.json"), out)
    return {"r": out["certificate"]["r"], "R": out["certificate"]["R"]}


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for random sampling")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $PTFEM_THREADS or 1); results do not depend on it")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--export-mesh", dest="export_mesh", default=None, help="write the mesh here")

    disc = argparse.ArgumentParser(add_help=False)
    disc.add_argument("--level", type=int, default=None)
    disc.add_argument("--degree", type=int, default=None)
    disc.add_argument("--mode", choices=("uniform", "graded"), default=None)

    p = argparse.ArgumentParser(prog="ptfem", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ptfem schema {SCHEMA_VERSION}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common, disc], help="solve at one parameter value")
    s.add_argument("--problem", required=True)
    s.add_argument("--y", default=None, help='parameter value, e.g. "0.3,-0.1"')
    s.set_defaults(fn=cmd_solve)

    s = sub.add_parser("exponents", parents=[common], help="singular exponents per singular point")
    s.add_argument("--problem", required=True)
    s.add_argument("--y", default=None)
    s.set_defaults(fn=cmd_exponents)

    s = sub.add_parser("norms", parents=[common], help="broken H^m / K^m_a norms of a saved solution")
    s.add_argument("--solution", required=True)
    s.add_argument("--m", type=int, default=1)
    s.add_argument("--a", type=float, default=None, help="weight subscript of K^m_a")
    s.add_argument("--norm-mode", dest="norm_mode", choices=MODES, default=None)
    s.set_defaults(fn=cmd_norms)

    s = sub.add_parser("converge", parents=[common], help="manufactured-solution rate study")
    s.add_argument("--problem", required=True)
    s.add_argument("--case", choices=KINDS, required=True)
    s.add_argument("--p", type=int, default=None)
    s.add_argument("--levels", type=int, default=4)
    s.add_argument("--mode", choices=("uniform", "graded"), default="uniform")
    s.add_argument("--a", type=float, default=None, help="weight for the shift-ratio probe")
    s.add_argument("--m", type=int, default=1)
    s.add_argument("--fit-last", dest="fit_last", type=int, default=None)
    s.add_argument("--no-monotone-check", dest="no_monotone_check", action="store_true")
    s.add_argument("--emit-plot-data", dest="emit_plot_data", action="store_true")
    s.set_defaults(fn=cmd_converge)

    s = sub.add_parser("uq", parents=[common, disc], help="collocation surrogate and L2(U;H1) error")
    s.add_argument("--problem", required=True)
    s.add_argument("--grid", default="3")
    s.add_argument("--family", choices=("gauss-legendre", "clenshaw-curtis"), default="gauss-legendre")
    s.add_argument("--sampler", default="mc:200")
    s.add_argument("--decay", action="store_true", help="also fit the error decay over n = 1..max")
    s.set_defaults(fn=cmd_uq)

    s = sub.add_parser("uq-derivative", parents=[common, disc], help="parametric derivative at y0")
    s.add_argument("--problem", required=True)
    s.add_argument("--y0", default=None)
    s.add_argument("--alpha", required=True)
    s.set_defaults(fn=cmd_uq_derivative)

    s = sub.add_parser("check-positivity", parents=[common, disc], help="positivity and ellipticity")
    s.add_argument("--problem", required=True)
    s.add_argument("--y", default=None)
    s.add_argument("--plan", choices=("auto", "grid", "random"), default="auto")
    s.add_argument("--samples", type=int, default=None)
    s.set_defaults(fn=cmd_check_positivity)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    if args.threads is None:
        args.threads = default_threads()
    try:
        summary = args.fn(args)
    except PtfemError as exc:
        diag = exc.to_dict()
        diag["exit_code"] = exc.exit_code if exc.exit_code in (2, 3) else 3
        sys.stderr.write(json.dumps(diag, sort_keys=True, default=str) + "\n")
        return diag["exit_code"]
    if summary:
        _emit(summary)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
