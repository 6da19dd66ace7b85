"""Acceptance criteria 1-11.  Each test prints one PASS/FAIL line (also collected in the
terminal summary)."""

import filecmp
import json
import math
from pathlib import Path

import numpy as np
import pytest

from oracles import dense_oracle, two_sector_dd_exponents
from ptfem.cli import run
from ptfem.coefficients import CoefficientFamily, SourceData, estimate_positivity_constants
from ptfem.convergence import grading_map, make_case, mesh_hierarchy, run_rate_study, shift_constant_probe
from ptfem.errors import NotPositiveDefiniteError
from ptfem.exponents import compute_singular_exponents, oracle_exponents
from ptfem.fem import FESpace, assemble, h1_norm, solve, solve_augmented
from ptfem.geometry import DomainSpec, Subdomain
from ptfem.mesh import generate_initial_mesh, refine
from ptfem.parametric import CollocationGrid, build_surrogate, combined_rate_study, parametric_derivative, \
    uniform_bound_scan

PROBLEMS = Path(__file__).resolve().parents[1] / "problems"
LSHAPE = [[0, 0], [1, 0], [1, 1], [-1, 1], [-1, -1], [0, -1]]


def _lshape(**kw):
    return DomainSpec(LSHAPE, [Subdomain("a", (0, 1, 2, 3, 4, 5))], **kw)


def _square(**kw):
    return DomainSpec([[0, 0], [1, 0], [1, 1], [0, 1]], [Subdomain("o", (0, 1, 2, 3))], **kw)


def _split():
    return DomainSpec([[0, 0], [.5, 0], [1, 0], [1, 1], [.5, 1], [0, 1]],
                      [Subdomain("L", (0, 1, 4, 5)), Subdomain("R", (1, 2, 3, 4))])


# 1 ---------------------------------------------------------------------------------

def test_assembly_oracle(acceptance):
    def A(X):
        x, y = X[:, 0], X[:, 1]
        out = np.empty((len(X), 2, 2))
        out[:, 0, 0] = 1 + x ** 2 + 0.5 * np.sin(y)
        out[:, 0, 1] = out[:, 1, 0] = 0.2 * x * y
        out[:, 1, 1] = 2 + np.cos(x * y)
        return out

    def b(X):
        return np.column_stack([np.exp(X[:, 1]) / 3, 0.4 * X[:, 0]])

    fam_kw = dict(a11="1 + x1**2 + 0.5*sin(x2)", a12="0.2*x1*x2", a22="2 + cos(x1*x2)",
                  b1="exp(x2)/3", b2="0.4*x1", c="1 + x1*x2**2")
    worst = 0.0
    for dom in (_lshape(), _split(), _square()):
        mesh = generate_initial_mesh(dom, 1.0)
        assert mesh.n_triangles <= 20
        fam = CoefficientFamily.build(**fam_kw, domain=dom)
        data = SourceData.build(f="exp(x1)*cos(2*x2)", domain=dom)
        for p in (1, 2, 3):
            space = FESpace(mesh, p)
            sysm = assemble(fam, space, data=data, quad_degree=30)
            K, F = dense_oracle(space, A, b, lambda X: 1 + X[:, 0] * X[:, 1] ** 2,
                                lambda X: np.exp(X[:, 0]) * np.cos(2 * X[:, 1]))
            worst = max(worst, np.abs(sysm.full.toarray() - K).max() / np.abs(K).max(),
                        np.abs(sysm.load_full - F).max() / np.abs(F).max())
    ok = worst <= 1e-10
    acceptance(1, ok, f"max relative deviation from dense oracle {worst:.2e} (tol 1e-10)")
    assert ok


# 2 ---------------------------------------------------------------------------------

def test_coercivity_witness(acceptance):
    split = _split()
    fixtures = [
        (_square(), dict(a="1 + x1**2"), "1 + x1"),
        (_lshape(boundary_tags={"neumann": [[0, 1], [5, 0]]}), dict(a="2 + sin(x1*x2)"), "1"),
        (split, dict(a={"L": 1, "R": 3}, b1=0.5, c=0.2), "x1*x2"),
    ]
    margins = []
    for dom, coef, f in fixtures:
        space = FESpace(refine(refine(generate_initial_mesh(dom, 0.5))), 2)
        fam = CoefficientFamily.build(**coef, domain=dom)
        est = estimate_positivity_constants(fam, space)
        sysm = assemble(fam, space, data=SourceData.build(f=f, domain=dom))
        u = solve(sysm).u
        uf = u[space.free]
        lhs = float(uf @ (sysm.matrix @ uf))
        rhs = est.r_h * h1_norm(space, u) ** 2
        margins.append(lhs / rhs)
    dom = _square(default_bc="neumann")
    space = FESpace(refine(generate_initial_mesh(dom, 0.5)), 1)
    try:
        estimate_positivity_constants(CoefficientFamily.build(a=1, domain=dom), space)
        rejected = False
    except NotPositiveDefiniteError:
        rejected = True
    ok = all(m >= 1 - 1e-12 for m in margins) and rejected
    acceptance(2, ok, "B(u,u)/(r_h |u|^2) = " + ", ".join(f"{m:.3f}" for m in margins)
               + f"; pure Neumann rejected: {rejected}")
    assert ok


# 3 ---------------------------------------------------------------------------------

def test_singular_exponents(acceptance):
    angles = [math.pi / 3, math.pi / 2, 1.5 * math.pi, 1.95 * math.pi]
    dd_err = max(abs(compute_singular_exponents([w], "DD").eta - math.pi / w) for w in angles)
    omega = 1.5 * math.pi
    nn = compute_singular_exponents([omega], "NN")
    nn_ok = nn.excluded == [0.0] and np.allclose(nn.exponents, [k * math.pi / omega for k in (1, 2, 3)],
                                                 atol=1e-10)
    wedge_err = 0.0
    for widths, coeffs in (([math.pi / 2, math.pi], [1.0, 5.0]), ([0.7, 2.1], [3.0, 1.0]),
                           ([math.pi / 2, math.pi / 2], [1.0, 3.0])):
        got = np.array(compute_singular_exponents(widths, "DD", coeffs).exponents)
        ref = two_sector_dd_exponents(*widths, *coeffs)
        cheb = oracle_exponents("DD", widths, coeffs)
        got, ref, cheb = (v[v <= 2 - 1e-6] for v in (got, ref, cheb))
        assert len(got) == len(ref) == len(cheb)
        wedge_err = max(wedge_err, np.abs(got - ref).max(), np.abs(got - cheb).max())
    ok = dd_err <= 1e-10 and nn_ok and wedge_err <= 1e-8
    acceptance(3, ok, f"DD error {dd_err:.1e}; NN zero mode + k pi/omega: {nn_ok}; "
                      f"transmission wedge vs oracles {wedge_err:.1e}")
    assert ok


# 4 ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_rate_restoration(acceptance):
    case = make_case("dirichlet-corner", _lshape())
    uni = run_rate_study(case, p=2, levels=6, mode="uniform", fit_last=4)
    gra = run_rate_study(case, p=2, levels=6, mode="graded", check_monotone=False, fit_last=4)
    uni_ok = abs(uni.slope_h1 - 0.67) <= 0.15
    gra_ok = abs(gra.slope_h1 - 2.0) <= 0.15
    rates = np.log2(np.array(gra.err_h1[:-1]) / np.array(gra.err_h1[1:]))
    acceptance(4, uni_ok and gra_ok,
               f"uniform slope {uni.slope_h1:.3f} (0.67 +- 0.15); graded slope {gra.slope_h1:.3f} "
               f"(2.0 +- 0.15, kappa {gra.kappa[0]:.3f}); fit over levels 3-6, graded per-level "
               f"rates {np.round(rates, 2).tolist()}")
    assert uni_ok and gra_ok


# 5 ---------------------------------------------------------------------------------

def test_transmission_conformity(acceptance):
    dom = _split()
    fam = CoefficientFamily.build(a={"L": 1, "R": 3}, domain=dom)
    kink = make_case("transmission-kink", dom, fam)
    jump = make_case("interface-flux-jump", dom, fam)
    slopes = {}
    for name, case in (("kink", kink), ("jump", jump)):
        for p in (1, 2):
            slopes[name, p] = run_rate_study(case, p=p, levels=4).slope_h1
    noh = run_rate_study(jump.without_interface_data(), p=2, levels=4, check_monotone=False)
    full = run_rate_study(jump, p=2, levels=4)
    exercised = noh.err_h1[-1] > 100 * full.err_h1[-1]
    ok = all(abs(v - p) <= 0.15 for (_, p), v in slopes.items()) and jump.data.has_h() and exercised
    acceptance(5, ok, "H1 slopes " + ", ".join(f"{n} p={p}: {v:.3f}" for (n, p), v in slopes.items())
               + f"; error without h {noh.err_h1[-1]:.2e} vs with h {full.err_h1[-1]:.2e}")
    assert ok


# 6 ---------------------------------------------------------------------------------

def test_shift_ratio_boundedness(acceptance):
    case = make_case("nn-corner", _lshape(boundary_tags={"neumann": [[0, 1], [5, 0]]}))
    good = shift_constant_probe(case, a=0.5, m=1, levels=4, window=None)
    bad = shift_constant_probe(case, a=0.9, m=1, levels=4, allow_out_of_range=True)
    r = np.array(good.ratios)
    spread = float(r.max() / np.median(r))
    ok = good.bounded and spread <= 2 and bad.divergent and good.eta_min > 0.5
    acceptance(6, ok, f"a=0.5 < eta={good.eta_min:.4f}: ratios {np.round(r, 3).tolist()}, "
                      f"max/median {spread:.3f}; a=0.9 divergent: {bad.divergent}")
    assert ok


# 7 ---------------------------------------------------------------------------------

def test_ws_extraction(acceptance):
    dom = _square(boundary_tags={"neumann": [[0, 1], [3, 0]]})
    case = make_case("cutoff-constant", dom, constant=3.0)
    kappa = grading_map(dom, case.fam, 2)
    mesh = mesh_hierarchy(dom, 4, "graded", kappa)[4]
    sol = solve_augmented(assemble(case.fam, FESpace(mesh, 2), data=case.data))
    (cq,) = sol.ws_coefficients.values()
    ok = abs(cq - 3.0) <= 1e-3
    acceptance(7, ok, f"c_Q = {cq:.7f} at level 4 (target 3, tol 1e-3)")
    assert ok


# 8 ---------------------------------------------------------------------------------

def test_parametric_decay(acceptance):
    dom = _square()
    space = FESpace(mesh_hierarchy(dom, 2)[2], 2)
    fam = CoefficientFamily.build(a="2 + y1", s=1, family="affine", domain=dom)
    data = SourceData.build(f="1 + x1*(1 - x2)", s=1, domain=dom)
    ys = np.random.default_rng(8).uniform(-1, 1, 50)
    ref = [solve(assemble(fam, space, (y,), data=data)).u for y in ys]
    sup = {}
    for n in (4, 8):
        sur = build_surrogate(fam, data, space, CollocationGrid((n,)))
        sup[n] = max(h1_norm(space, u - sur((y,))) for u, y in zip(ref, ys))
    v = solve(assemble(CoefficientFamily.build(a=1, domain=dom), space,
                       data=SourceData.build(f="1 + x1*(1 - x2)", domain=dom))).u
    y0 = 0.3
    der = parametric_derivative(fam, data, space, (y0,), (1,)).derivative
    exact = -v / (2 + y0) ** 2
    rel = h1_norm(space, der - exact) / h1_norm(space, exact)
    ratio = sup[4] / sup[8]
    ok = ratio >= 100 and rel <= 1e-8
    acceptance(8, ok, f"sup error n=4 {sup[4]:.2e}, n=8 {sup[8]:.2e}, ratio {ratio:.0f} (>= 100); "
                      f"d/dy u relative error {rel:.1e}")
    assert ok


# 9 ---------------------------------------------------------------------------------

def test_uniform_bound_scan(acceptance):
    dom = _lshape()
    fam = CoefficientFamily.build(a="2 + 0.5*y1 + 0.5*y2*x1", s=2, family="affine", domain=dom)
    data = SourceData.build(f="1 + x1*x2", s=2, domain=dom)
    mesh = mesh_hierarchy(dom, 2, "graded", grading_map(dom, fam, 2, (0, 0)))[2]
    scan = uniform_bound_scan(fam, data, FESpace(mesh, 2), a=0.5, m=1)
    ok = len(scan.ratios) == 25 and scan.ratio_max_min <= 3
    acceptance(9, ok, f"5x5 scan max/min {scan.ratio_max_min:.3f} (<= 3), Spearman {scan.spearman:.2f}")
    assert ok


# 10 --------------------------------------------------------------------------------

@pytest.mark.slow
def test_combined_rate(acceptance):
    reps = {p: combined_rate_study(p=p) for p in (1, 2)}
    ok = all(r.passed for r in reps.values())
    acceptance(10, ok, "; ".join(f"m={p}: slope {r.slope:.3f} vs {r.target:.1f}, nodes {r.nodes}"
                                 for p, r in reps.items()))
    assert ok


# 11 --------------------------------------------------------------------------------

DETERMINISM_RUNS = [
    ["solve", "--problem", PROBLEMS / "lshape_nn.json", "--level", "2", "--degree", "2"],
    ["solve", "--problem", PROBLEMS / "transmission.json", "--level", "2"],
    ["exponents", "--problem", PROBLEMS / "parametric.json"],
    ["converge", "--problem", PROBLEMS / "square.json", "--case", "smooth", "--p", "2", "--a", "0.5",
     "--emit-plot-data"],
    ["uq", "--problem", PROBLEMS / "parametric.json", "--grid", "3,3", "--sampler", "mc:16", "--seed", "5",
     "--level", "1"],
    ["uq-derivative", "--problem", PROBLEMS / "parametric.json", "--alpha", "1,1", "--y0", "0.1,-0.2",
     "--level", "1"],
    ["check-positivity", "--problem", PROBLEMS / "parametric.json", "--level", "1"],
]


def test_determinism(acceptance, tmp_path, capsys):
    mismatches = []
    n_files = 0
    for i, argv in enumerate(DETERMINISM_RUNS):
        outs = {}
        for threads in (1, 8):
            out = tmp_path / f"run{i}_t{threads}"
            out.mkdir()
            code = run([str(a) for a in argv] + ["--threads", str(threads), "--out", str(out)])
            assert code == 0, argv
            (out / "stdout.txt").write_text(capsys.readouterr().out)
            outs[threads] = out
        names = sorted(p.name for p in outs[1].iterdir())
        assert names == sorted(p.name for p in outs[8].iterdir())
        match, diff, err = filecmp.cmpfiles(outs[1], outs[8], names, shallow=False)
        n_files += len(names)
        mismatches += [f"{argv[0]}:{n}" for n in diff + err]
    sol = tmp_path / "run0_t1" / "solution.json"
    for threads in (1, 8):
        out = tmp_path / f"norms_t{threads}"
        out.mkdir()
        assert run(["norms", "--solution", str(sol), "--a", "0.5", "--threads", str(threads),
                    "--out", str(out)]) == 0
    capsys.readouterr()
    if (tmp_path / "norms_t1" / "norms.csv").read_bytes() != (tmp_path / "norms_t8" / "norms.csv").read_bytes():
        mismatches.append("norms:norms.csv")
    n_files += 1
    dom = _lshape()
    fam = CoefficientFamily.build(a="2 + 0.5*y1 + 0.5*y2*x1", s=2, family="affine", domain=dom)
    data = SourceData.build(f="1 + x1*x2", s=2, domain=dom)
    space = FESpace(mesh_hierarchy(dom, 1)[1], 2)
    scans = [uniform_bound_scan(fam, data, space, a=0.5, m=1, threads=t).ratios for t in (1, 8)]
    if scans[0] != scans[1]:
        mismatches.append("uniform_bound_scan")
    surs = [build_surrogate(fam, data, space, CollocationGrid((3, 3)), threads=t).values for t in (1, 8)]
    if surs[0].tobytes() != surs[1].tobytes():
        mismatches.append("build_surrogate")
    ok = not mismatches
    acceptance(11, ok, f"{n_files} CLI artifacts plus scan and surrogate arrays compared across "
                       f"--threads 1 and 8; "
                       f"mismatches: {mismatches or 'none'}")
    assert ok
    assert json.loads((tmp_path / "run3_t1" / "converge.json").read_text())["shift_probe"]["bounded"]
