"""Manufactured solutions, convergence-rate studies and the shift-ratio probe."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import sympy as sp

from .coefficients import CoefficientFamily, SourceData
from .errors import ConfigurationError, InstabilityError, ParameterError, WeightRangeError
from .expressions import X1, X2, PiecewiseExpr
from .exponents import ExponentReport, eta_for_domain
from .fem import FESpace, assemble, make_cutoffs, solve, solve_augmented
from .geometry import DIRICHLET, NEUMANN, DomainSpec, SmoothedDistance, classify_singular_points
from .mesh import GradedMesh, generate_initial_mesh, grading_for_order, refine
from .norms import (CallableField, CombinationField, ExprField, FEField, NormSpec, broken_norm,
                    broken_norm_details)

KINDS = ("smooth", "dirichlet-corner", "nn-corner", "cutoff-constant", "transmission-kink",
         "interface-flux-jump")


# -- manufactured cases ---------------------------------------------------------

def heptic_cutoff(r, r1, r2):
    """C^3 radial cutoff: 1 for r <= r1, 0 for r >= r2."""
    t = (r - r1) / (r2 - r1)
    blend = 1 - (35 * t**4 - 84 * t**5 + 70 * t**6 - 20 * t**7)
    return sp.Piecewise((1, r <= r1), (blend, r < r2), (0, True))


@dataclass
class ManufacturedCase:
    kind: str
    domain: DomainSpec
    fam: CoefficientFamily
    u: PiecewiseExpr
    data: SourceData
    regularity: str
    exponent: float | None = None
    vertex: int | None = None
    constant: float = 0.0
    flux: dict = field(default_factory=dict)     # subdomain -> (F1, F2) with F = a grad u

    def field(self, mesh) -> ExprField:
        return ExprField(self.u, mesh)

    def without_interface_data(self) -> "ManufacturedCase":
        return replace(self, data=replace(self.data, h=None, h_flux=None))


def _coeff_exprs(fam: CoefficientFamily, k: int, y):
    subs = {sym: float(v) for sym, v in zip(sp.symbols(f"y1:{fam.s + 1}"), np.atleast_1d(y))} if fam.s else {}
    get = lambda pw: sp.sympify(pw.expr_for(k)).subs(subs) if subs else pw.expr_for(k)  # noqa: E731
    return [get(p) for p in (fam.a11, fam.a12, fam.a21, fam.a22, fam.b1, fam.b2, fam.c)]


def derive_data(u_by_sub: dict, fam: CoefficientFamily, domain: DomainSpec, y=(), f_by_sub=None):
    """f = P u, flux F = a grad u per subdomain; g and h are taken as normal components of F.

    ``f_by_sub`` overrides the computed f (used where P u cancels analytically).
    """
    f, F1, F2 = {}, {}, {}
    for k in range(domain.n_subdomains):
        u = u_by_sub[k]
        a11, a12, a21, a22, b1, b2, c = _coeff_exprs(fam, k, y)
        ux, uy = sp.diff(u, X1), sp.diff(u, X2)
        # B(u, w) = int a^{ij} d_j u d_i w, so the flux is (a11 ux + a12 uy, a21 ux + a22 uy)
        fx = a11 * ux + a12 * uy
        fy = a21 * ux + a22 * uy
        f[k] = -(sp.diff(fx, X1) + sp.diff(fy, X2)) + b1 * ux + b2 * uy + c * u
        F1[k], F2[k] = fx, fy
    if f_by_sub is not None:
        f = dict(f_by_sub)
    flux = (PiecewiseExpr(F1), PiecewiseExpr(F2))
    has_neumann = any(s.bc == NEUMANN for s in domain.boundary_segments)
    data = SourceData(f=PiecewiseExpr(f), g_flux=flux if has_neumann else None,
                      h_flux=flux if domain.interface_segments else None)
    return data, {k: (F1[k], F2[k]) for k in F1}


def _polar(q, domain):
    """(r, theta) sympy expressions about q, theta measured CCW from the first boundary ray."""
    Q = q.location
    omega = q.total_angle
    alpha = q.start_direction + 0.5 * omega
    dx, dy = X1 - Q[0], X2 - Q[1]
    xr = math.cos(alpha) * dx + math.sin(alpha) * dy
    yr = -math.sin(alpha) * dx + math.cos(alpha) * dy
    r = sp.sqrt(dx**2 + dy**2)
    theta = sp.atan2(yr, xr) + omega / 2
    return r, theta, omega


def _clear_radius(q, domain):
    """Distance from q to the nearest vertex or segment not incident to q."""
    V = domain.vertices
    Q = np.asarray(q.location)
    best = math.inf
    for s in domain.segments:
        if q.vertex in (s.a, s.b):
            continue
        a, b = V[s.a], V[s.b]
        t = np.clip(np.dot(Q - a, b - a) / np.dot(b - a, b - a), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(Q - (a + t * (b - a)))))
    return best


def _pick_corner(domain, want):
    cands = []
    for q in classify_singular_points(domain):
        if not q.on_boundary or len(set(sub for _, sub in q.sectors)) != 1:
            continue
        if want == "DD" and q.bc_start == DIRICHLET and q.bc_end == DIRICHLET:
            cands.append(q)
        if want == "NN" and q.bc_start == NEUMANN and q.bc_end == NEUMANN:
            cands.append(q)
    if not cands:
        return None
    return max(cands, key=lambda q: (q.total_angle, -q.vertex))


def _constant_diffusion(fam, k, y):
    a11, a12, a21, a22, b1, b2, c = _coeff_exprs(fam, k, y)
    if a11.free_symbols or a12 != 0 or a21 != 0 or a22 != a11:
        return None
    return float(a11)


def make_case(kind: str, domain: DomainSpec, fam: CoefficientFamily | None = None, y=(),
              vertex: int | None = None, constant: float = 1.0) -> ManufacturedCase:
    """Manufactured solution with known regularity and the matching data (f, g, h)."""
    fam = fam or CoefficientFamily.build()
    f_override = None
    if kind not in KINDS:
        raise ConfigurationError(f"unknown case kind {kind!r}", "$.case")
    K = domain.n_subdomains
    V = domain.vertices
    if kind == "smooth":
        lo, hi = V.min(axis=0), V.max(axis=0)
        rect = len(V) == 4 and K == 1 and np.allclose(domain.area, np.prod(hi - lo))
        dir_segs = [s for s in domain.boundary_segments if s.bc == DIRICHLET]
        if rect and len(dir_segs) == 4:
            L = hi - lo
            u = sp.sin(sp.pi * (X1 - lo[0]) / L[0]) * sp.sin(sp.pi * (X2 - lo[1]) / L[1])
        else:
            u = sp.Integer(1)
            lines = set()
            for s in dir_segs:
                a, b = V[s.a], V[s.b]
                n = np.array([b[1] - a[1], a[0] - b[0]])
                n /= np.linalg.norm(n)
                key = (round(n[0], 12), round(n[1], 12), round(float(n @ a), 12))
                if key not in lines and (-key[0], -key[1], -key[2]) not in lines:
                    lines.add(key)
                    u = u * (n[0] * X1 + n[1] * X2 - float(n @ a)) / domain.diameter
            u = u * (1 + X1 * X2 / (1 + domain.diameter**2))
        u_by = {k: u for k in range(K)}
        regularity, exponent, q_vertex = "smooth", None, None
    elif kind in ("dirichlet-corner", "nn-corner", "cutoff-constant"):
        want = "DD" if kind == "dirichlet-corner" else "NN"
        q = None
        if vertex is not None:
            q = next((p for p in classify_singular_points(domain) if p.vertex == vertex), None)
        else:
            q = _pick_corner(domain, want)
        if q is None or len(set(sub for _, sub in q.sectors)) != 1:
            raise ConfigurationError(f"{kind} needs a single-material {want} corner", "$.domain")
        if (want == "DD") != (q.bc_start == DIRICHLET and q.bc_end == DIRICHLET) or \
                (want == "NN" and not (q.bc_start == NEUMANN and q.bc_end == NEUMANN)):
            raise ConfigurationError(f"vertex {q.vertex} is not a {want} corner", "$.domain")
        r, theta, omega = _polar(q, domain)
        lam = math.pi / omega
        d = _clear_radius(q, domain)
        zeta = heptic_cutoff(r, 0.2 * d, 0.8 * d)
        if kind == "dirichlet-corner":
            sing = r**lam * sp.sin(lam * theta)
        elif kind == "cutoff-constant":
            sing = sp.Float(constant)
        else:
            sing = constant + r**lam * sp.cos(lam * theta)
        u = zeta * sing
        u_by = {k: u for k in range(K)}
        coef = _constant_diffusion(fam, 0, y)
        if coef is not None and not fam.has_advection() and fam.c.is_zero():
            # sing is harmonic: expand -a lap(zeta sing) so f vanishes exactly where zeta = 1
            grad = lambda e: (sp.diff(e, X1), sp.diff(e, X2))  # noqa: E731
            (zx, zy), (sx, sy) = grad(zeta), grad(sing)
            lap_zeta = sp.diff(zeta, X1, 2) + sp.diff(zeta, X2, 2)
            f_override = {k: -coef * (lap_zeta * sing + 2 * (zx * sx + zy * sy)) for k in range(K)}
        regularity, exponent, q_vertex = "corner-singular", lam, q.vertex
    else:
        if K != 2 or not domain.interface_segments:
            raise ConfigurationError(f"{kind} needs two subdomains separated by an interface", "$.domain")
        lo, hi = V.min(axis=0), V.max(axis=0)
        iface = domain.interface_segments
        xs = {round(float(V[s.a][0]), 12) for s in iface} | {round(float(V[s.b][0]), 12) for s in iface}
        if len(xs) != 1 or not (np.allclose(lo, 0) and np.allclose(hi, 1)):
            raise ConfigurationError(f"{kind} needs the unit square split by a vertical interface",
                                     "$.domain")
        xm = xs.pop()
        left = int(domain.locate(np.array([[xm / 2, 0.5]]))[0])
        right = 1 - left
        if kind == "transmission-kink":
            aL, aR = _constant_diffusion(fam, left, y), _constant_diffusion(fam, right, y)
            if aL is None or aR is None or not np.isclose(xm, 0.5):
                raise ConfigurationError("transmission-kink needs constant isotropic diffusion per "
                                         "side and the interface x1 = 1/2", "$.coefficients")
            rr = aL / aR
            qq = -2.0 - 2.0 * rr
            s = sp.sin(sp.pi * X2)
            u_by = {left: X1 * s,
                    right: (sp.Rational(1, 2) + rr * (X1 - sp.Rational(1, 2))
                            + qq * (X1 - sp.Rational(1, 2)) ** 2) * s}
            regularity = "interface-kink"
        else:
            # continuous across the interface with a nonzero normal derivative there
            u = sp.sin(sp.pi * X1) * sp.sin(sp.pi * X2) * (1 + X1)
            u_by = {left: u, right: u}
            regularity = "smooth"
        exponent, q_vertex = None, None
    data, flux = derive_data(u_by, fam, domain, y, f_override)
    if kind == "transmission-kink":
        data = replace(data, h_flux=None)
    return ManufacturedCase(kind, domain, fam, PiecewiseExpr(u_by), data, regularity, exponent,
                            q_vertex, constant if kind in ("nn-corner", "cutoff-constant") else 0.0,
                            flux)


# -- rate studies -----------------------------------------------------------------

@dataclass
class RateReport:
    levels: list
    h: list
    ndof: list
    err_h1: list
    err_l2: list
    slope_h1: float
    slope_l2: float
    slope_h1_dof: float
    slope_l2_dof: float
    target: float
    mode: str
    degree: int
    kappa: dict = field(default_factory=dict)
    margin: float = 0.15

    @property
    def passed(self) -> bool:
        return self.slope_h1 >= self.target - self.margin

    def rows(self):
        return list(zip(self.levels, self.h, self.ndof, self.err_h1, self.err_l2))

    def to_dict(self) -> dict:
        return {"levels": self.levels, "h": self.h, "ndof": self.ndof, "err_h1": self.err_h1,
                "err_l2": self.err_l2, "slope_h1": self.slope_h1, "slope_l2": self.slope_l2,
                "slope_h1_dof": self.slope_h1_dof, "slope_l2_dof": self.slope_l2_dof,
                "target": self.target, "mode": self.mode, "degree": self.degree,
                "kappa": {str(k): v for k, v in self.kappa.items()}, "passed": self.passed,
                "margin": self.margin}


def fit_slope(x, e) -> float:
    """Least-squares slope of log e against log x."""
    x, e = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(e, dtype=float))
    A = np.column_stack([x, np.ones_like(x)])
    return float(np.linalg.lstsq(A, e, rcond=None)[0][0])


def grading_map(domain: DomainSpec, fam, m: int, y=(), report: ExponentReport | None = None,
                per_point: bool = True) -> dict:
    report = report or eta_for_domain(domain, fam, y)
    if per_point:
        return {c.vertex: grading_for_order(m, c.eta) for c in report.corners}
    return {c.vertex: grading_for_order(m, report.eta_min) for c in report.corners}


def mesh_hierarchy(domain: DomainSpec, levels: int, mode: str = "uniform", kappa: dict | None = None,
                   target_h: float | None = None) -> list[GradedMesh]:
    """Meshes for levels 0..levels; the initial mesh is refined once uniformly first so that no
    edge joins two singular vertices."""
    if mode not in ("uniform", "graded"):
        raise ParameterError(f"unknown mode {mode!r}", "$.mode")
    target_h = domain.diameter / 2 if target_h is None else target_h
    mesh = refine(generate_initial_mesh(domain, target_h), "uniform")
    mesh = replace(mesh, level=0)
    if mode == "graded":
        mesh = mesh.with_grading(kappa or {})
    out = [mesh]
    for _ in range(levels):
        mesh = refine(mesh, mode)
        out.append(mesh)
    return out


def error_norms(case: ManufacturedCase, sol, mesh, sd=None):
    exact = case.field(mesh)
    err = exact - FEField(sol.space, sol.u)
    p = sol.space.p
    qd = 2 * p + 4
    sd = sd or SmoothedDistance.from_domain(mesh.domain)
    h1 = broken_norm(err, NormSpec(1, 0.0, "broken-Hm"), mesh, sd, quad_degree=qd)
    l2 = broken_norm(err, NormSpec(0, 0.0, "broken-Hm"), mesh, sd, quad_degree=qd)
    return h1, l2


def run_rate_study(case: ManufacturedCase, p: int = 1, levels: int = 4, mode: str = "uniform",
                   kappa: dict | None = None, target: float | None = None, y=(),
                   target_h: float | None = None, check_monotone: bool = True,
                   quad_degree: int | None = None, fit_last: int | None = None) -> RateReport:
    """Solve on levels 0..L and fit H^1 / L^2 error slopes.

    The fit uses levels 1..L, or only the last ``fit_last`` levels (at least 4).
    """
    if levels < 4:
        raise ParameterError("rate studies need at least 4 fitted levels (levels >= 4)", "$.levels")
    if fit_last is not None and not 4 <= fit_last <= levels:
        raise ParameterError("fit_last must lie in [4, levels]", "$.fit_last")
    domain, fam = case.domain, case.fam
    if mode == "graded" and kappa is None:
        kappa = grading_map(domain, fam, p, y)
    meshes = mesh_hierarchy(domain, levels, mode, kappa, target_h)
    sd = SmoothedDistance.from_domain(domain)
    hs, nd, e1, e0 = [], [], [], []
    for mesh in meshes:
        space = FESpace(mesh, p)
        sol = solve(assemble(fam, space, y, data=case.data, quad_degree=quad_degree))
        h1, l2 = error_norms(case, sol, mesh, sd)
        hs.append(mesh.h)
        nd.append(space.n_free)
        e1.append(h1)
        e0.append(l2)
    lv = list(range(len(meshes)))
    # uniform: h halves per level; graded meshes keep the same nominal h-scale 2^-l
    hnom = [2.0**-l for l in lv]
    fit = slice(1, None) if fit_last is None else slice(-fit_last, None)
    rep = RateReport(
        levels=lv, h=hs, ndof=nd, err_h1=e1, err_l2=e0,
        slope_h1=fit_slope(hnom[fit], e1[fit]), slope_l2=fit_slope(hnom[fit], e0[fit]),
        slope_h1_dof=-fit_slope(nd[fit], e1[fit]), slope_l2_dof=-fit_slope(nd[fit], e0[fit]),
        target=float(p if target is None else target), mode=mode, degree=p,
        kappa=dict(kappa or {}))
    if check_monotone:
        for i in range(2, len(e1)):
            if e1[i] > 1.05 * e1[i - 1]:
                raise InstabilityError(f"H1 error increased from level {i - 1} to {i}",
                                       report=rep.to_dict())
    return rep


# -- shift probe ------------------------------------------------------------------

@dataclass
class ShiftReport:
    levels: list
    ratios: list
    numerators: list
    denominators: list
    weight: float | None
    m: int
    eta_min: float | None
    bounded: bool | None
    divergent: bool
    applicable: bool = True
    exact_norm: float | None = None
    ws_coefficients: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "levels", "ratios", "numerators", "denominators", "weight", "m", "eta_min", "bounded",
            "divergent", "applicable", "exact_norm", "ws_coefficients", "notes")}


def boundedness(ratios, window: int | None = 3, factor: float = 2.0) -> bool:
    vals = np.asarray(ratios[-window:] if window else ratios, dtype=float)
    if not np.all(np.isfinite(vals)):
        return False
    return bool(vals.max() / np.median(vals) <= factor)


def data_norm(data, mesh, spec_f: NormSpec, spec_gh: NormSpec, sd, y=()) -> float:
    """f in the f-norm plus volume extensions (flux components) of g and h in the data norm."""
    data = getattr(data, "data", data)
    total = 0.0
    if data.f is not None:
        total += broken_norm(ExprField(data.f, mesh, y), spec_f, mesh, sd)
    fluxes = [F for F in (data.g_flux, data.h_flux) if F is not None]
    for F in fluxes:
        for comp in F:
            total += broken_norm(ExprField(comp, mesh, y), spec_gh, mesh, sd)
    for scal in (data.g, data.h):
        if scal is not None:
            total += broken_norm(ExprField(scal, mesh, y), spec_gh, mesh, sd)
    return total


def shift_ratio(fam, data, space: FESpace, a: float | None, m: int, sd, y=(), cutoffs=None):
    """One shift ratio on a fixed space: (numerator, denominator, solution)."""
    mesh = space.mesh
    system = assemble(fam, space, y, data=data)
    if a is None:
        sol = solve(system)
        uf = FEField(space, sol.u)
        num = broken_norm(uf, NormSpec(m + 1, 0.0, "broken-Hm"), mesh, sd) + \
            broken_norm(uf, NormSpec(1, 0.0, "broken-Hm"), mesh, sd)
        f_spec = NormSpec(max(m - 1, 0), 0.0, "broken-Hm")
        gh_spec = NormSpec(m, 0.0, "broken-Hm")
    else:
        sol = solve_augmented(system, make_cutoffs(space) if cutoffs is None else cutoffs)
        num = broken_norm(FEField(space, sol.u_r), NormSpec(m + 1, a + 1.0, "broken-Kma"), mesh, sd) + \
            broken_norm(FEField(space, sol.u - sol.u_r), NormSpec(0, 0.0, "broken-Hm"), mesh, sd)
        f_spec = NormSpec(max(m - 1, 0), a - 1.0, "broken-Kma")
        gh_spec = NormSpec(m, a, "broken-Kma")
    den = data_norm(data, mesh, f_spec, gh_spec, sd, y)
    return num, den, sol


def shift_constant_probe(case: ManufacturedCase, a: float | None = 0.5, m: int = 1, levels: int = 4,
                         allow_out_of_range: bool = False, y=(), window: int | None = 3,
                         report: ExponentReport | None = None, p: int | None = None,
                         mode: str = "graded", start_level: int = 1) -> ShiftReport:
    """Ratios (|u_r|_{K^{m+1}_{a+1}} + |u_s|_{L2}) / (|f|_{K^{m-1}_{a-1}} + data norms) per level.

    ``a=None`` selects the unweighted (smooth) mode with broken H^{m+1} + H^1 norms.
    """
    domain, fam = case.domain, case.fam
    p = m + 1 if p is None else p
    if p < m + 1:
        raise ParameterError("the probe needs degree p >= m + 1", "$.p")
    smooth_mode = a is None
    notes = []
    eta = None
    if not smooth_mode:
        report = report or eta_for_domain(domain, fam, y)
        eta = report.eta_min
        if a <= 0:
            raise WeightRangeError("weight a must be positive", a=a, eta_min=eta)
        if a >= eta:
            if not allow_out_of_range:
                raise WeightRangeError(f"weight a = {a} is not below eta_min = {eta:.6g}",
                                       a=a, eta_min=eta, exponents=report.to_dict())
            notes.append(f"a = {a} >= eta_min = {eta:.6g}: divergence expected")
    if case.data.is_zero():
        return ShiftReport([], [], [], [], a, m, eta, None, False, applicable=False,
                           notes=["zero data: ratio not applicable"])
    if smooth_mode:
        meshes = mesh_hierarchy(domain, levels + start_level - 1, "uniform")[start_level:]
    else:
        kappa = grading_map(domain, fam, p, y, report) if mode == "graded" else None
        meshes = mesh_hierarchy(domain, levels + start_level - 1, mode, kappa)[start_level:]
    sd = SmoothedDistance.from_domain(domain)
    nums, dens, ratios, coeffs = [], [], [], []
    for mesh in meshes:
        num, den, sol = shift_ratio(fam, case.data, FESpace(mesh, p), a, m, sd, y)
        if not smooth_mode:
            coeffs.append(dict(sol.ws_coefficients))
        nums.append(num)
        dens.append(den)
        ratios.append(num / den if 0 < den < math.inf else math.nan)
    divergent = False
    exact = None
    if not smooth_mode:
        mesh = meshes[-1]
        cut = make_cutoffs(FESpace(mesh, 1))
        u_exact = case.field(mesh)
        terms = [(1.0, u_exact)]
        # the exact regular part subtracts u*(Q) chi_Q for Q in V_s
        for c in cut:
            t = int(np.nonzero(np.any(mesh.triangles == c.vertex, axis=1))[0][0])
            uq = float(u_exact.eval(np.array([t]), np.asarray(c.location)[None, :])[0])

            def chi(x, sub, alpha, c=c):
                return _cutoff_derivative(c, x, alpha)
            terms.append((-uq, CallableField(chi, mesh)))
        det = broken_norm_details(CombinationField(terms), NormSpec(m + 1, a + 1.0, "broken-Kma"),
                                  mesh, sd, quad_degree=2 * p + 4)
        exact = det.value
        if det.divergent:
            divergent = True
            notes.append("exact regular part has infinite weighted norm")
        growth = [b / a_ for a_, b in zip(nums, nums[1:]) if a_ > 0]
        if len(growth) >= 2 and all(g > 1.10 for g in growth[-2:]):
            divergent = True
            notes.append("weighted norm of the discrete regular part grows > 10% per level")
    bounded = None if divergent else boundedness(ratios, window)
    return ShiftReport(list(range(start_level, start_level + len(meshes))), ratios, nums, dens,
                       a, m, eta, bounded, divergent, exact_norm=exact, ws_coefficients=coeffs,
                       notes=notes)


def _cutoff_derivative(c, x, alpha):
    """Derivatives of the radial quintic cutoff chi_Q up to order 3, by sympy."""
    key = (c.r1, c.r2, tuple(alpha))
    fn = _CUTOFF_CACHE.get(key)
    if fn is None:
        r = sp.sqrt(X1**2 + X2**2)
        t = (r - c.r1) / (c.r2 - c.r1)
        expr = sp.Piecewise((1, r <= c.r1), (1 - t**3 * (10 - 15 * t + 6 * t**2), r < c.r2), (0, True))
        d = sp.diff(expr, X1, alpha[0], X2, alpha[1]) if sum(alpha) else expr
        fn = sp.lambdify((X1, X2), d, modules="numpy")
        _CUTOFF_CACHE[key] = fn
    x = np.asarray(x, dtype=float).reshape(-1, 2) - np.asarray(c.location)[None, :]
    with np.errstate(all="ignore"):
        out = fn(x[:, 0], x[:, 1])
    return np.broadcast_to(np.asarray(out, dtype=float), (len(x),)).copy()


_CUTOFF_CACHE: dict = {}
