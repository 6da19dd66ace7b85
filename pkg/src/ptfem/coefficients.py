"""Parametric coefficient families, source data and positivity checks."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import sympy as sp
from scipy.stats import qmc

from .errors import (DataAccessError, NotPositiveDefiniteError, ParameterError,
                     SymmetryError, UniformPositivityError, ValidationError)
from .expressions import X1, X2, Y, PiecewiseExpr, parse_expression
from .geometry import NEUMANN, DomainSpec
from .parallel import ordered_map

SYMMETRY_TOL = 1e-12


def _pw(value, s, domain=None, path="$") -> PiecewiseExpr:
    """Build a PiecewiseExpr from an expression or a {subdomain name: expression} dict."""
    if isinstance(value, PiecewiseExpr):
        return value
    if isinstance(value, dict):
        exprs = {}
        for name, text in value.items():
            key = name
            if domain is not None:
                try:
                    key = domain.subdomain_index(name)
                except KeyError:
                    raise ValidationError(f"unknown subdomain {name!r}", f"{path}.{name}") from None
            exprs[key] = parse_expression(text, s, f"{path}.{name}")
        if domain is not None:
            missing = [sd.name for k, sd in enumerate(domain.subdomains) if k not in exprs]
            if missing:
                raise ValidationError(f"no expression for subdomain {missing[0]!r}", path)
        return PiecewiseExpr(exprs, s)
    if isinstance(value, sp.Basic):
        return PiecewiseExpr({None: value}, s)
    return PiecewiseExpr({None: parse_expression(value, s, path)}, s)


@dataclass
class CoefficientFamily:
    """y -> (a^{ij}, b^i, c) on U = [-1, 1]^s, piecewise per subdomain."""

    a11: PiecewiseExpr
    a12: PiecewiseExpr
    a21: PiecewiseExpr
    a22: PiecewiseExpr
    b1: PiecewiseExpr
    b2: PiecewiseExpr
    c: PiecewiseExpr
    s: int = 0
    family: str = "general"
    k0: object = "omega"
    order: int = 0  # declared broken smoothness in x

    @classmethod
    def build(cls, a=None, a11=None, a12=0, a21=None, a22=None, b1=0, b2=0, c=0, s=0,
              family="general", k0="omega", order=0, domain=None, path="$"):
        """Accepts expression strings, sympy expressions or per-subdomain dicts.

        ``a`` is the isotropic shorthand a * identity.
        """
        if a is not None:
            if a11 is not None or a22 is not None:
                raise ValidationError("give either 'a' or 'a11'/'a22'", f"{path}.a")
            a11 = a22 = a
        a11 = 1 if a11 is None else a11
        a22 = a11 if a22 is None else a22
        a21 = a12 if a21 is None else a21
        if s < 0:
            raise ParameterError("s must be >= 0", "$.parameters.s")
        if family not in ("affine", "general"):
            raise ValidationError(f"unknown family type {family!r}", "$.parameters.family")
        pw = {k: _pw(v, s, domain, f"{path}.{k}") for k, v in
              dict(a11=a11, a12=a12, a21=a21, a22=a22, b1=b1, b2=b2, c=c).items()}
        fam = cls(**pw, s=s, family=family, k0=k0, order=order)
        if family == "affine" and not fam.is_affine():
            raise ValidationError("family declared affine but coefficients are not affine in y",
                                  "$.parameters.family")
        return fam

    @property
    def parts(self) -> dict:
        return dict(a11=self.a11, a12=self.a12, a21=self.a21, a22=self.a22,
                    b1=self.b1, b2=self.b2, c=self.c)

    def _replace(self, fn) -> "CoefficientFamily":
        return CoefficientFamily(**{k: fn(v) for k, v in self.parts.items()}, s=self.s,
                                 family=self.family, k0=self.k0, order=self.order)

    def evaluate(self, x, sub, y=()):
        """A (n, 2, 2), b (n, 2), c (n,) at points ``x`` of subdomains ``sub``."""
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        n = len(x)
        A = np.empty((n, 2, 2))
        A[:, 0, 0] = self.a11(x, sub, y)
        A[:, 0, 1] = self.a12(x, sub, y)
        A[:, 1, 0] = self.a21(x, sub, y)
        A[:, 1, 1] = self.a22(x, sub, y)
        b = np.column_stack([self.b1(x, sub, y), self.b2(x, sub, y)])
        return A, b, self.c(x, sub, y)

    def derivative(self, alpha) -> "CoefficientFamily":
        """Coefficients of the y-derivative of the operator, d^alpha_y A_y."""
        return self._replace(lambda e: e.diff_alpha_y(alpha))

    def transposed(self) -> "CoefficientFamily":
        """Swap a^{12} and a^{21}."""
        parts = self.parts
        parts["a12"], parts["a21"] = parts["a21"], parts["a12"]
        return CoefficientFamily(**parts, s=self.s, family=self.family, k0=self.k0,
                                 order=self.order)

    def has_advection(self) -> bool:
        return not (self.b1.is_zero() and self.b2.is_zero())

    def depends_on_y(self) -> bool:
        return any(e.depends_on_y() for e in self.parts.values())

    def is_affine(self) -> bool:
        return all(e.is_affine_in_y() for e in self.parts.values())

    def k0_order(self) -> float:
        if self.k0 in ("inf", "omega", None):
            return float("inf")
        return float(self.k0)


# -- source data --------------------------------------------------------------

@dataclass
class SourceData:
    """Volume source f, Neumann data g and interface jump h.

    g and h are given either directly as scalar expressions or as volume
    vector fields whose normal component is taken: g = nu_out . G on the
    Neumann boundary, h = nu . (H|_+ - H|_-) on the interface.
    """

    f: PiecewiseExpr | None = None
    g: PiecewiseExpr | None = None
    h: PiecewiseExpr | None = None
    g_flux: tuple | None = None
    h_flux: tuple | None = None
    s: int = 0

    @classmethod
    def build(cls, f=None, g=None, h=None, s=0, domain=None, path="$"):
        return cls(f=None if f is None else _pw(f, s, domain, f"{path}.f"),
                   g=None if g is None else _pw(g, s, domain, f"{path}.g"),
                   h=None if h is None else _pw(h, s, domain, f"{path}.h"), s=s)

    def has_g(self) -> bool:
        return self.g is not None or self.g_flux is not None

    def has_h(self) -> bool:
        return self.h is not None or self.h_flux is not None

    def is_zero(self) -> bool:
        items = [self.f, self.g, self.h]
        items += list(self.g_flux or ()) + list(self.h_flux or ())
        return all(e is None or e.is_zero() for e in items)

    def f_at(self, x, sub, y=()) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        return np.zeros(len(x)) if self.f is None else self.f(x, sub, y)

    def g_at(self, x, segment, domain: DomainSpec, y=()) -> np.ndarray:
        if segment.kind != "boundary" or segment.bc != NEUMANN:
            raise DataAccessError(f"g is only defined on the Neumann boundary, not on segment "
                                  f"({segment.a}, {segment.b})", "$.data.g")
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        out = np.zeros(len(x))
        if self.g is not None:
            out += self.g(x, segment.owner, y)
        if self.g_flux is not None:
            nu = domain.outward_normal(segment)
            out += nu[0] * self.g_flux[0](x, segment.owner, y) + nu[1] * self.g_flux[1](x, segment.owner, y)
        return out

    def h_at(self, x, segment, domain: DomainSpec, y=()) -> np.ndarray:
        if segment.kind != "interface":
            raise DataAccessError(f"h is only defined on the interface, not on segment "
                                  f"({segment.a}, {segment.b})", "$.data.h")
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        out = np.zeros(len(x))
        if self.h is not None:
            out += self.h(x, segment.plus, y)
        if self.h_flux is not None:
            nu = domain.interface_normal(segment)
            for sign, sub in ((1.0, segment.plus), (-1.0, segment.minus)):
                out += sign * (nu[0] * self.h_flux[0](x, sub, y) + nu[1] * self.h_flux[1](x, sub, y))
        return out

    def _map(self, fn) -> "SourceData":
        opt = lambda e: None if e is None else fn(e)  # noqa: E731
        vec = lambda v: None if v is None else tuple(fn(e) for e in v)  # noqa: E731
        return SourceData(opt(self.f), opt(self.g), opt(self.h), vec(self.g_flux),
                          vec(self.h_flux), self.s)

    def derivative(self, alpha) -> "SourceData":
        return self._map(lambda e: e.diff_alpha_y(alpha))

    def scaled(self, factor) -> "SourceData":
        return self._map(lambda e: e.map(lambda x: factor * x))

    def __add__(self, other: "SourceData") -> "SourceData":
        def add(p, q):
            if p is None:
                return q
            if q is None:
                return p
            keys = set(p.exprs) | set(q.exprs)
            return PiecewiseExpr({k: p.expr_for(k) + q.expr_for(k) for k in keys}, max(p.s, q.s))

        def addv(u, v):
            if u is None:
                return v
            if v is None:
                return u
            return tuple(add(a, b) for a, b in zip(u, v))
        return SourceData(add(self.f, other.f), add(self.g, other.g), add(self.h, other.h),
                          addv(self.g_flux, other.g_flux), addv(self.h_flux, other.h_flux),
                          max(self.s, other.s))

    def depends_on_y(self) -> bool:
        items = [self.f, self.g, self.h] + list(self.g_flux or ()) + list(self.h_flux or ())
        return any(e is not None and e.depends_on_y() for e in items)


# -- sampling -----------------------------------------------------------------

@dataclass(frozen=True)
class SamplingPlan:
    """Parameter samples: full tensor grid (``count`` points per dimension) or quasi-random."""

    kind: str = "auto"
    count: int | None = None
    seed: int = 0

    def points(self, s: int) -> np.ndarray:
        if s == 0:
            return np.zeros((1, 0))
        kind = self.kind
        if kind == "auto":
            kind = "grid" if s <= 4 else "random"
        if kind == "grid":
            n = self.count or 3
            g = np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1)
            return np.array(list(itertools.product(g, repeat=s)))
        if kind == "random":
            n = self.count or 200
            sob = qmc.Halton(d=s, scramble=True, seed=self.seed)
            return 2.0 * sob.random(n) - 1.0
        raise ParameterError(f"unknown sampling plan {self.kind!r}", "$.plan")


def sample_points(domain: DomainSpec, mesh=None):
    """Spatial samples (x, sub): triangle vertices and interior quadrature points."""
    from .mesh import generate_initial_mesh, refine
    from .quadrature import triangle_rule

    if mesh is None:
        mesh = refine(generate_initial_mesh(domain, domain.diameter / 4), "uniform")
    ref, _ = triangle_rule(5)
    P = mesh.vertices[mesh.triangles]
    bary = np.column_stack([1 - ref.sum(axis=1), ref])
    bary = np.vstack([np.eye(3), bary])
    x = np.einsum("qk,tkd->tqd", bary, P).reshape(-1, 2)
    sub = np.repeat(mesh.tri_sub, len(bary))
    return x, sub


# -- ellipticity and positivity -----------------------------------------------

@dataclass
class EllipticityReport:
    r_e: float
    R_e: float
    witness_min: tuple
    witness_max: tuple
    n_samples: int

    @property
    def ok(self) -> bool:
        return self.r_e > 0


def check_strong_ellipticity(fam: CoefficientFamily, domain: DomainSpec, plan: SamplingPlan = None,
                             mesh=None) -> EllipticityReport:
    """Min/max eigenvalues of the symmetric 2x2 matrix a^{ij} over sampled (x, y)."""
    plan = plan or SamplingPlan()
    x, sub = sample_points(domain, mesh)
    r_e, R_e = np.inf, -np.inf
    wmin = wmax = None
    for y in plan.points(fam.s):
        A, _, _ = fam.evaluate(x, sub, y)
        scale = max(1.0, float(np.abs(A).max()))
        asym = np.abs(A[:, 0, 1] - A[:, 1, 0])
        if asym.max() > SYMMETRY_TOL * scale:
            i = int(np.argmax(asym))
            raise SymmetryError(f"a12 != a21 at x = {x[i].tolist()}, y = {list(y)}",
                                "$.coefficients", x=x[i], y=y)
        lam = np.linalg.eigvalsh(A)
        i, j = int(np.argmin(lam[:, 0])), int(np.argmax(lam[:, 1]))
        if lam[i, 0] < r_e:
            r_e, wmin = float(lam[i, 0]), (x[i].tolist(), list(map(float, y)))
        if lam[j, 1] > R_e:
            R_e, wmax = float(lam[j, 1]), (x[j].tolist(), list(map(float, y)))
    return EllipticityReport(r_e, R_e, wmin, wmax, len(x) * len(plan.points(fam.s)))


@dataclass
class PositivityEstimate:
    r_h: float
    R_h: float
    ndof: int
    eigenvector: np.ndarray | None = None


def estimate_positivity_constants(fam: CoefficientFamily, space, y=(), dense_limit: int = 1500,
                                  raise_on_failure: bool = True) -> PositivityEstimate:
    """Extreme generalized eigenvalues of sym(B_h(y)) against the discrete H^1 Gram matrix."""
    import scipy.linalg as sla
    from scipy.sparse.linalg import eigsh

    from .fem import assemble, h1_gram

    system = assemble(fam, space, y, rhs=False)
    S = system.sym
    G = h1_gram(space)
    n = S.shape[0]
    if n == 0:
        raise NotPositiveDefiniteError("no free degrees of freedom", eigenvector=np.zeros(0))
    if n <= dense_limit:
        lam, vec = sla.eigh(S.toarray(), G.toarray())
        r, R, v = float(lam[0]), float(lam[-1]), vec[:, 0]
    else:
        R = float(eigsh(S, k=1, M=G, which="LA", return_eigenvectors=False, tol=1e-10)[0])
        lam, vec = eigsh(S, k=1, M=G, sigma=-1e-3 * abs(R), which="LM", tol=1e-12)
        r, v = float(lam[0]), vec[:, 0]
    est = PositivityEstimate(r, R, n, v)
    if raise_on_failure and r <= 1e-10 * abs(R):
        full = np.zeros(space.ndof)
        full[space.free] = v / np.max(np.abs(v))
        raise NotPositiveDefiniteError(
            f"discrete form is not positive definite (r_h = {r:.3e}, R_h = {R:.3e})",
            eigenvector=full, r_h=r, R_h=R, y=list(np.atleast_1d(y)))
    return est


def check_scalar_positivity_conditions(fam: CoefficientFamily, domain: DomainSpec,
                                       plan: SamplingPlan = None, tol: float = 1e-10) -> dict:
    """Report on: div b = 0, nu . b = 0 on the Neumann boundary, c >= 0, Dirichlet part nonempty."""
    plan = plan or SamplingPlan()
    x, sub = sample_points(domain)
    ys = plan.points(fam.s)
    divb = PiecewiseExpr({k: fam.b1.diff_x(0).expr_for(k) + fam.b2.diff_x(1).expr_for(k)
                          for k in set(fam.b1.exprs) | set(fam.b2.exprs)}, fam.s)
    report = {}

    def worst(values, points, yv, cond):
        bad = ~cond(values)
        if np.any(bad):
            i = int(np.argmax(bad))
            return {"passed": False, "witness": {"x": points[i].tolist(), "y": list(map(float, yv)),
                                                 "value": float(values[i])}}
        return None

    res = {"passed": True, "witness": None}
    for y in ys:
        w = worst(divb(x, sub, y), x, y, lambda v: np.abs(v) <= tol)
        if w:
            res = w
            break
    report["divergence_free"] = res

    res = {"passed": True, "witness": None}
    t = np.linspace(0.0, 1.0, 11)
    for seg in domain.boundary_segments:
        if seg.bc != NEUMANN:
            continue
        pa, pb = domain.vertices[seg.a], domain.vertices[seg.b]
        pts = pa[None, :] + t[:, None] * (pb - pa)[None, :]
        nu = domain.outward_normal(seg)
        for y in ys:
            vals = nu[0] * fam.b1(pts, seg.owner, y) + nu[1] * fam.b2(pts, seg.owner, y)
            w = worst(vals, pts, y, lambda v: np.abs(v) <= tol)
            if w:
                res = w
                break
        if not res["passed"]:
            break
    report["neumann_normal_flux_zero"] = res

    res = {"passed": True, "witness": None}
    for y in ys:
        w = worst(fam.c(x, sub, y), x, y, lambda v: v >= -tol)
        if w:
            res = w
            break
    report["c_nonnegative"] = res
    report["dirichlet_nonempty"] = {"passed": domain.has_dirichlet, "witness": None}
    report["all_passed"] = all(v["passed"] for v in report.values() if isinstance(v, dict))
    return report


@dataclass
class PositivityCertificate:
    r: float
    R: float
    r_e: float
    R_e: float
    method: str
    samples: np.ndarray
    worst_y: np.ndarray
    per_sample: list = field(default_factory=list)
    analytic_bound: float | None = None
    analytic_c_bound: float | None = None
    analytic_failed: bool = False
    cross_check_ok: bool | None = None

    def to_dict(self) -> dict:
        return {
            "r": self.r, "R": self.R, "r_e": self.r_e, "R_e": self.R_e, "method": self.method,
            "worst_y": np.atleast_1d(self.worst_y).tolist(), "n_samples": int(len(self.samples)),
            "analytic_bound": self.analytic_bound, "analytic_c_bound": self.analytic_c_bound,
            "analytic_failed": self.analytic_failed, "cross_check_ok": self.cross_check_ok,
            "per_sample": [{"y": np.atleast_1d(y).tolist(), "r_h": r, "R_h": R}
                           for y, r, R in self.per_sample],
        }


def affine_lower_bounds(fam: CoefficientFamily, domain: DomainSpec, mesh=None):
    """(ess inf lambda_min(a_bar) - sum_j sup ||psi_j||_2, same bound for c) of an affine family."""
    x, sub = sample_points(domain, mesh)
    zero = np.zeros(fam.s)
    A0, _, c0 = fam.evaluate(x, sub, zero)
    a_bound = float(np.linalg.eigvalsh(0.5 * (A0 + A0.transpose(0, 2, 1)))[:, 0].min())
    c_bound = float(c0.min())
    for j in range(fam.s):
        alpha = tuple(1 if i == j else 0 for i in range(fam.s))
        dA, _, dc = fam.derivative(alpha).evaluate(x, sub, zero)
        a_bound -= float(np.linalg.norm(dA, ord=2, axis=(1, 2)).max())
        c_bound -= float(np.abs(dc).max())
    return a_bound, c_bound


def verify_uniform_positivity(fam: CoefficientFamily, space, plan: SamplingPlan = None,
                              threads: int | None = None, cross_tol: float = 1e-8) -> PositivityCertificate:
    """Estimate r_h, R_h at every sampled y; for affine families cross-check the analytic bound."""
    plan = plan or SamplingPlan()
    if fam.s < 1:
        raise ParameterError("uniform positivity needs s >= 1", "$.parameters.s")
    domain = space.mesh.domain
    ys = plan.points(fam.s)

    def one(y):
        try:
            return estimate_positivity_constants(fam, space, y)
        except NotPositiveDefiniteError as exc:
            raise UniformPositivityError(f"positivity fails at y = {list(map(float, y))}",
                                         y=list(map(float, y)), r_h=exc.details.get("r_h")) from None

    ests = ordered_map(one, ys, threads)
    r = np.array([e.r_h for e in ests])
    R = np.array([e.R_h for e in ests])
    i = int(np.argmin(r))
    ell = check_strong_ellipticity(fam, domain, plan, space.mesh)
    cert = PositivityCertificate(
        r=float(r[i]), R=float(R.max()), r_e=ell.r_e, R_e=ell.R_e,
        method=f"{plan.kind}:{len(ys)}", samples=ys, worst_y=ys[i],
        per_sample=[(y, float(a), float(b)) for y, a, b in zip(ys, r, R)])
    if fam.is_affine() and not fam.has_advection():
        a_lb, c_lb = affine_lower_bounds(fam, domain, space.mesh)
        cert.analytic_bound = a_lb
        cert.analytic_c_bound = c_lb
        cert.analytic_failed = a_lb <= 0
        if c_lb > 0 and a_lb > 0:
            cert.cross_check_ok = bool(cert.r >= min(a_lb, c_lb) - cross_tol)
    return cert


def positivity_trend(fam: CoefficientFamily, spaces, y=()) -> dict:
    """r_h over a sequence of nested spaces; records whether it is non-increasing."""
    vals = [estimate_positivity_constants(fam, sp_, y).r_h for sp_ in spaces]
    mono = all(b <= a * (1 + 1e-8) for a, b in zip(vals, vals[1:]))
    return {"r_h": vals, "non_increasing": bool(mono)}


__all__ = [
    "CoefficientFamily", "SourceData", "SamplingPlan", "EllipticityReport", "PositivityEstimate",
    "PositivityCertificate", "check_strong_ellipticity", "estimate_positivity_constants",
    "check_scalar_positivity_conditions", "verify_uniform_positivity", "affine_lower_bounds",
    "positivity_trend", "sample_points", "X1", "X2", "Y",
]
