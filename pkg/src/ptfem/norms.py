"""Broken Sobolev and weighted (Kondrat'ev) norms, and the W_s splitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import sympy as sp

from .errors import OrderError, ValidationError
from .expressions import X1, X2, Compiled, PiecewiseExpr
from .geometry import SmoothedDistance, classify_singular_points
from .lagrange import monomial_exponents, monomials
from .quadrature import triangle_rule

MODES = ("broken-Hm", "broken-Kma", "Winf", "weighted-Winf")
DIVERGENCE_Q = 1.0 - 1e-6


def multi_indices(m: int):
    return [(i, k - i) for k in range(m + 1) for i in range(k, -1, -1)]


@dataclass(frozen=True)
class NormSpec:
    """Order m, weight a (the subscript of K^m_a), mode, and shell depth near V."""

    m: int = 0
    a: float = 0.0
    mode: str = "broken-Hm"
    near_levels: int = 40

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown norm mode {self.mode!r}", "$.mode")
        if self.m < 0:
            raise ValidationError("norm order must be >= 0", "$.m")

    @property
    def weighted(self) -> bool:
        return self.mode in ("broken-Kma", "weighted-Winf")

    @property
    def sup(self) -> bool:
        return self.mode in ("Winf", "weighted-Winf")


# -- fields -------------------------------------------------------------------

class Field:
    """Something with piecewise derivatives: ``eval(tri, x, alpha)``."""

    max_order: int | None = None

    def eval(self, tri, x, alpha):  # pragma: no cover - interface
        raise NotImplementedError

    def __add__(self, other):
        return CombinationField([(1.0, self), (1.0, other)])

    def __sub__(self, other):
        return CombinationField([(1.0, self), (-1.0, other)])

    def __rmul__(self, c):
        return CombinationField([(float(c), self)])


class FEField(Field):
    """A finite element function; derivatives are taken elementwise."""

    def __init__(self, space, u):
        self.space = space
        self.u = np.asarray(u, dtype=float)
        self.max_order = None  # derivatives beyond p vanish, but order checks use ``degree``
        self.degree = space.p

    @cached_property
    def _local(self):
        sp_ = self.space
        P = sp_.mesh.vertices[sp_.mesh.triangles]
        center = P.mean(axis=1)
        h = sp_.mesh.diameters()
        Xn = sp_.map_points(sp_.element.nodes)
        z = (Xn - center[:, None, :]) / h[:, None, None]
        V = monomials(z, sp_.p)
        coef = np.linalg.solve(V, self.u[sp_.cell_dofs][:, :, None])[:, :, 0]
        return center, h, coef

    def eval(self, tri, x, alpha=(0, 0)):
        tri = np.asarray(tri)
        if sum(alpha) > self.degree:
            return np.zeros(len(tri))
        center, h, coef = self._local
        z = (np.asarray(x) - center[tri]) / h[tri][:, None]
        M = monomials(z, self.space.p, alpha)
        return np.einsum("nk,nk->n", M, coef[tri]) / h[tri] ** sum(alpha)


class ExprField(Field):
    """A piecewise symbolic function of (x1, x2), fixed parameter values substituted."""

    def __init__(self, expr, mesh, y=(), s: int = 0):
        if not isinstance(expr, PiecewiseExpr):
            expr = PiecewiseExpr({None: sp.sympify(expr)}, s)
        self.expr = expr.at_y(y) if expr.s else expr
        self.mesh = mesh
        self._cache = {}

    def _compiled(self, alpha):
        if alpha not in self._cache:
            self._cache[alpha] = {
                k: Compiled(sp.diff(e, X1, alpha[0], X2, alpha[1]) if sum(alpha) else e, 0)
                for k, e in self.expr.exprs.items()}
        return self._cache[alpha]

    def eval(self, tri, x, alpha=(0, 0)):
        comp = self._compiled(tuple(alpha))
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        sub = self.mesh.tri_sub[np.asarray(tri)]
        if list(comp) == [None]:
            return comp[None](x)
        out = np.empty(len(x))
        for k in np.unique(sub):
            msk = sub == k
            out[msk] = comp[int(k) if int(k) in comp else None](x[msk])
        return out


class CallableField(Field):
    """Wraps ``fn(x, sub, alpha)``."""

    def __init__(self, fn, mesh, max_order=None):
        self.fn = fn
        self.mesh = mesh
        self.max_order = max_order

    def eval(self, tri, x, alpha=(0, 0)):
        return np.asarray(self.fn(np.asarray(x), self.mesh.tri_sub[np.asarray(tri)], alpha), dtype=float)


class CombinationField(Field):
    def __init__(self, terms):
        flat = []
        for c, f in terms:
            if isinstance(f, CombinationField):
                flat.extend((c * c2, f2) for c2, f2 in f.terms)
            else:
                flat.append((c, f))
        self.terms = flat

    @property
    def degree(self):
        degs = [getattr(f, "degree", None) for _, f in self.terms]
        return None if any(d is None for d in degs) else max(degs)

    def eval(self, tri, x, alpha=(0, 0)):
        out = np.zeros(len(np.asarray(tri)))
        for c, f in self.terms:
            if c != 0.0:
                out += c * f.eval(tri, x, alpha)
        return out


def _as_field(u, mesh):
    from .fem import DiscreteSolution

    if isinstance(u, Field):
        return u
    if isinstance(u, DiscreteSolution):
        return FEField(u.space, u.u)
    if isinstance(u, (PiecewiseExpr, sp.Basic, str, int, float)):
        return ExprField(PiecewiseExpr({None: sp.sympify(u)}) if isinstance(u, (str, int, float))
                         else u, mesh)
    if callable(u):
        return CallableField(u, mesh)
    raise ValidationError(f"cannot take the norm of {type(u).__name__}", "$")


# -- integration --------------------------------------------------------------

def _weights_and_alphas(spec: NormSpec):
    alphas = multi_indices(spec.m)
    # rho exponent 2(|alpha| - a) in weighted mode
    return alphas, [2.0 * (sum(al) - spec.a) for al in alphas]


def _integrand(field_, tri, x, spec, sd, alphas, powers):
    total = np.zeros(len(tri))
    rho = sd(x) if spec.weighted else None
    for al, pw in zip(alphas, powers):
        val = field_.eval(tri, x, al) ** 2
        if spec.weighted:
            with np.errstate(divide="ignore", invalid="ignore"):
                val = val * rho**pw
        total += val
    return total


def _sup_integrand(field_, tri, x, spec, sd, alphas, powers):
    out = np.zeros(len(tri))
    rho = sd(x) if spec.weighted else None
    for al, pw in zip(alphas, powers):
        val = np.abs(field_.eval(tri, x, al))
        if spec.weighted:
            with np.errstate(divide="ignore", invalid="ignore"):
                val = val * rho ** (0.5 * pw)
        out = np.maximum(out, val)
    return out


def _sub_triangles(P, depth):
    """Shell k of triangle (Q, B, C): the trapezoid between scale 2^-k and 2^-(k+1), as 2 triangles."""
    Q, B, C = P
    out = []
    for k in range(depth):
        s, t = 2.0**-k, 2.0 ** -(k + 1)
        Bk, Ck = Q + s * (B - Q), Q + s * (C - Q)
        Bn, Cn = Q + t * (B - Q), Q + t * (C - Q)
        out.append((np.array([Bn, Bk, Ck]), np.array([Bn, Ck, Cn])))
    return out


def _integrate_triangles(field_, tri, verts, ref, w, spec, sd, alphas, powers):
    """Sum over triangles ``verts`` (n, 3, 2) belonging to mesh triangles ``tri``."""
    d1 = verts[:, 1] - verts[:, 0]
    d2 = verts[:, 2] - verts[:, 0]
    det = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    X = verts[:, 0, None, :] + ref[None, :, 0, None] * d1[:, None, :] + ref[None, :, 1, None] * d2[:, None, :]
    nq = len(w)
    vals = _integrand(field_, np.repeat(tri, nq), X.reshape(-1, 2), spec, sd, alphas, powers)
    return (vals.reshape(-1, nq) @ w) * det


def _sup_triangles(field_, tri, verts, ref, spec, sd, alphas, powers):
    d1 = verts[:, 1] - verts[:, 0]
    d2 = verts[:, 2] - verts[:, 0]
    X = verts[:, 0, None, :] + ref[None, :, 0, None] * d1[:, None, :] + ref[None, :, 1, None] * d2[:, None, :]
    nq = len(ref)
    vals = _sup_integrand(field_, np.repeat(tri, nq), X.reshape(-1, 2), spec, sd, alphas, powers)
    return vals.reshape(-1, nq).max(axis=1)


def _singular_vertices(mesh, sd):
    """Map mesh vertex -> singular location for points of ``sd`` that are mesh vertices."""
    out = []
    for q in sd.points:
        d = np.linalg.norm(mesh.vertices - q[None, :], axis=1)
        i = int(np.argmin(d))
        if d[i] <= 1e-12 * max(1.0, mesh.domain.diameter):
            out.append(i)
    return out


@dataclass
class NormDetails:
    value: float
    divergent: bool
    contributions: dict = field(default_factory=dict)   # vertex -> (shell sum, tail, ratio)


def broken_norm_details(u, spec: NormSpec, mesh, sd: SmoothedDistance | None = None,
                        quad_degree: int | None = None, near_points=None) -> NormDetails:
    """Broken H^m / K^m_a (or W^{m,inf}) norm with geometric shells at singular vertices.

    Returns +inf (``divergent=True``) when the shell contributions toward some
    singular point do not contract.
    """
    f = _as_field(u, mesh)
    deg = getattr(f, "degree", None)
    if deg is not None and spec.m > deg:
        raise OrderError(f"order m = {spec.m} exceeds the element degree p = {deg}", "$.m")
    if sd is None:
        sd = SmoothedDistance.from_domain(mesh.domain)
    alphas, powers = _weights_and_alphas(spec)
    pdeg = deg if deg is not None else 4
    qd = quad_degree if quad_degree is not None else 2 * pdeg + 4
    ref, w = triangle_rule(qd)
    if near_points is None:
        near_points = sd.points if len(sd.points) else np.array(
            [q.location for q in classify_singular_points(mesh.domain)]).reshape(-1, 2)
    near = _singular_vertices(mesh, SmoothedDistance(np.asarray(near_points).reshape(-1, 2),
                                                      np.ones(len(near_points))))
    T = mesh.n_triangles
    touching = {}
    for v in near:
        touching[v] = np.nonzero(np.any(mesh.triangles == v, axis=1))[0]
    special = np.zeros(T, dtype=bool)
    for ts in touching.values():
        special[ts] = True
    regular = np.nonzero(~special)[0]
    P = mesh.vertices[mesh.triangles]

    if spec.sup:
        best = 0.0
        if len(regular):
            best = float(_sup_triangles(f, regular, P[regular], ref, spec, sd, alphas, powers).max())
        divergent = False
        for v, ts in touching.items():
            for t in ts:
                loc = list(mesh.triangles[t]).index(v)
                tv = P[t][[loc, (loc + 1) % 3, (loc + 2) % 3]]
                shells = _sub_triangles(tv, spec.near_levels)
                maxima = []
                for pair in shells:
                    verts = np.stack(pair)
                    maxima.append(float(_sup_triangles(f, np.full(2, t), verts, ref, spec, sd,
                                                       alphas, powers).max()))
                best = max(best, max(maxima))
                if maxima[-1] > maxima[-2] * (1.0 + 1e-6) and maxima[-1] > 1e-300:
                    divergent = True
        return NormDetails(math.inf if divergent else best, divergent)

    total = 0.0
    if len(regular):
        total = float(np.sum(_integrate_triangles(f, regular, P[regular], ref, w, spec, sd, alphas, powers)))
    contributions = {}
    divergent = False
    for v, ts in touching.items():
        verts_by_t = []
        for t in ts:
            loc = list(mesh.triangles[t]).index(v)
            verts_by_t.append(P[t][[loc, (loc + 1) % 3, (loc + 2) % 3]])
        shell_sum, prev, q = 0.0, None, 0.0
        c_k = 0.0
        for k in range(spec.near_levels):
            cells, owners = [], []
            for t, tv in zip(ts, verts_by_t):
                Q, B, C = tv
                s, s2 = 2.0**-k, 2.0 ** -(k + 1)
                Bk, Ck, Bn, Cn = Q + s * (B - Q), Q + s * (C - Q), Q + s2 * (B - Q), Q + s2 * (C - Q)
                cells += [np.array([Bn, Bk, Ck]), np.array([Bn, Ck, Cn])]
                owners += [t, t]
            c_k = float(np.sum(_integrate_triangles(f, np.array(owners), np.stack(cells), ref, w,
                                                    spec, sd, alphas, powers)))
            if not np.isfinite(c_k):
                divergent = True
                break
            shell_sum += c_k
            if prev is not None:
                q = c_k / prev if prev > 0 else 0.0
            prev = c_k
            if k >= 2 and c_k <= 1e-14 * (total + shell_sum):
                break
        if divergent or q >= DIVERGENCE_Q:
            divergent = True
            contributions[v] = (shell_sum, math.inf, q)
            continue
        tail = c_k * q / (1.0 - q) if q > 0 else 0.0
        contributions[v] = (shell_sum, tail, q)
        total += shell_sum + tail
    if divergent:
        return NormDetails(math.inf, True, contributions)
    return NormDetails(math.sqrt(max(total, 0.0)), False, contributions)


def broken_norm(u, spec: NormSpec, mesh, sd: SmoothedDistance | None = None,
                quad_degree: int | None = None) -> float:
    return broken_norm_details(u, spec, mesh, sd, quad_degree).value


# -- splitting ----------------------------------------------------------------

@dataclass
class SplittingResult:
    coefficients: dict          # vertex -> c_Q
    u_r: np.ndarray
    u_s: np.ndarray
    norms: dict
    reconstruction_error: float


def split_solution(sol, cutoffs, m: int = 1, a: float = 0.5, sd: SmoothedDistance | None = None,
                   norms: bool = True) -> SplittingResult:
    """c_Q = u_h(Q), u_r = u_h - sum c_Q chi_Q, with a norm table.

    The regular part is measured in the broken K^{m+1}_{a+1} norm.
    """
    space = sol.space
    mesh = space.mesh
    coeffs = {}
    u_s = np.zeros(space.ndof)
    for c in cutoffs:
        if not 0 <= c.vertex < mesh.n_vertices:
            raise ValidationError(f"no nodal value at singular vertex {c.vertex}", "$.cutoffs")
        coeffs[c.vertex] = float(sol.u[space.vertex_dof(c.vertex)])
        u_s += coeffs[c.vertex] * c.values
    u_r = sol.u - u_s
    table = {}
    l2 = NormSpec(0, 0.0, "broken-Hm")
    rec = FEField(space, u_r + u_s) - FEField(space, sol.u)
    err = broken_norm(rec, l2, mesh, sd)
    if norms:
        sd = SmoothedDistance.from_domain(mesh.domain) if sd is None else sd
        if m + 1 <= space.p:
            table["u_r_K"] = broken_norm(FEField(space, u_r), NormSpec(m + 1, a + 1.0, "broken-Kma"), mesh, sd)
        table["u_s_L2"] = broken_norm(FEField(space, u_s), l2, mesh, sd)
        table["u_L2"] = broken_norm(FEField(space, sol.u), l2, mesh, sd)
    return SplittingResult(coeffs, u_r, u_s, table, err)


__all__ = ["NormSpec", "FEField", "ExprField", "CallableField", "CombinationField", "Field",
           "broken_norm", "broken_norm_details", "split_solution", "SplittingResult",
           "multi_indices", "monomial_exponents"]
