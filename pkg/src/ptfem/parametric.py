"""Collocation over the parameter box U = [-1, 1]^s.

Tensor Lagrange surrogates of y -> u_y on one fixed FE space, L2(U; H1)
error estimation, parametric derivatives by recursive solves and the
uniform-in-y shift-ratio scan.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from math import comb

import numpy as np
from numpy.polynomial import legendre
from scipy import stats

from .coefficients import CoefficientFamily, SourceData, estimate_positivity_constants
from .convergence import fit_slope, shift_ratio
from .errors import (NotPositiveDefiniteError, ParameterError, PositivityViolationError, PtfemError,
                     SmoothnessClassError, UniformPositivityError, WeightRangeError)
from .exponents import eta_for_domain
from .fem import FESpace, assemble, assemble_matrix, assemble_rhs, h1_gram, solve
from .geometry import SmoothedDistance
from .parallel import ordered_map

FAMILIES = ("gauss-legendre", "clenshaw-curtis")
COINCIDENCE_TOL = 1e-12
NODE_OFFSET = 1e-3


# -- grids ----------------------------------------------------------------------

def _nodes_1d(n: int, family: str) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on [-1, 1] and weights for the uniform probability measure."""
    if n < 1:
        raise ParameterError("node counts must be >= 1", "$.grid")
    if family == "gauss-legendre":
        x, w = legendre.leggauss(n)
        return x, w / 2.0
    if family != "clenshaw-curtis":
        raise ParameterError(f"unknown node family {family!r}", "$.grid.family")
    if n == 1:
        return np.zeros(1), np.ones(1)
    x = -np.cos(np.pi * np.arange(n) / (n - 1))
    x[np.abs(x) < 1e-15] = 0.0
    # weights integrate the Lagrange basis exactly: sum_i w_i P_k(x_i) = delta_k0
    V = legendre.legvander(x, n - 1).T
    rhs = np.zeros(n)
    rhs[0] = 1.0
    return x, np.linalg.solve(V, rhs)


@dataclass(frozen=True)
class CollocationGrid:
    counts: tuple
    family: str = "gauss-legendre"

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(n) for n in self.counts))
        for n in self.counts:
            if n < 1:
                raise ParameterError("node counts must be >= 1", "$.grid")
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown node family {self.family!r}", "$.grid.family")

    @property
    def s(self) -> int:
        return len(self.counts)

    @property
    def axes(self) -> list:
        return [_nodes_1d(n, self.family) for n in self.counts]

    @property
    def size(self) -> int:
        return int(np.prod(self.counts)) if self.counts else 1

    @property
    def nodes(self) -> np.ndarray:
        if not self.counts:
            return np.zeros((1, 0))
        return np.array(list(itertools.product(*[x for x, _ in self.axes])), dtype=float)

    @property
    def weights(self) -> np.ndarray:
        if not self.counts:
            return np.ones(1)
        return np.array([np.prod(w) for w in itertools.product(*[w for _, w in self.axes])])


def _bary_weights(x: np.ndarray) -> np.ndarray:
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, 1.0)
    return 1.0 / d.prod(axis=1)


def _lagrange_row(x: np.ndarray, bw: np.ndarray, t: float) -> np.ndarray:
    """Values of all Lagrange basis polynomials at t (second barycentric form)."""
    diff = t - x
    # within rounding of a node the basis is the unit vector (avoids overflow in bw / diff)
    hit = np.nonzero(np.abs(diff) <= 4 * np.finfo(float).eps)[0]
    if len(hit):
        row = np.zeros(len(x))
        row[hit[0]] = 1.0
        return row
    q = bw / diff
    return q / q.sum()


# -- surrogate --------------------------------------------------------------------

@dataclass
class Surrogate:
    grid: CollocationGrid
    space: FESpace
    values: np.ndarray          # (grid size, ndof), row order of grid.nodes
    metadata: dict = field(default_factory=dict)

    @property
    def dim_Sn(self) -> int:
        return self.space.ndof * self.grid.size

    def __call__(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if self.grid.s == 0:
            return self.values[0].copy()
        if len(y) != self.grid.s:
            raise ParameterError(f"y has {len(y)} components, expected {self.grid.s}", "$.y")
        T = self.values.reshape(*self.grid.counts, -1)
        for (x, _), t in zip(self.grid.axes, y):
            T = np.tensordot(_lagrange_row(x, _bary_weights(x), float(t)), T, axes=(0, 0))
        return T


def _solve_at(fam, data, space, y):
    try:
        return solve(assemble(fam, space, y, data=data)).u
    except PtfemError as exc:
        exc.details.setdefault("y", [float(v) for v in np.atleast_1d(y)])
        exc.args = (f"{exc.args[0]} (at y = {[float(v) for v in np.atleast_1d(y)]})",)
        raise


def build_surrogate(fam: CoefficientFamily, data: SourceData, space: FESpace, grid: CollocationGrid,
                    threads: int | None = None) -> Surrogate:
    """One solve per grid node; the surrogate interpolates the nodal solutions."""
    if grid.s != fam.s:
        raise ParameterError(f"grid dimension {grid.s} does not match s = {fam.s}", "$.grid")
    nodes = grid.nodes
    vals = ordered_map(lambda y: _solve_at(fam, data, space, y), list(nodes), threads)
    sur = Surrogate(grid, space, np.vstack(vals))
    sur.metadata = {"grid": list(grid.counts), "family": grid.family, "grid_size": grid.size,
                    "fe_ndof": space.ndof, "dim_Sn": sur.dim_Sn}
    return sur


# -- L2(U; H1) error ------------------------------------------------------------------

@dataclass
class L2UVResult:
    estimate: float
    stderr: float
    n_samples: int
    sampler: str
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr, "n_samples": self.n_samples,
                "sampler": self.sampler, "warnings": list(self.warnings)}


def parse_sampler(text: str):
    """'mc:N' or 'gauss:n1,n2,...' (a single count is repeated over all dimensions)."""
    kind, _, arg = str(text).partition(":")
    try:
        if kind == "mc":
            n = int(arg)
            if n < 2:
                raise ValueError
            return ("mc", n)
        if kind == "gauss":
            return ("gauss", tuple(int(v) for v in arg.split(",")))
    except ValueError:
        pass
    raise ParameterError(f"bad sampler {text!r}; use mc:N or gauss:n", "$.sampler")


def _offset_coincident(samples: np.ndarray, nodes: np.ndarray) -> tuple[np.ndarray, int]:
    if samples.shape[1] == 0:
        return samples, 0
    d = np.abs(samples[:, None, :] - nodes[None, :, :]).max(axis=2)
    hit = np.any(d <= COINCIDENCE_TOL, axis=1)
    out = samples.copy()
    # move towards the centre so the points stay inside U
    out[hit] -= NODE_OFFSET * np.sign(out[hit])
    out[hit] = np.where(out[hit] == 0.0, NODE_OFFSET, out[hit])
    return out, int(hit.sum())


def l2uv_error(surrogate: Surrogate, fam: CoefficientFamily, data: SourceData, space: FESpace | None = None,
               sampler="mc:200", seed: int = 0, threads: int | None = None) -> L2UVResult:
    """(int_U |u_y - u_n(y)|_{H1}^2 dy)^(1/2) by Monte Carlo or a Gauss tensor rule."""
    space = space or surrogate.space
    kind, arg = parse_sampler(sampler) if isinstance(sampler, str) else sampler
    s = fam.s
    if kind == "mc":
        ys = np.random.default_rng(seed).uniform(-1.0, 1.0, size=(arg, s))
        w = np.full(arg, 1.0 / arg)
    else:
        counts = arg if len(arg) == s else tuple(arg[0] for _ in range(s))
        g = CollocationGrid(counts, "gauss-legendre")
        ys, w = g.nodes, g.weights
    notes = []
    ys, n_hit = _offset_coincident(ys, surrogate.grid.nodes)
    if n_hit:
        msg = f"{n_hit} sample(s) coincide with surrogate nodes; offset by {NODE_OFFSET}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    G = h1_gram(space, full=True)

    def err2(y):
        e = _solve_at(fam, data, space, y) - surrogate(y)
        return max(0.0, float(e @ (G @ e)))

    e2 = np.array(ordered_map(err2, list(ys), threads))
    mean = float(np.sum(w * e2))
    est = math.sqrt(mean)
    if kind == "mc":
        se2 = float(np.std(e2, ddof=1) / math.sqrt(len(e2)))
        stderr = se2 / (2 * est) if est > 0 else 0.0
    else:
        stderr = 0.0
    label = f"mc:{arg}" if kind == "mc" else "gauss:" + ",".join(map(str, counts))
    return L2UVResult(est, stderr, len(ys), label, notes)


def decay_fit(counts, errors) -> dict:
    """Fit log e = log C - n log rho over the node counts (geometric decay)."""
    n = np.asarray(counts, dtype=float)
    e = np.asarray(errors, dtype=float)
    ok = e > 0
    if ok.sum() < 2:
        return {"rate": None, "rho": None, "monotone": bool(np.all(np.diff(e) <= 0))}
    slope, icpt = np.polyfit(n[ok], np.log(e[ok]), 1)
    return {"rate": float(-slope), "rho": float(math.exp(-slope)), "log_constant": float(icpt),
            "monotone": bool(np.all(np.diff(e) <= 0))}


# -- parametric derivatives -----------------------------------------------------------

@dataclass
class ParametricDerivativeResult:
    alpha: tuple
    y0: tuple
    vectors: dict            # beta -> full DOF vector of d^beta u at y0
    norms: dict
    fd_residual: float | None = None

    @property
    def order(self) -> int:
        return int(sum(self.alpha))

    @property
    def derivative(self) -> np.ndarray:
        return self.vectors[self.alpha]

    def to_dict(self) -> dict:
        return {"alpha": list(self.alpha), "y0": list(self.y0), "order": self.order,
                "norms": self.norms, "fd_residual": self.fd_residual}


def _sub_indices(alpha):
    return sorted(itertools.product(*[range(a + 1) for a in alpha]), key=lambda b: (sum(b), b))


def _fd_stencil(order: int):
    if order == 0:
        return [(0, 1.0)]
    if order == 1:
        return [(-1, -0.5), (1, 0.5)]
    if order == 2:
        return [(-1, 1.0), (0, -2.0), (1, 1.0)]
    return None


def finite_difference(fam, data, space, y0, alpha, step: float = 1e-4, threads: int | None = None):
    """Central finite-difference approximation of d^alpha u at y0 (orders <= 2 per variable)."""
    stencils = [_fd_stencil(a) for a in alpha]
    if any(st is None for st in stencils):
        return None
    pts, wts = [], []
    for combo in itertools.product(*stencils):
        pts.append(np.asarray(y0, dtype=float) + step * np.array([k for k, _ in combo], dtype=float))
        wts.append(np.prod([c for _, c in combo]) / step ** sum(alpha))
    us = ordered_map(lambda y: _solve_at(fam, data, space, y), pts, threads)
    return sum(w * u for w, u in zip(wts, us))


def parametric_derivative(fam: CoefficientFamily, data: SourceData, space: FESpace, y0, alpha,
                          fd_check: bool = True, fd_step: float = 1e-4,
                          threads: int | None = None) -> ParametricDerivativeResult:
    """Recursive solves P u^(beta) = d^beta F - sum_{0<gamma<=beta} C(beta,gamma) (d^gamma P) u^(beta-gamma)."""
    y0 = tuple(float(v) for v in np.atleast_1d(np.asarray(y0, dtype=float)))
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != fam.s or len(y0) != fam.s:
        raise ParameterError(f"alpha and y0 need {fam.s} components", "$.alpha")
    if any(a < 0 for a in alpha):
        raise ParameterError("multi-index entries must be >= 0", "$.alpha")
    if sum(alpha) > fam.k0_order():
        raise SmoothnessClassError(f"|alpha| = {sum(alpha)} exceeds the declared k0 = {fam.k0}",
                                   "$.alpha")
    system = assemble(fam, space, y0, data=data)
    betas = _sub_indices(alpha)
    dP = {}
    for g in betas:
        if sum(g) == 0:
            continue
        dfam = fam.derivative(g)
        if all(e.is_zero() for e in dfam.parts.values()):
            continue
        dP[g] = assemble_matrix(dfam, space, y0)
    vectors = {}
    for beta in betas:
        rhs = assemble_rhs(data.derivative(beta), space, y0) if data is not None else np.zeros(space.ndof)
        for g, M in dP.items():
            if all(gi <= bi for gi, bi in zip(g, beta)):
                rest = tuple(b - gi for b, gi in zip(beta, g))
                coef = np.prod([comb(b, gi) for b, gi in zip(beta, g)])
                rhs = rhs - coef * (M @ vectors[rest])
        vectors[beta] = solve(replace(system, load_full=rhs)).u
    G = h1_gram(space, full=True)
    d = vectors[alpha]
    norms = {"H1": float(math.sqrt(max(0.0, d @ (G @ d))))}
    res = None
    if fd_check and sum(alpha) > 0:
        fd = finite_difference(fam, data, space, y0, alpha, fd_step, threads)
        if fd is not None:
            e = fd - d
            ref = max(math.sqrt(max(0.0, fd @ (G @ fd))), norms["H1"])
            res = float(math.sqrt(max(0.0, e @ (G @ e))) / ref) if ref > 0 else 0.0
    return ParametricDerivativeResult(alpha, y0, vectors, norms, res)


# -- uniform-in-y scan ------------------------------------------------------------------

@dataclass
class BoundScan:
    samples: list
    ratios: list
    weight: float | None
    m: int
    eta_min: float | None
    ratio_max_min: float
    spearman: float | None
    uniform: bool
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "samples", "ratios", "weight", "m", "eta_min", "ratio_max_min", "spearman", "uniform",
            "notes")}


def scan_samples(s: int, n: int = 5) -> np.ndarray:
    """n^s tensor samples including the faces of U."""
    if s == 0:
        return np.zeros((1, 0))
    t = np.linspace(-1.0, 1.0, n)
    return np.array(list(itertools.product(*[t] * s)), dtype=float)


def uniform_bound_scan(fam: CoefficientFamily, data: SourceData, space: FESpace, a: float | None = 0.5,
                       m: int = 1, ys=None, threads: int | None = None, factor: float = 3.0,
                       check_positivity: bool = True) -> BoundScan:
    """Shift ratio at every sampled y on one fixed space; uniform iff max/min <= factor.

    The Spearman correlation between the ratio and max_j |y_j| is reported; it does
    not enter the verdict.
    """
    domain = space.mesh.domain
    ys = scan_samples(fam.s) if ys is None else np.atleast_2d(np.asarray(ys, dtype=float))
    if space.p < m + 1:
        raise ParameterError("the scan needs degree p >= m + 1", "$.p")
    eta = None
    notes = []
    if a is not None:
        rep = eta_for_domain(domain, fam, samples=[tuple(y) for y in ys])
        eta = rep.eta_min
        if not 0 < a < eta:
            raise WeightRangeError(f"weight a = {a} is not in (0, eta_min = {eta:.6g})", a=a,
                                   eta_min=eta, worst_y=rep.worst_y)
    sd = SmoothedDistance.from_domain(domain)

    def one(y):
        yl = [float(v) for v in y]
        if check_positivity and space.n_free <= 1500:
            try:
                estimate_positivity_constants(fam, space, y)
            except NotPositiveDefiniteError as exc:
                raise UniformPositivityError(f"positivity fails at y = {yl}", y=yl,
                                             r_h=exc.details.get("r_h")) from None
        try:
            num, den, _ = shift_ratio(fam, data, space, a, m, sd, tuple(y))
        except PositivityViolationError:
            raise UniformPositivityError(f"positivity fails at y = {yl}", y=yl) from None
        return num / den if den > 0 else math.nan

    ratios = ordered_map(one, list(ys), threads)
    r = np.asarray(ratios, dtype=float)
    spread = float(r.max() / r.min()) if np.all(np.isfinite(r)) and r.min() > 0 else math.inf
    rho = None
    if len(r) > 2 and fam.s > 0:
        prox = np.abs(ys).max(axis=1)
        if np.ptp(prox) > 0 and np.ptp(r) > 0:
            rho = float(stats.spearmanr(prox, r).statistic)
    return BoundScan([list(map(float, y)) for y in ys], [float(v) for v in r], a, m, eta, spread, rho,
                     bool(spread <= factor), notes)


# -- balanced space/parameter study -------------------------------------------------------

@dataclass
class CombinedReport:
    degree: int
    levels: list
    nodes: list
    dim_Sn: list
    spatial_error: list
    parametric_error: list
    total_error: list
    slope: float
    target: float

    @property
    def passed(self) -> bool:
        return abs(self.slope - self.target) <= 0.2

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "degree", "levels", "nodes", "dim_Sn", "spatial_error", "parametric_error", "total_error",
            "slope", "target")}
        d["passed"] = self.passed
        return d


def combined_rate_study(p: int = 1, levels=(1, 2, 3, 4), quad_nodes: int = 12, n_max: int = 12,
                        threads: int | None = None) -> CombinedReport:
    """Balanced refinement for -div((2+y) grad u) = 2 pi^2 sin(pi x1) sin(pi x2) on the unit square.

    Exact solution u_y = sin(pi x1) sin(pi x2) / (2 + y).  At each mesh level the
    node count n is the smallest one whose parametric error is at most half the
    spatial error; errors are L2(U; H1) norms by a Gauss rule in y.
    """
    import sympy as sp

    from .convergence import mesh_hierarchy
    from .expressions import X1, X2, Y, PiecewiseExpr
    from .geometry import DomainSpec, Subdomain
    from .norms import ExprField, FEField, NormSpec, broken_norm

    dom = DomainSpec([[0, 0], [1, 0], [1, 1], [0, 1]], [Subdomain("omega", (0, 1, 2, 3))])
    fam = CoefficientFamily.build(a="2 + y1", s=1, family="affine", domain=dom)
    data = SourceData.build(f="2*pi**2*sin(pi*x1)*sin(pi*x2)", s=1, domain=dom)
    exact = PiecewiseExpr(sp.sin(sp.pi * X1) * sp.sin(sp.pi * X2) / (2 + Y[0]), s=1)
    yq, wq = _nodes_1d(quad_nodes, "gauss-legendre")
    meshes = mesh_hierarchy(dom, max(levels), "uniform")
    rows = {"nodes": [], "dim": [], "spatial": [], "param": [], "total": []}
    for lvl in levels:
        mesh = meshes[lvl]
        space = FESpace(mesh, p)
        G = h1_gram(space, full=True)
        sd = SmoothedDistance.from_domain(dom)
        uh = ordered_map(lambda y: _solve_at(fam, data, space, (y,)), list(yq), threads)
        ex = [ExprField(exact, mesh, (y,), s=1) for y in yq]
        spec = NormSpec(1, 0.0, "broken-Hm")

        def h1_err(u_vecs):
            vals = [broken_norm(e - FEField(space, u), spec, mesh, sd) ** 2 for e, u in zip(ex, u_vecs)]
            return math.sqrt(float(np.dot(wq, vals)))

        spatial = h1_err(uh)
        for n in range(1, n_max + 1):
            sur = build_surrogate(fam, data, space, CollocationGrid((n,)), threads)
            ev = [sur((y,)) for y in yq]
            pe = math.sqrt(float(np.dot(wq, [max(0.0, (u - v) @ (G @ (u - v))) for u, v in zip(uh, ev)])))
            if pe <= 0.5 * spatial:
                break
        rows["nodes"].append(n)
        rows["dim"].append(space.ndof * n)
        rows["spatial"].append(spatial)
        rows["param"].append(pe)
        rows["total"].append(h1_err(ev))
    slope = fit_slope(rows["dim"], rows["total"])
    return CombinedReport(p, list(levels), rows["nodes"], rows["dim"], rows["spatial"], rows["param"],
                          rows["total"], slope, -p / 2.0)


__all__ = [
    "CollocationGrid", "Surrogate", "L2UVResult", "ParametricDerivativeResult", "BoundScan",
    "CombinedReport", "build_surrogate", "l2uv_error", "parametric_derivative", "finite_difference",
    "uniform_bound_scan", "scan_samples", "combined_rate_study", "decay_fit", "parse_sampler",
]
