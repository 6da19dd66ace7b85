"""Conforming Lagrange spaces, assembly of B(y; ., .) and the load, and linear solves."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import (ConfigurationError, EvaluationError, IllConditionedError,
                     PositivityViolationError)
from .geometry import SmoothedDistance, classify_singular_points
from .lagrange import reference_element
from .mesh import DIRICHLET_EDGE, INTERFACE_EDGE, NEUMANN_EDGE, GradedMesh
from .quadrature import assembly_degree, gauss_interval, triangle_rule

DIRECT_LIMIT = 20_000
RESIDUAL_TOL = 1e-12


class FESpace:
    """Continuous degree-p Lagrange space on a GradedMesh.

    Global DOFs: mesh vertices first, then p-1 DOFs per edge (listed from the
    lower-numbered endpoint), then the interior DOFs of each triangle.
    Interface DOFs are shared by both sides, so traces match across the
    interface.  DOFs on Dirichlet edges are constrained to zero.
    """

    def __init__(self, mesh: GradedMesh, p: int = 1):
        if p < 1:
            raise ConfigurationError("degree must be >= 1", "$.discretization.degree")
        self.mesh = mesh
        self.p = p
        self.element = reference_element(p)
        N, E, T = mesh.n_vertices, len(mesh.edges), mesh.n_triangles
        ne, ni = p - 1, self.element.n_interior
        self.n_edge_dofs, self.n_interior_dofs = ne, ni
        self.ndof = N + E * ne + T * ni
        cells = np.empty((T, self.element.n_local), dtype=np.int64)
        cells[:, :3] = mesh.triangles
        col = 3
        for i in range(3):
            e = mesh.tri_edges[:, i]
            forward = mesh.triangles[:, i] == mesh.edges[e, 0]
            for k in range(ne):
                kk = np.where(forward, k, ne - 1 - k)
                cells[:, col + k] = N + e * ne + kk
            col += ne
        for j in range(ni):
            cells[:, col + j] = N + E * ne + np.arange(T) * ni + j
        self.cell_dofs = cells
        self.edge_dofs = self._edge_dof_table()
        dirichlet = np.zeros(self.ndof, dtype=bool)
        dirichlet[self.edge_dofs[mesh.edge_tag == DIRICHLET_EDGE].ravel()] = True
        self.dirichlet = dirichlet
        self.free = np.nonzero(~dirichlet)[0]
        self.n_free = len(self.free)

    def _edge_dof_table(self) -> np.ndarray:
        """(E, p+1) DOFs along each edge, ordered from edges[e, 0] to edges[e, 1]."""
        mesh, ne = self.mesh, self.p - 1
        N = mesh.n_vertices
        E = len(mesh.edges)
        tab = np.empty((E, self.p + 1), dtype=np.int64)
        tab[:, 0] = mesh.edges[:, 0]
        tab[:, -1] = mesh.edges[:, 1]
        for k in range(ne):
            tab[:, 1 + k] = N + np.arange(E) * ne + k
        return tab

    @cached_property
    def geometry(self):
        """Per-triangle Jacobian (T, 2, 2), determinant and inverse of the affine map."""
        P = self.mesh.vertices[self.mesh.triangles]
        J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=-1)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1] / det
        inv[:, 1, 1] = J[:, 0, 0] / det
        inv[:, 0, 1] = -J[:, 0, 1] / det
        inv[:, 1, 0] = -J[:, 1, 0] / det
        return P[:, 0], J, det, inv

    def map_points(self, ref: np.ndarray) -> np.ndarray:
        """Physical images (T, n, 2) of reference points (n, 2) in every triangle."""
        P0, J, _, _ = self.geometry
        return P0[:, None, :] + np.einsum("tij,qj->tqi", J, ref)

    @cached_property
    def dof_coords(self) -> np.ndarray:
        X = self.map_points(self.element.nodes)
        out = np.empty((self.ndof, 2))
        out[self.cell_dofs.ravel()] = X.reshape(-1, 2)
        return out

    @cached_property
    def dof_sub(self) -> np.ndarray:
        """Subdomain of one triangle containing each DOF (used for interpolation)."""
        out = np.empty(self.ndof, dtype=np.int64)
        out[self.cell_dofs.ravel()] = np.repeat(self.mesh.tri_sub, self.element.n_local)
        return out

    def interpolate(self, fn) -> np.ndarray:
        """Nodal interpolant of ``fn(x, sub)``; Dirichlet DOFs are left as computed."""
        return np.asarray(fn(self.dof_coords, self.dof_sub), dtype=float)

    def vertex_dof(self, v: int) -> int:
        return int(v)

    def restrict(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u)[self.free]

    def extend(self, u_free: np.ndarray) -> np.ndarray:
        out = np.zeros(self.ndof)
        out[self.free] = u_free
        return out


def _lagrange_1d(p: int, t: np.ndarray) -> np.ndarray:
    """Equispaced 1D Lagrange basis of degree p at points t in [0, 1], shape (n, p+1)."""
    nodes = np.arange(p + 1) / p
    out = np.ones((len(t), p + 1))
    for j in range(p + 1):
        for k in range(p + 1):
            if k != j:
                out[:, j] *= (t - nodes[k]) / (nodes[j] - nodes[k])
    return out


def _deterministic_sum(rows, cols, vals, shape) -> sps.csr_matrix:
    """Sparse sum of duplicate entries, independent of the input order."""
    rows, cols, vals = rows.ravel(), cols.ravel(), vals.ravel()
    order = np.lexsort((vals, cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    start = np.ones(len(rows), dtype=bool)
    start[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
    idx = np.nonzero(start)[0]
    summed = np.add.reduceat(vals, idx) if len(vals) else vals
    m = sps.csr_matrix((summed, (rows[idx], cols[idx])), shape=shape)
    m.sort_indices()
    return m


def _deterministic_vector(idx, vals, n) -> np.ndarray:
    idx, vals = idx.ravel(), vals.ravel()
    order = np.lexsort((vals, idx))
    idx, vals = idx[order], vals[order]
    out = np.zeros(n)
    if len(idx):
        start = np.ones(len(idx), dtype=bool)
        start[1:] = idx[1:] != idx[:-1]
        pos = np.nonzero(start)[0]
        out[idx[pos]] = np.add.reduceat(vals, pos)
    return out


def _check_finite(values, X, what):
    bad = ~np.isfinite(values)
    if np.any(bad):
        i = np.argwhere(bad)[0]
        loc = X.reshape(-1, 2)[int(np.ravel_multi_index(tuple(i[:2]), values.shape[:2]))] \
            if values.ndim >= 2 else X.reshape(-1, 2)[int(i[0])]
        raise EvaluationError(f"non-finite {what} at x = {loc.tolist()}", location=loc)


@dataclass(frozen=True)
class DiscreteSystem:
    space: FESpace
    matrix: sps.csr_matrix        # free x free
    sym: sps.csr_matrix           # symmetric part, free x free
    full: sps.csr_matrix          # ndof x ndof
    load_full: np.ndarray
    y: tuple
    quad_degree: int
    symmetric: bool

    @property
    def load(self) -> np.ndarray:
        return self.load_full[self.space.free]


def element_matrices(fam, space: FESpace, y=(), quad_degree: int | None = None) -> np.ndarray:
    """(T, nloc, nloc) element matrices with entry [test, trial] = B(phi_trial, phi_test)."""
    deg = assembly_degree(space.p) if quad_degree is None else quad_degree
    ref, w = triangle_rule(deg)
    el = space.element
    Bv = el.eval(ref)
    Bg = el.grad(ref)
    _, _, det, inv = space.geometry
    G = np.einsum("tji,qlj->tqli", inv, Bg)
    X = space.map_points(ref)
    T, nq = X.shape[:2]
    sub = np.repeat(space.mesh.tri_sub, nq)
    A, b, c = fam.evaluate(X.reshape(-1, 2), sub, y)
    A = A.reshape(T, nq, 2, 2)
    b = b.reshape(T, nq, 2)
    c = c.reshape(T, nq)
    _check_finite(A.reshape(T, nq, -1).sum(axis=2), X, "diffusion coefficient")
    _check_finite(b.sum(axis=2), X, "advection coefficient")
    _check_finite(c, X, "reaction coefficient")
    wd = w[None, :] * det[:, None]
    AG = np.einsum("tqij,tqbj->tqbi", A, G)
    K = np.einsum("tq,tqbi,tqai->tab", wd, AG, G)
    if np.any(b):
        K += np.einsum("tq,tqi,tqbi,qa->tab", wd, b, G, Bv)
    K += np.einsum("tq,tq,qb,qa->tab", wd, c, Bv, Bv)
    return K


def assemble_matrix(fam, space: FESpace, y=(), quad_degree: int | None = None) -> sps.csr_matrix:
    K = element_matrices(fam, space, y, quad_degree)
    cd = space.cell_dofs
    rows = np.broadcast_to(cd[:, :, None], K.shape)
    cols = np.broadcast_to(cd[:, None, :], K.shape)
    return _deterministic_sum(rows, cols, K, (space.ndof, space.ndof))


def _edge_rule(p, quad_degree):
    n = 4 if quad_degree is None else max(4, math.ceil((quad_degree + 1) / 2))
    n = max(n, p + 2)
    return gauss_interval(n)


def assemble_rhs(data, space: FESpace, y=(), quad_degree: int | None = None) -> np.ndarray:
    """Full-length load vector: volume term + Neumann term + interface jump term."""
    mesh = space.mesh
    domain = mesh.domain
    idx_parts, val_parts = [], []
    if data is not None and data.f is not None:
        deg = assembly_degree(space.p) if quad_degree is None else quad_degree
        ref, w = triangle_rule(deg)
        Bv = space.element.eval(ref)
        X = space.map_points(ref)
        T, nq = X.shape[:2]
        f = data.f_at(X.reshape(-1, 2), np.repeat(mesh.tri_sub, nq), y).reshape(T, nq)
        _check_finite(f, X, "source f")
        _, _, det, _ = space.geometry
        idx_parts.append(space.cell_dofs)
        val_parts.append(np.einsum("tq,q,qa->ta", f * det[:, None], w, Bv))
    if data is not None and data.has_h() and not domain.interface_segments:
        raise ConfigurationError("interface data h given but the domain has no interface", "$.data.h")
    for tag, active, fn in ((NEUMANN_EDGE, data is not None and data.has_g(), "g_at"),
                            (INTERFACE_EDGE, data is not None and data.has_h(), "h_at")):
        if not active:
            continue
        edges = np.nonzero(mesh.edge_tag == tag)[0]
        if len(edges) == 0:
            continue
        t, w = _edge_rule(space.p, quad_degree)
        phi = _lagrange_1d(space.p, t)
        pa = mesh.vertices[mesh.edges[edges, 0]]
        pb = mesh.vertices[mesh.edges[edges, 1]]
        length = np.linalg.norm(pb - pa, axis=1)
        X = pa[:, None, :] + t[None, :, None] * (pb - pa)[:, None, :]
        vals = np.empty((len(edges), len(t)))
        segs = mesh.edge_seg[edges]
        for sidx in np.unique(segs):
            m = segs == sidx
            seg = domain.segments[int(sidx)]
            vals[m] = getattr(data, fn)(X[m].reshape(-1, 2), seg, domain, y).reshape(-1, len(t))
        _check_finite(vals, X, "boundary data" if tag == NEUMANN_EDGE else "interface data")
        idx_parts.append(space.edge_dofs[edges])
        val_parts.append(np.einsum("eq,q,qa->ea", vals * length[:, None], w, phi))
    if not idx_parts:
        return np.zeros(space.ndof)
    idx = np.concatenate([i.ravel() for i in idx_parts])
    val = np.concatenate([v.ravel() for v in val_parts])
    return _deterministic_vector(idx, val, space.ndof)


def assemble(fam, space: FESpace, y=(), data=None, quad_degree: int | None = None,
             rhs: bool = True) -> DiscreteSystem:
    y = tuple(float(v) for v in np.atleast_1d(np.asarray(y, dtype=float)))
    full = assemble_matrix(fam, space, y, quad_degree)
    free = space.free
    A = full[free][:, free].tocsr()
    S = (0.5 * (A + A.T)).tocsr()
    load = assemble_rhs(data, space, y, quad_degree) if rhs else np.zeros(space.ndof)
    deg = assembly_degree(space.p) if quad_degree is None else quad_degree
    return DiscreteSystem(space, A, S, full, load, y, deg, symmetric=not fam.has_advection())


@lru_cache(maxsize=32)
def _gram_full(space: FESpace) -> sps.csr_matrix:
    from .coefficients import CoefficientFamily
    unit = CoefficientFamily.build(a=1, c=1)
    return assemble_matrix(unit, space)


def h1_gram(space: FESpace, full: bool = False) -> sps.csr_matrix:
    """Gram matrix of the H^1 inner product (stiffness + mass)."""
    G = _gram_full(space)
    if full:
        return G
    return G[space.free][:, space.free].tocsr()


def h1_norm(space: FESpace, u: np.ndarray) -> float:
    G = h1_gram(space, full=True)
    return float(math.sqrt(max(0.0, u @ (G @ u))))


# -- solving ------------------------------------------------------------------

@dataclass
class DiscreteSolution:
    space: FESpace
    u: np.ndarray                       # full DOF vector
    y: tuple = ()
    residual: float = 0.0
    iterations: int = 0
    method: str = "direct"
    ws_coefficients: dict = field(default_factory=dict)   # vertex -> c_Q
    u_r: np.ndarray | None = None

    @property
    def ndof(self) -> int:
        return self.space.ndof

    def metadata(self) -> dict:
        return {"y": list(self.y), "residual": self.residual, "iterations": self.iterations,
                "method": self.method, "ndof": self.space.ndof, "n_free": self.space.n_free,
                "degree": self.space.p,
                "ws_coefficients": {str(k): v for k, v in sorted(self.ws_coefficients.items())}}


def _rel_residual(A, x, b) -> float:
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(b - A @ x) / nb) if nb > 0 else float(np.linalg.norm(A @ x))


def _rounding_floor(A, x, b) -> float:
    """Relative residual attainable in double precision: 64 eps (|A||x| + |b|) / |b|."""
    nb = np.linalg.norm(b)
    scale = np.linalg.norm(abs(A) @ np.abs(x) + np.abs(b))
    return float(64 * np.finfo(float).eps * scale / nb) if nb > 0 else float(64 * np.finfo(float).eps * scale)


def _condition_estimate(A) -> float:
    try:
        lu = spla.splu(A.tocsc())
        inv = spla.LinearOperator(A.shape, matvec=lu.solve, rmatvec=lambda v: lu.solve(v, trans="T"),
                                  dtype=float)
        return float(spla.onenormest(A) * spla.onenormest(inv))
    except Exception:
        return float("inf")


def _direct(A, b, symmetric):
    Acsc = A.tocsc()
    try:
        if symmetric:
            lu = spla.splu(Acsc, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        else:
            lu = spla.splu(Acsc)
    except RuntimeError as exc:
        raise PositivityViolationError(f"factorization failed: {exc}") from None
    if symmetric:
        piv = lu.U.diagonal()
        scale = np.abs(A.diagonal()).max()
        if np.any(piv <= 1e-13 * scale):
            raise PositivityViolationError(
                "non-positive pivot in symmetric factorization (matrix not positive definite)",
                min_pivot=float(piv.min()))
    return lu.solve


def _iterative(A, b, symmetric):
    import pyamg

    if symmetric:
        ml = pyamg.smoothed_aggregation_solver(A.tocsr())
        M = ml.aspreconditioner(cycle="V")
        it = [0]

        def cb(_):
            it[0] += 1
        x, info = spla.cg(A, b, rtol=RESIDUAL_TOL, atol=0.0, maxiter=2000, M=M, callback=cb)
        return x, info, it[0]
    ilu = spla.spilu(A.tocsc(), drop_tol=1e-6, fill_factor=20)
    M = spla.LinearOperator(A.shape, ilu.solve)
    x, info = spla.gmres(A, b, rtol=RESIDUAL_TOL, atol=0.0, restart=200, maxiter=50, M=M)
    return x, info, -1


def solve(system: DiscreteSystem, tol: float = RESIDUAL_TOL) -> DiscreteSolution:
    """Solve the free-DOF system; relative residual <= tol or an error is raised."""
    space = system.space
    A, b = system.matrix, system.load
    if space.n_free == 0 or not np.any(b):
        return DiscreteSolution(space, np.zeros(space.ndof), system.y, 0.0, 0, "trivial")
    if space.n_free <= DIRECT_LIMIT:
        apply_inv = _direct(A, b, system.symmetric)
        x = apply_inv(b)
        method, iters = "direct", 0
        res = _rel_residual(A, x, b)
        for _ in range(3):
            if res <= tol:
                break
            x_new = x + apply_inv(b - A @ x)
            res_new = _rel_residual(A, x_new, b)
            if res_new >= res:
                break
            x, res = x_new, res_new
            iters += 1
    else:
        x, info, iters = _iterative(A, b, system.symmetric)
        method = "cg-amg" if system.symmetric else "gmres-ilu"
        res = _rel_residual(A, x, b)
        if system.symmetric and res > tol:
            xr = x.copy()
            for _ in range(3):
                d, _, _ = _iterative(A, b - A @ xr, True)
                xr = xr + d
                res = _rel_residual(A, xr, b)
                if res <= tol:
                    break
            x = xr
    if not np.all(np.isfinite(x)):
        raise PositivityViolationError("solver produced non-finite values")
    floor = _rounding_floor(A, x, b)
    if res > max(tol, floor):
        raise IllConditionedError(f"relative residual {res:.3e} above {tol:.0e}",
                                  residual=res, condition_estimate=_condition_estimate(A))
    return DiscreteSolution(space, space.extend(x), system.y, res, iters, method)


# -- W_s cutoffs and augmented solve ------------------------------------------

def smoothstep_cutoff(r, r1, r2):
    """1 for r <= r1, 0 for r >= r2, quintic blend in between."""
    t = np.clip((np.asarray(r, dtype=float) - r1) / (r2 - r1), 0.0, 1.0)
    return 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


@dataclass(frozen=True)
class Cutoff:
    vertex: int
    location: tuple
    r1: float
    r2: float
    values: np.ndarray   # FE interpolant on the space

    def __call__(self, x, sub=None):
        r = np.linalg.norm(np.asarray(x, dtype=float).reshape(-1, 2) - np.asarray(self.location)[None, :],
                           axis=1)
        return smoothstep_cutoff(r, self.r1, self.r2)


def make_cutoffs(space: FESpace, singular=None) -> list[Cutoff]:
    """FE-interpolated cutoffs chi_Q for Q in V_s, radii 0.25 and 0.75 of the distance cap."""
    domain = space.mesh.domain
    singular = classify_singular_points(domain) if singular is None else singular
    sd = SmoothedDistance.from_domain(domain, singular)
    out = []
    for i, q in enumerate(singular):
        if not q.in_Vs:
            continue
        cap = float(sd.caps[i])
        c = Cutoff(q.vertex, q.location, 0.25 * cap, 0.75 * cap, None)
        vals = c(space.dof_coords)
        vals[np.abs(vals) < 1e-300] = 0.0
        out.append(Cutoff(q.vertex, q.location, c.r1, c.r2, vals))
    check_cutoffs(space, out)
    return out


def check_cutoffs(space: FESpace, cutoffs) -> None:
    supports = [set(np.nonzero(c.values)[0].tolist()) for c in cutoffs]
    for i in range(len(supports)):
        if np.any(cutoffs[i].values[space.dirichlet] != 0):
            raise ConfigurationError(f"cutoff at vertex {cutoffs[i].vertex} does not vanish on the "
                                     "Dirichlet boundary", "$.cutoffs")
        for j in range(i + 1, len(supports)):
            if supports[i] & supports[j]:
                raise ConfigurationError(f"cutoffs at vertices {cutoffs[i].vertex} and "
                                         f"{cutoffs[j].vertex} overlap", "$.cutoffs")


def solve_augmented(system: DiscreteSystem, cutoffs=None) -> DiscreteSolution:
    """Solve, then split u_h = u_r + sum_Q c_Q chi_Q with c_Q = u_h(Q)."""
    space = system.space
    cutoffs = make_cutoffs(space) if cutoffs is None else cutoffs
    check_cutoffs(space, cutoffs)
    sol = solve(system)
    coeffs = {c.vertex: float(sol.u[space.vertex_dof(c.vertex)]) for c in cutoffs}
    u_r = sol.u.copy()
    for c in cutoffs:
        u_r -= coeffs[c.vertex] * c.values
    sol.ws_coefficients = coeffs
    sol.u_r = u_r
    return sol
