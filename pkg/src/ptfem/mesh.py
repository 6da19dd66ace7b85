"""Conforming triangulations with uniform and kappa-graded refinement."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
import triangle as tr

from .errors import GeometryError, ParameterError
from .geometry import DIRICHLET, DomainSpec, classify_singular_points

INTERIOR, DIRICHLET_EDGE, NEUMANN_EDGE, INTERFACE_EDGE = 0, 1, 2, 3
TAG_NAMES = {INTERIOR: "interior", DIRICHLET_EDGE: "dirichlet",
             NEUMANN_EDGE: "neumann", INTERFACE_EDGE: "interface"}


def _unique_edges(triangles: np.ndarray):
    """Sorted unique edges and the (T, 3) triangle-to-edge map (local edge i = (v_i, v_{i+1}))."""
    loc = np.stack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=1)
    loc = np.sort(loc, axis=2).reshape(-1, 2)
    edges, inverse = np.unique(loc, axis=0, return_inverse=True)
    return edges, inverse.reshape(-1, 3)


@dataclass(frozen=True)
class GradedMesh:
    vertices: np.ndarray            # (N, 2)
    triangles: np.ndarray           # (T, 3), counter-clockwise
    tri_sub: np.ndarray             # (T,) subdomain index
    edges: np.ndarray               # (E, 2), sorted pairs, lexicographic
    edge_tag: np.ndarray            # (E,) INTERIOR / DIRICHLET_EDGE / NEUMANN_EDGE / INTERFACE_EDGE
    edge_seg: np.ndarray            # (E,) domain segment index, -1 for interior edges
    tri_edges: np.ndarray           # (T, 3)
    domain: DomainSpec
    level: int = 0
    grading: dict = field(default_factory=dict)   # vertex index -> kappa
    singular_vertices: tuple = ()                 # vertex indices of V

    # -- derived quantities -------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        lens = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
        return lens.max(axis=1)

    @property
    def h(self) -> float:
        return float(self.diameters().max())

    def angles(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        out = np.empty((len(p), 3))
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            cos = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            out[:, i] = np.arccos(np.clip(cos, -1.0, 1.0))
        return out

    def min_angle(self) -> float:
        return float(self.angles().min())

    def edge_triangles(self) -> np.ndarray:
        """(E, 2) indices of the triangles on each edge, -1 where absent."""
        out = np.full((len(self.edges), 2), -1, dtype=np.int64)
        flat_t = np.repeat(np.arange(self.n_triangles), 3)
        flat_e = self.tri_edges.ravel()
        order = np.argsort(flat_e, kind="stable")
        fe, ft = flat_e[order], flat_t[order]
        first = np.ones(len(fe), dtype=bool)
        first[1:] = fe[1:] != fe[:-1]
        out[fe[first], 0] = ft[first]
        out[fe[~first], 1] = ft[~first]
        return out

    def vertex_of(self, point, tol: float = 1e-12) -> int:
        d = np.linalg.norm(self.vertices - np.asarray(point, dtype=float)[None, :], axis=1)
        i = int(np.argmin(d))
        if d[i] > tol * max(1.0, self.domain.diameter):
            raise KeyError(f"{point} is not a mesh vertex")
        return i

    def with_grading(self, kappa: dict) -> "GradedMesh":
        for v, k in kappa.items():
            if not (0.0 < k <= 0.5):
                raise ParameterError(f"grading parameter {k} for vertex {v} not in (0, 1/2]", "$.grading")
        return replace(self, grading={int(v): float(k) for v, k in kappa.items()})

    def check_conformity(self) -> None:
        et = self.edge_triangles()
        counts = (et >= 0).sum(axis=1)
        if np.any(counts == 0) or np.any(counts > 2):
            raise GeometryError("non-conforming mesh", "$.mesh")
        boundary = counts == 1
        if np.any(boundary != np.isin(self.edge_tag, (DIRICHLET_EDGE, NEUMANN_EDGE))):
            raise GeometryError("boundary edges and boundary tags disagree", "$.mesh")


def _tag_edges(domain: DomainSpec, edges: np.ndarray):
    tag = np.zeros(len(edges), dtype=np.int64)
    seg = np.full(len(edges), -1, dtype=np.int64)
    lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(edges)}
    for s in domain.segments:
        i = lookup.get(s.key)
        if i is None:
            raise GeometryError(f"segment ({s.a}, {s.b}) missing from triangulation",
                                "$.domain", segment=[s.a, s.b])
        seg[i] = s.index
        if s.kind == "interface":
            tag[i] = INTERFACE_EDGE
        else:
            tag[i] = DIRICHLET_EDGE if s.bc == DIRICHLET else NEUMANN_EDGE
    return tag, seg


def generate_initial_mesh(domain: DomainSpec, target_h: float) -> GradedMesh:
    """Constrained Delaunay triangulation of the segment chains, subdivided
    uniformly until the largest triangle diameter is at most ``2 * target_h``."""
    if not target_h > 0:
        raise ParameterError("target_h must be positive", "$.discretization.target_h")
    segs = np.array([[s.a, s.b] for s in domain.segments], dtype=np.int32)
    try:
        out = tr.triangulate({"vertices": np.array(domain.vertices), "segments": segs}, "pQ")
    except Exception as exc:  # pragma: no cover - triangle errors are rare
        raise GeometryError(f"triangulation failed: {exc}", "$.domain") from None
    if len(out["vertices"]) != len(domain.vertices):
        raise GeometryError("segments intersect (triangulator inserted vertices)", "$.domain")
    tris = np.asarray(out["triangles"], dtype=np.int64)
    cent = domain.vertices[tris].mean(axis=1)
    sub = domain.locate(cent)
    keep = sub >= 0
    tris, sub = tris[keep], sub[keep]
    p = domain.vertices[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    cw = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tris[cw] = tris[cw][:, [0, 2, 1]]
    order = np.lexsort((tris[:, 2], tris[:, 1], tris[:, 0]))
    tris, sub = tris[order], sub[order]
    edges, tri_edges = _unique_edges(tris)
    tag, seg = _tag_edges(domain, edges)
    sing = tuple(q.vertex for q in classify_singular_points(domain))
    mesh = GradedMesh(np.array(domain.vertices), tris, sub.astype(np.int64), edges, tag, seg,
                      tri_edges, domain, level=0, grading={}, singular_vertices=sing)
    mesh.check_conformity()
    area = float(mesh.areas().sum())
    if abs(area - domain.area) > 1e-10 * domain.area:
        raise GeometryError("triangulation does not cover the domain", "$.domain")
    while mesh.h > 2.0 * target_h:
        mesh = replace(refine(mesh, "uniform"), level=0)
    return mesh


def grading_for_order(m: int, eta_min: float) -> float:
    """kappa = 2^(-m / a*) with a* = min(m, 0.95 eta_min), clamped to [0.1, 0.5]."""
    if m < 1:
        raise ParameterError("order m must be >= 1", "$.m")
    if not eta_min > 0:
        raise ParameterError("exponent eta_min must be positive", "$.eta_min")
    a_star = min(float(m), 0.95 * float(eta_min))
    return float(min(0.5, max(0.1, 2.0 ** (-m / a_star))))


def refine(mesh: GradedMesh, mode: str = "uniform") -> GradedMesh:
    """Split every triangle 1 -> 4.

    In graded mode an edge with exactly one endpoint Q carrying kappa_Q < 1/2 is
    split at fraction kappa_Q from Q; all other edges are split at their
    midpoints (including edges joining two graded vertices).
    """
    if mode not in ("uniform", "graded"):
        raise ParameterError(f"unknown refinement mode {mode!r}", "$.mode")
    N = mesh.n_vertices
    E = len(mesh.edges)
    a, b = mesh.edges[:, 0], mesh.edges[:, 1]
    frac = np.full(E, 0.5)
    if mode == "graded":
        for v, k in mesh.grading.items():
            if not (0.0 < k <= 0.5):
                raise ParameterError(f"grading parameter {k} for vertex {v} not in (0, 1/2]", "$.grading")
        kap = np.full(N, 0.5)
        for v, k in mesh.grading.items():
            kap[v] = k
        ka, kb = kap[a], kap[b]
        ga, gb = ka < 0.5, kb < 0.5
        only_a = ga & ~gb
        only_b = gb & ~ga
        frac[only_a] = ka[only_a]
        frac[only_b] = 1.0 - kb[only_b]
    new_pts = mesh.vertices[a] + frac[:, None] * (mesh.vertices[b] - mesh.vertices[a])
    verts = np.vstack([mesh.vertices, new_pts])
    t = mesh.triangles
    m01, m12, m20 = (N + mesh.tri_edges[:, i] for i in range(3))
    v0, v1, v2 = t[:, 0], t[:, 1], t[:, 2]
    children = np.stack([
        np.stack([v0, m01, m20], axis=1),
        np.stack([m01, v1, m12], axis=1),
        np.stack([m20, m12, v2], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ], axis=1).reshape(-1, 3)
    sub = np.repeat(mesh.tri_sub, 4)
    edges, tri_edges = _unique_edges(children)
    # children of tagged edges inherit the parent tag and segment
    key = edges[:, 0] * len(verts) + edges[:, 1]
    tag = np.zeros(len(edges), dtype=np.int64)
    seg = np.full(len(edges), -1, dtype=np.int64)
    tagged = np.nonzero(mesh.edge_tag != INTERIOR)[0]
    mids = N + tagged
    for ends in (a[tagged], b[tagged]):
        lo, hi = np.minimum(ends, mids), np.maximum(ends, mids)
        idx = np.searchsorted(key, lo * len(verts) + hi)
        tag[idx] = mesh.edge_tag[tagged]
        seg[idx] = mesh.edge_seg[tagged]
    return GradedMesh(verts, children, sub, edges, tag, seg, tri_edges, mesh.domain,
                      level=mesh.level + 1, grading=dict(mesh.grading),
                      singular_vertices=mesh.singular_vertices)


def nearest_neighbor_distance(mesh: GradedMesh, v: int) -> float:
    d = np.linalg.norm(mesh.vertices - mesh.vertices[v][None, :], axis=1)
    d[v] = np.inf
    return float(d.min())


def write_mesh(mesh: GradedMesh, path) -> None:
    """Plain-text vertex/triangle/edge tables plus ``<path>.json`` metadata."""
    from .io import atomic_write_text

    lines = [f"# vertices {mesh.n_vertices}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append(f"# triangles {mesh.n_triangles}")
    lines += [f"{a} {b} {c} {s}" for (a, b, c), s in zip(mesh.triangles, mesh.tri_sub)]
    lines.append(f"# edges {len(mesh.edges)}")
    lines += [f"{a} {b} {TAG_NAMES[int(t)]} {s}" for (a, b), t, s in
              zip(mesh.edges, mesh.edge_tag, mesh.edge_seg)]
    atomic_write_text(path, "\n".join(lines) + "\n")
    meta = {
        "level": mesh.level,
        "n_vertices": mesh.n_vertices,
        "n_triangles": mesh.n_triangles,
        "h": mesh.h,
        "min_angle_deg": math.degrees(mesh.min_angle()),
        "grading": {str(v): k for v, k in sorted(mesh.grading.items())},
        "singular_vertices": [int(v) for v in mesh.singular_vertices],
    }
    atomic_write_text(f"{path}.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
