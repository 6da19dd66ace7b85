"""Decomposed polygonal domains, singular points and the smoothed distance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import AmbiguousSideError, GeometryError, ValidationError

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
ANGLE_TOL = 1e-9


class Category(str, Enum):
    BOUNDARY_VERTEX = "BoundaryVertex"
    BC_CHANGE = "BCChange"
    INTERFACE_MEETS_BOUNDARY = "InterfaceMeetsBoundary"
    INTERFACE_KINK = "InterfaceKink"


@dataclass(frozen=True)
class Subdomain:
    name: str
    loop: tuple[int, ...]
    holes: tuple[tuple[int, ...], ...] = ()


@dataclass(frozen=True)
class Segment:
    """A straight segment of some subdomain boundary.

    Boundary segments are oriented with the domain on their left (outward
    normal on the right).  Interface segments are oriented so that the ``plus``
    subdomain lies to the right and ``minus`` to the left.
    """

    index: int
    a: int
    b: int
    kind: str  # "boundary" | "interface"
    bc: str | None = None
    owner: int | None = None
    plus: int | None = None
    minus: int | None = None

    @property
    def key(self) -> tuple[int, int]:
        return (min(self.a, self.b), max(self.a, self.b))


@dataclass(frozen=True)
class SingularPoint:
    location: tuple[float, float]
    vertex: int
    categories: frozenset
    in_Vs: bool
    angles: dict
    # CCW angular sectors around the point as (width, subdomain) pairs; for a
    # boundary point they run from ``bc_start`` to ``bc_end``, for an interior
    # point they close up periodically.
    sectors: tuple[tuple[float, int], ...] = ()
    bc_start: str | None = None
    bc_end: str | None = None
    start_direction: float = 0.0

    @property
    def on_boundary(self) -> bool:
        return self.bc_start is not None

    @property
    def total_angle(self) -> float:
        return float(sum(w for w, _ in self.sectors))


def _loop_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def points_in_loop(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test (vectorized over ``points``)."""
    points = np.atleast_2d(points)
    px, py = points[:, 0][:, None], points[:, 1][:, None]
    x0, y0 = poly[:, 0][None, :], poly[:, 1][None, :]
    x1, y1 = np.roll(poly[:, 0], -1)[None, :], np.roll(poly[:, 1], -1)[None, :]
    cond = (y0 > py) != (y1 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    crossings = cond & (px < xint)
    return (crossings.sum(axis=1) % 2) == 1


def _seg_point_distance(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab))), float(t)


def _segments_cross(p1, p2, q1, q2, tol) -> bool:
    """Proper or touching intersection that is not a shared endpoint."""
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return ((d1 > tol and d2 < -tol) or (d1 < -tol and d2 > tol)) and \
        ((d3 > tol and d4 < -tol) or (d3 < -tol and d4 > tol))


class DomainSpec:
    """A polygonal domain decomposed into subdomains.

    ``vertices`` is an (N, 2) array; every subdomain is a closed vertex loop
    (with optional hole loops).  Segments shared by two subdomains form the
    interface; the remaining ones form the outer boundary and carry a
    Dirichlet or Neumann tag.  ``smooth=True`` declares the polygon to be an
    approximation of a smooth configuration, in which case the singular set is
    empty and the smoothed distance is identically 1.
    """

    def __init__(self, vertices, subdomains, boundary_tags=None,
                 default_bc: str = DIRICHLET, interface_orientation=None,
                 smooth: bool = False, path: str = "$"):
        self.vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
        self.vertices.setflags(write=False)
        self.subdomains: tuple[Subdomain, ...] = tuple(subdomains)
        self.smooth = bool(smooth)
        if default_bc not in (DIRICHLET, NEUMANN):
            raise ValidationError(f"unknown boundary condition {default_bc!r}", f"{path}.boundary.default")
        self.diameter = float(np.hypot(*np.ptp(self.vertices, axis=0)))
        self.tol = 1e-12 * self.diameter
        self._build_segments(boundary_tags or {}, default_bc, interface_orientation or [], path)
        self._validate(path)

    # -- construction ---------------------------------------------------------

    def _orient_loops(self, k, sub, path):
        n = len(self.vertices)
        loops = []
        for li, loop in enumerate((sub.loop,) + tuple(sub.holes)):
            lp = f"{path}.subdomains[{k}]" + (".loop" if li == 0 else f".holes[{li - 1}]")
            if len(loop) < 3:
                raise GeometryError("loop needs at least 3 vertices", lp)
            if len(set(loop)) != len(loop):
                raise GeometryError("loop repeats a vertex", lp)
            for v in loop:
                if not 0 <= v < n:
                    raise GeometryError(f"vertex index {v} out of range", lp)
            area = _loop_area(self.vertices[list(loop)])
            if abs(area) <= self.tol * self.diameter:
                raise GeometryError("degenerate loop (zero area)", lp)
            want_ccw = li == 0
            if (area > 0) != want_ccw:
                loop = tuple(reversed(loop))
            loops.append(tuple(loop))
        return loops

    def _build_segments(self, boundary_tags, default_bc, orientation, path):
        directed: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
        self._loops = []
        for k, sub in enumerate(self.subdomains):
            loops = self._orient_loops(k, sub, path)
            self._loops.append(loops)
            for loop in loops:
                for i in range(len(loop)):
                    a, b = loop[i], loop[(i + 1) % len(loop)]
                    if np.linalg.norm(self.vertices[a] - self.vertices[b]) <= self.tol:
                        raise GeometryError(f"zero-length segment ({a}, {b})", f"{path}.subdomains[{k}]")
                    directed.setdefault((min(a, b), max(a, b)), []).append((a, b, k))

        orient_map = {}
        for i, item in enumerate(orientation):
            edge = item.get("edge") if isinstance(item, dict) else item
            if not (isinstance(edge, (list, tuple)) and len(edge) == 2):
                raise ValidationError("interface entry needs an edge [i, j]", f"{path}.interface[{i}]")
            orient_map[(min(edge), max(edge))] = (int(edge[0]), int(edge[1]), f"{path}.interface[{i}]")

        tag_map = {}
        for tag, key in ((DIRICHLET, "dirichlet"), (NEUMANN, "neumann")):
            for i, edge in enumerate(boundary_tags.get(key, [])):
                if not (isinstance(edge, (list, tuple)) and len(edge) == 2):
                    raise ValidationError("boundary edge must be [i, j]", f"{path}.boundary.{key}[{i}]")
                tag_map[(min(edge), max(edge))] = (tag, f"{path}.boundary.{key}[{i}]")

        segments = []
        for key in sorted(directed):
            uses = directed[key]
            idx = len(segments)
            if len(uses) == 1:
                a, b, k = uses[0]
                bc, _ = tag_map.pop(key, (default_bc, None))
                if key in orient_map:
                    raise ValidationError(f"edge {list(key)} is not an interface segment",
                                          orient_map[key][2])
                segments.append(Segment(idx, a, b, "boundary", bc=bc, owner=k))
            elif len(uses) == 2:
                (a1, b1, k1), (a2, b2, k2) = uses
                if k1 == k2 or (a1, b1) != (b2, a2):
                    raise GeometryError(
                        f"segment {list(key)} is used inconsistently (overlapping subdomains)",
                        f"{path}.subdomains[{max(k1, k2)}]", segment=list(key))
                lo, hi = (uses[0], uses[1]) if k1 < k2 else (uses[1], uses[0])
                # default: traverse as the lower-index subdomain does, so it
                # lies on the left (minus) and the higher one on the right
                a, b, minus = lo
                plus = hi[2]
                if key in orient_map:
                    ta, tb, opath = orient_map.pop(key)
                    if (ta, tb) != (a, b):
                        a, b, plus, minus = b, a, minus, plus
                if key in tag_map:
                    raise ValidationError(f"edge {list(key)} is an interface segment, not boundary",
                                          tag_map[key][1])
                segments.append(Segment(idx, a, b, "interface", plus=plus, minus=minus))
            else:
                raise GeometryError(f"segment {list(key)} shared by {len(uses)} subdomains",
                                    f"{path}.subdomains", segment=list(key))
        for key, (_, p) in tag_map.items():
            raise ValidationError(f"edge {list(key)} is not a boundary segment", p)
        for key, (_, _, p) in orient_map.items():
            raise ValidationError(f"edge {list(key)} is not a segment", p)
        self.segments: tuple[Segment, ...] = tuple(segments)
        self._seg_by_key = {s.key: s for s in self.segments}

    def _validate(self, path):
        used = sorted({v for s in self.segments for v in (s.a, s.b)})
        if len(used) != len(self.vertices):
            missing = sorted(set(range(len(self.vertices))) - set(used))
            raise GeometryError(f"vertex {missing[0]} is not used by any subdomain",
                                f"{path}.vertices[{missing[0]}]")
        V = self.vertices
        # T-junctions: a vertex strictly inside a segment
        for s in self.segments:
            pa, pb = V[s.a], V[s.b]
            for v in range(len(V)):
                if v in (s.a, s.b):
                    continue
                d, t = _seg_point_distance(V[v], pa, pb)
                if d <= 1e-10 * self.diameter and 0.0 < t < 1.0:
                    raise GeometryError(
                        f"vertex {v} lies inside segment ({s.a}, {s.b}); split the segment",
                        f"{path}.vertices[{v}]", segment=[s.a, s.b])
        tol = 1e-14 * self.diameter**2
        for i, s in enumerate(self.segments):
            for t in self.segments[i + 1:]:
                if {s.a, s.b} & {t.a, t.b}:
                    continue
                if _segments_cross(V[s.a], V[s.b], V[t.a], V[t.b], tol):
                    raise GeometryError(
                        f"segments ({s.a}, {s.b}) and ({t.a}, {t.b}) intersect",
                        f"{path}.subdomains", segment=[s.a, s.b])
        # nested subdomains: an interior point of each must not lie in another
        for k in range(len(self.subdomains)):
            p = self._interior_point(k)
            for j in range(len(self.subdomains)):
                if j != k and self._contains(j, p[None, :])[0]:
                    loop = self._loops[k][0]
                    raise GeometryError(
                        f"subdomain {self.subdomains[k].name!r} overlaps {self.subdomains[j].name!r}",
                        f"{path}.subdomains[{k}]", segment=[loop[0], loop[1]])

    def _contains(self, k, points):
        inside = np.zeros(len(points), dtype=int)
        for loop in self._loops[k]:
            inside += points_in_loop(points, self.vertices[list(loop)])
        return (inside % 2) == 1

    def _interior_point(self, k):
        loop = self._loops[k][0]
        pts = self.vertices[list(loop)]
        n = len(loop)
        others = np.concatenate([self.vertices[list(lp)] for lp in self._loops[k]])
        for i in range(n):
            a, b, c = pts[i - 1], pts[i], pts[(i + 1) % n]
            cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
            if cross <= 0:
                continue
            cand = (a + b + c) / 3.0
            tri = np.array([a, b, c])
            inside = points_in_loop(others, tri)
            on_corner = np.any(np.all(np.isclose(others[:, None, :], tri[None, :, :]), axis=2), axis=1)
            if not np.any(inside & ~on_corner) and self._contains_loops(k, cand):
                return cand
        raise GeometryError(f"could not find an interior point of subdomain {self.subdomains[k].name!r}",
                            f"$.subdomains[{k}]")

    def _contains_loops(self, k, p):
        inside = 0
        for loop in self._loops[k]:
            inside += int(points_in_loop(p[None, :], self.vertices[list(loop)])[0])
        return inside % 2 == 1

    # -- queries --------------------------------------------------------------

    @property
    def n_subdomains(self) -> int:
        return len(self.subdomains)

    def subdomain_index(self, name) -> int:
        if isinstance(name, (int, np.integer)):
            return int(name)
        for k, sub in enumerate(self.subdomains):
            if sub.name == name:
                return k
        raise KeyError(name)

    def locate(self, points) -> np.ndarray:
        """Subdomain index of each point (-1 outside)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(len(points), -1, dtype=int)
        for k in range(self.n_subdomains):
            mask = (out < 0) & self._contains(k, points)
            out[mask] = k
        return out

    @property
    def boundary_segments(self):
        return [s for s in self.segments if s.kind == "boundary"]

    @property
    def interface_segments(self):
        return [s for s in self.segments if s.kind == "interface"]

    def segment(self, a: int, b: int) -> Segment | None:
        return self._seg_by_key.get((min(a, b), max(a, b)))

    def subdomain_area(self, k: int) -> float:
        return float(sum(_loop_area(self.vertices[list(loop)]) for loop in self._loops[k]))

    @property
    def area(self) -> float:
        return float(sum(self.subdomain_area(k) for k in range(self.n_subdomains)))

    def outward_normal(self, seg: Segment) -> np.ndarray:
        d = self.vertices[seg.b] - self.vertices[seg.a]
        return np.array([d[1], -d[0]]) / np.linalg.norm(d)

    def interface_normal(self, seg: Segment) -> np.ndarray:
        """Unit normal on an interface segment pointing from + to -."""
        d = self.vertices[seg.b] - self.vertices[seg.a]
        return np.array([-d[1], d[0]]) / np.linalg.norm(d)

    @property
    def has_dirichlet(self) -> bool:
        return any(s.bc == DIRICHLET for s in self.boundary_segments)

    # -- serialization --------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict, path: str = "$") -> "DomainSpec":
        if not isinstance(data, dict):
            raise ValidationError("domain must be an object", path)
        verts = data.get("vertices")
        if not isinstance(verts, list) or not verts:
            raise ValidationError("missing vertex array", f"{path}.vertices")
        for i, v in enumerate(verts):
            if not (isinstance(v, list) and len(v) == 2 and all(isinstance(c, (int, float)) for c in v)):
                raise ValidationError("vertex must be [x, y]", f"{path}.vertices[{i}]")
        subs = []
        raw_subs = data.get("subdomains")
        if not isinstance(raw_subs, list) or not raw_subs:
            raise ValidationError("missing subdomain list", f"{path}.subdomains")
        for k, sd in enumerate(raw_subs):
            sp_ = f"{path}.subdomains[{k}]"
            if not isinstance(sd, dict) or not isinstance(sd.get("loop"), list):
                raise ValidationError("subdomain needs a 'loop' vertex list", sp_)
            for i, v in enumerate(sd["loop"]):
                if not isinstance(v, int):
                    raise ValidationError("vertex index must be an integer", f"{sp_}.loop[{i}]")
            holes = sd.get("holes", [])
            subs.append(Subdomain(str(sd.get("name", f"omega{k + 1}")), tuple(sd["loop"]),
                                  tuple(tuple(h) for h in holes)))
        bnd = data.get("boundary", {}) or {}
        return cls(verts, subs, boundary_tags=bnd, default_bc=bnd.get("default", DIRICHLET),
                   interface_orientation=data.get("interface", []),
                   smooth=bool(data.get("smooth", False)), path=path)

    def to_dict(self) -> dict:
        neumann = [[s.a, s.b] for s in self.boundary_segments if s.bc == NEUMANN]
        dirichlet = [[s.a, s.b] for s in self.boundary_segments if s.bc == DIRICHLET]
        return {
            "vertices": self.vertices.tolist(),
            "subdomains": [{"name": s.name, "loop": list(s.loop), "holes": [list(h) for h in s.holes]}
                           for s in self.subdomains],
            "boundary": {"default": DIRICHLET, "dirichlet": dirichlet, "neumann": neumann},
            "interface": [{"edge": [s.a, s.b]} for s in self.interface_segments],
            "smooth": self.smooth,
        }


# -- singular points ----------------------------------------------------------

def _incident(domain: DomainSpec):
    inc: dict[int, list[tuple[float, Segment, int]]] = {}
    V = domain.vertices
    for s in domain.segments:
        for v, w in ((s.a, s.b), (s.b, s.a)):
            d = V[w] - V[v]
            inc.setdefault(v, []).append((math.atan2(d[1], d[0]), s, w))
    return inc


def _vertex_sectors(domain: DomainSpec, v: int, incident):
    """CCW wedges around vertex ``v`` as (start_angle, width, sub, seg_start, seg_end)."""
    V = domain.vertices
    inc = sorted(incident, key=lambda t: (t[0], t[1].index))
    n = len(inc)
    rmin = min(np.linalg.norm(V[w] - V[v]) for _, _, w in inc)
    wedges = []
    for i in range(n):
        ang0, s0, _ = inc[i]
        ang1, s1, _ = inc[(i + 1) % n]
        width = (ang1 - ang0) % (2 * math.pi)
        if n == 1 or width == 0.0:
            width = 2 * math.pi if n == 1 else width
        mid = ang0 + 0.5 * width
        probe = V[v] + 1e-6 * rmin * np.array([math.cos(mid), math.sin(mid)])
        sub = int(domain.locate(probe[None, :])[0])
        wedges.append((ang0, width, sub, s0, s1))
    return wedges


def classify_singular_points(domain: DomainSpec) -> list[SingularPoint]:
    """Return the singular set with categories and V_s membership."""
    if domain.smooth:
        return []
    out = []
    for v, incident in sorted(_incident(domain).items()):
        wedges = _vertex_sectors(domain, v, incident)
        exterior = [i for i, w in enumerate(wedges) if w[2] < 0]
        n_iface = sum(1 for _, s, _ in incident if s.kind == "interface")
        cats = set()
        angles: dict[str, float] = {}
        if exterior:
            if len(exterior) > 1:
                raise GeometryError(f"vertex {v} touches the boundary more than once (pinched domain)",
                                    f"$.vertices[{v}]")
            e = exterior[0]
            order = [wedges[(e + 1 + i) % len(wedges)] for i in range(len(wedges) - 1)]
            seg_start, seg_end = order[0][3], order[-1][4]
            sectors = tuple((w[1], w[2]) for w in order)
            omega = sum(w for w, _ in sectors)
            if abs(omega - math.pi) > ANGLE_TOL:
                cats.add(Category.BOUNDARY_VERTEX)
            if seg_start.bc != seg_end.bc:
                cats.add(Category.BC_CHANGE)
            if n_iface:
                cats.add(Category.INTERFACE_MEETS_BOUNDARY)
            bc_start, bc_end = seg_start.bc, seg_end.bc
            start_dir = order[0][0]
        else:
            sectors = tuple((w[1], w[2]) for w in wedges)
            dirs = sorted(a for a, s, _ in incident if s.kind == "interface")
            straight = len(dirs) == 2 and abs(abs(dirs[1] - dirs[0]) - math.pi) <= ANGLE_TOL
            if n_iface and not straight:
                cats.add(Category.INTERFACE_KINK)
            bc_start = bc_end = None
            start_dir = wedges[0][0]
        if not cats:
            continue
        for w, sub in sectors:
            name = domain.subdomains[sub].name
            angles[name] = angles.get(name, 0.0) + w
        on_dirichlet = any(s.kind == "boundary" and s.bc == DIRICHLET for _, s, _ in incident)
        out.append(SingularPoint(
            location=(float(domain.vertices[v, 0]), float(domain.vertices[v, 1])),
            vertex=v, categories=frozenset(cats), in_Vs=not on_dirichlet, angles=angles,
            sectors=sectors, bc_start=bc_start, bc_end=bc_end, start_direction=float(start_dir)))
    return out


@dataclass(frozen=True)
class SmoothedDistance:
    """rho(x) = min(1, min_Q min(|x - Q|, cap_Q)); identically 1 when V is empty."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    caps: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def from_points(cls, points, cap=None) -> "SmoothedDistance":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if cap is None:
            if len(pts) > 1:
                d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
                d[np.diag_indices(len(pts))] = np.inf
                cap = min(1.0, 0.5 * float(d.min()))
            else:
                cap = 1.0
        caps = np.broadcast_to(np.asarray(cap, dtype=float), (len(pts),)).copy()
        return cls(pts, np.minimum(caps, 1.0))

    @classmethod
    def from_domain(cls, domain: DomainSpec, singular=None) -> "SmoothedDistance":
        singular = classify_singular_points(domain) if singular is None else singular
        return cls.from_points([q.location for q in singular])

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        if len(self.points) == 0:
            return np.ones(flat.shape[0]).reshape(x.shape[:-1])
        d = np.linalg.norm(flat[:, None, :] - self.points[None, :, :], axis=2)
        rho = np.minimum(d, self.caps[None, :]).min(axis=1)
        return np.minimum(rho, 1.0).reshape(x.shape[:-1])


def interface_side(domain: DomainSpec, x, hint=None, near_tol: float | None = None):
    """Side tag ('+' or '-') and owning subdomain index of a point near the interface.

    ``hint`` (a subdomain index or name) resolves points lying on the
    interface itself.  Points at interface segment endpoints are ambiguous
    without a hint.
    """
    x = np.asarray(x, dtype=float)
    segs = domain.interface_segments
    if not segs:
        raise ValidationError("domain has no interface", "$.domain")
    near_tol = 1e-2 * domain.diameter if near_tol is None else near_tol
    V = domain.vertices
    best = min(segs, key=lambda s: _seg_point_distance(x, V[s.a], V[s.b])[0])
    dist, t = _seg_point_distance(x, V[best.a], V[best.b])
    if dist > near_tol:
        raise ValidationError(f"point {x.tolist()} is not near the interface", "$")
    if hint is not None:
        k = domain.subdomain_index(hint)
        if k == best.plus:
            return "+", k
        if k == best.minus:
            return "-", k
        raise ValidationError(f"hinted subdomain {hint!r} is not adjacent to the interface", "$")
    seg_len = np.linalg.norm(V[best.b] - V[best.a])
    if min(t, 1.0 - t) * seg_len <= domain.tol * 1e3 or dist <= domain.tol:
        raise AmbiguousSideError(
            f"point {x.tolist()} lies on an interface junction or on the interface; "
            "resolve the side through the owning element", location=x.tolist())
    d = V[best.b] - V[best.a]
    cross = d[0] * (x[1] - V[best.a][1]) - d[1] * (x[0] - V[best.a][0])
    return ("+", best.plus) if cross < 0 else ("-", best.minus)
