"""Singular exponents of piecewise-constant scalar diffusion at corners and interface points.

Near a point Q, u = r^lambda Phi(theta) with Phi'' + lambda^2 Phi = 0 in every
angular sector, Phi and a Phi' continuous across sector boundaries, and
Phi = 0 (Dirichlet) or a Phi' = 0 (Neumann) on boundary rays.  Interior points
close up periodically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq

from .errors import InternalConsistencyError, UnsupportedCornerError, ValidationError
from .geometry import DIRICHLET, DomainSpec, classify_singular_points

SCAN_START = 1e-6
SCAN_STEP = 1e-3
ROOT_TOL = 1e-12
ORACLE_TOL = 1e-6
CORNER_TYPES = ("DD", "DN", "ND", "NN", "periodic")


def corner_type(bc_start, bc_end) -> str:
    if bc_start is None:
        return "periodic"
    return ("D" if bc_start == DIRICHLET else "N") + ("D" if bc_end == DIRICHLET else "N")


def transfer_product(lam, widths, coeffs) -> np.ndarray:
    """Product of sector transfer matrices for the state (Phi, a Phi' / lambda)."""
    M = np.eye(2, dtype=np.result_type(lam, float))
    for w, a in zip(widths, coeffs):
        c, s = np.cos(lam * w), np.sin(lam * w)
        T = np.array([[c, s / a], [-a * s, c]])
        M = T @ M
    return M


def characteristic(lam, kind, widths, coeffs):
    M = transfer_product(lam, widths, coeffs)
    if kind == "DD":
        return M[0, 1]
    if kind == "DN":
        return M[1, 1]
    if kind == "ND":
        return M[0, 0]
    if kind == "NN":
        return M[1, 0]
    return M[0, 0] + M[1, 1] - 2.0


def _derivative(lam, kind, widths, coeffs, h=1e-20):
    return (characteristic(lam + 1j * h, kind, widths, coeffs)).imag / h


def _roots(kind, widths, coeffs, lo, hi):
    """Roots in (lo, hi] with multiplicities: sign changes plus tangential (double) zeros."""
    top = hi + 10 * SCAN_STEP
    grid = np.arange(lo, top, SCAN_STEP)
    f = np.array([characteristic(x, kind, widths, coeffs) for x in grid])
    scale = max(1.0, float(np.abs(f).max()))
    found = []
    for i in range(len(grid) - 1):
        a, b = grid[i], grid[i + 1]
        fa, fb = f[i], f[i + 1]
        if fa == 0.0:
            if i > 0:
                found.append((a, 1))
            continue
        if fa * fb < 0:
            r = brentq(lambda x: characteristic(x, kind, widths, coeffs), a, b, xtol=ROOT_TOL,
                       rtol=4 * np.finfo(float).eps, maxiter=200)
            found.append((r, 1))
    if f[-1] == 0.0:
        found.append((grid[-1], 1))
    # tangential zeros: stationary points of f where |f| vanishes
    d = np.array([_derivative(x, kind, widths, coeffs) for x in grid])
    for i in range(len(grid) - 1):
        if d[i] * d[i + 1] < 0:
            r = brentq(lambda x: _derivative(x, kind, widths, coeffs), grid[i], grid[i + 1],
                       xtol=ROOT_TOL, maxiter=200)
            if abs(characteristic(r, kind, widths, coeffs)) <= 1e-9 * scale:
                if not any(abs(r - x) < 10 * SCAN_STEP for x, _ in found):
                    found.append((r, 2))
        elif d[i] == 0.0 and abs(f[i]) <= 1e-9 * scale and i > 0:
            if not any(abs(grid[i] - x) < 10 * SCAN_STEP for x, _ in found):
                found.append((grid[i], 2))
    return sorted((r, k) for r, k in found if lo < r <= hi + 1e-9)


def _cheb(n):
    """Chebyshev points on [-1, 1] (descending) and the differentiation matrix."""
    x = np.cos(np.pi * np.arange(n + 1) / n)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n + 1)
    X = np.tile(x, (n + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(n + 1))
    D -= np.diag(D.sum(axis=1))
    return x, D


def oracle_exponents(kind, widths, coeffs, n: int = 48, upper: float = 2.0) -> np.ndarray:
    """Positive exponents in (0, upper] from a piecewise Chebyshev collocation of -Phi'' = mu Phi."""
    x, D = _cheb(n)
    K = len(widths)
    m = n + 1
    A = np.zeros((K * m, K * m))
    B = np.zeros((K * m, K * m))
    derivs = []
    for k, w in enumerate(widths):
        # theta = (1 - x) w / 2 maps x = 1 -> start, x = -1 -> end
        Dk = D * (-2.0 / w)
        derivs.append(Dk)
        rows = slice(k * m + 1, k * m + n)
        A[rows, k * m:(k + 1) * m] = -(Dk @ Dk)[1:n]
        B[rows, k * m:(k + 1) * m] = np.eye(m)[1:n]
    start = lambda k: k * m  # noqa: E731
    end = lambda k: k * m + n  # noqa: E731

    def interface(row_a, row_b, k, j):
        A[row_a, end(k)] = 1.0
        A[row_a, start(j)] = -1.0
        A[row_b, k * m:(k + 1) * m] = coeffs[k] * derivs[k][n]
        A[row_b, j * m:(j + 1) * m] -= coeffs[j] * derivs[j][0]

    for k in range(K - 1):
        interface(end(k), start(k + 1), k, k + 1)
    if kind == "periodic":
        interface(end(K - 1), start(0), K - 1, 0)
    else:
        if kind[0] == "D":
            A[start(0), start(0)] = 1.0
        else:
            A[start(0), 0:m] = derivs[0][0]
        if kind[1] == "D":
            A[end(K - 1), end(K - 1)] = 1.0
        else:
            A[end(K - 1), (K - 1) * m:K * m] = derivs[K - 1][n]
    mu = sla.eig(A, B, right=False)
    mu = mu[np.isfinite(mu)]
    mu = mu[np.abs(mu.imag) < 1e-6 * (1 + np.abs(mu.real))].real
    lam = np.sqrt(np.clip(mu, 0.0, None))
    lam = lam[(lam > 1e-5) & (lam <= upper + 1e-9)]
    return np.sort(lam)


@dataclass
class CornerExponents:
    vertex: int | None
    location: tuple | None
    kind: str
    widths: tuple
    coeffs: tuple
    exponents: list                    # positive exponents in (0, 2], repeated by multiplicity
    excluded: list = field(default_factory=list)   # exponent 0 for NN / periodic points
    in_Vs: bool = False
    eta: float = math.inf

    def to_dict(self) -> dict:
        return {"vertex": self.vertex, "location": list(self.location) if self.location else None,
                "kind": self.kind, "angle": float(sum(self.widths)),
                "sector_widths": list(self.widths), "sector_coefficients": list(self.coeffs),
                "exponents": self.exponents, "excluded": self.excluded, "in_Vs": self.in_Vs,
                "eta": self.eta}


def compute_singular_exponents(widths, kind: str, coeffs=None, check: bool = True,
                               upper: float = 2.0) -> CornerExponents:
    """Exponents of a corner with sector ``widths`` (radians), boundary kind and diffusion constants."""
    widths = tuple(float(w) for w in np.atleast_1d(widths))
    coeffs = tuple(float(a) for a in (np.ones(len(widths)) if coeffs is None else np.atleast_1d(coeffs)))
    if kind not in CORNER_TYPES:
        raise ValidationError(f"unknown corner type {kind!r}", "$.kind")
    if len(coeffs) != len(widths):
        raise ValidationError("need one diffusion constant per sector", "$.coeffs")
    total = sum(widths)
    if not (0 < total <= 2 * math.pi + 1e-12) or min(widths) <= 0:
        raise ValidationError("corner angle must lie in (0, 2 pi]", "$.angle")
    if min(coeffs) <= 0:
        raise ValidationError("diffusion constants must be positive", "$.coeffs")
    roots = _roots(kind, widths, coeffs, SCAN_START, upper)
    hi = upper
    while not roots and hi < 64:
        lo, hi = hi, 2 * hi
        roots = _roots(kind, widths, coeffs, lo, hi)
    exps = []
    for r, mult in roots:
        exps.extend([float(r)] * mult)
    if check:
        orc = oracle_exponents(kind, widths, coeffs, upper=max(upper, hi))
        lim = max(upper, hi) - 1e-6
        mine = np.array([e for e in exps if e <= lim])
        theirs = orc[orc <= lim]
        if len(mine) != len(theirs) or (len(mine) and np.max(np.abs(mine - theirs)) > ORACLE_TOL):
            raise InternalConsistencyError(
                "root finder and collocation oracle disagree",
                roots=mine.tolist(), oracle=theirs.tolist(), kind=kind)
    excluded = [0.0] if kind in ("NN", "periodic") else []
    in_range = [e for e in exps if e <= upper] or exps[:1]
    return CornerExponents(None, None, kind, widths, coeffs, in_range, excluded,
                           kind in ("NN", "periodic"), min(exps) if exps else math.inf)


# -- domain-level report --------------------------------------------------------

@dataclass
class ExponentReport:
    corners: list
    eta_min: float
    y: tuple = ()
    worst_y: tuple | None = None

    def recommended_kappa(self, orders=(1, 2, 3)) -> dict:
        from .mesh import grading_for_order
        return {int(m): grading_for_order(m, self.eta_min) for m in orders}

    def eta_of(self, vertex) -> float:
        for c in self.corners:
            if c.vertex == vertex:
                return c.eta
        raise KeyError(vertex)

    def to_dict(self) -> dict:
        return {"corners": [c.to_dict() for c in self.corners], "eta_min": self.eta_min,
                "worst_y": None if self.worst_y is None else list(self.worst_y),
                "recommended_kappa": {str(k): v for k, v in self.recommended_kappa().items()}}


def _frozen_coefficient(fam, domain, q, sector_index, direction, y):
    """One-sided limit of the isotropic diffusion coefficient at q inside a sector."""
    Q = np.asarray(q.location)
    sub = q.sectors[sector_index][1]
    vals = []
    for r in (1e-3, 1e-6, 1e-9):
        x = (Q + r * domain.diameter * np.array([math.cos(direction), math.sin(direction)]))[None, :]
        A, _, _ = fam.evaluate(x, np.array([sub]), y)
        A = A[0]
        scale = max(abs(A[0, 0]), abs(A[1, 1]), 1e-300)
        if abs(A[0, 1]) > 1e-10 * scale or abs(A[1, 0]) > 1e-10 * scale or \
                abs(A[0, 0] - A[1, 1]) > 1e-10 * scale:
            raise UnsupportedCornerError(
                f"anisotropic diffusion at singular point {list(q.location)}; only scalar "
                "(isotropic) coefficients are supported", vertex=q.vertex)
        vals.append(A[0, 0])
    if not np.isfinite(vals[-1]) or abs(vals[-1] - vals[-2]) > 1e-6 * abs(vals[-1]):
        raise UnsupportedCornerError(
            f"coefficient has no one-sided limit at {list(q.location)}", vertex=q.vertex)
    return float(vals[-1])


def corner_exponents_at(q, domain: DomainSpec, fam=None, y=(), check=True) -> CornerExponents:
    widths = [w for w, _ in q.sectors]
    coeffs = []
    angle = q.start_direction
    for i, (w, _) in enumerate(q.sectors):
        coeffs.append(1.0 if fam is None else
                      _frozen_coefficient(fam, domain, q, i, angle + 0.5 * w, y))
        angle += w
    kind = corner_type(q.bc_start, q.bc_end)
    res = compute_singular_exponents(widths, kind, coeffs, check=check)
    res.vertex = q.vertex
    res.location = q.location
    res.in_Vs = q.in_Vs
    if not q.in_Vs:
        res.excluded = [0.0] if kind in ("NN", "periodic") else []
    return res


def eta_for_domain(domain: DomainSpec, fam=None, y=(), samples=None, check=True) -> ExponentReport:
    """Per-point exponents; with ``samples`` the minimum over the sampled parameters is reported."""
    singular = classify_singular_points(domain)
    if samples is None:
        corners = [corner_exponents_at(q, domain, fam, y, check) for q in singular]
        eta = min((c.eta for c in corners), default=math.inf)
        return ExponentReport(corners, eta, tuple(np.atleast_1d(y).tolist()))
    best = None
    for ys in samples:
        rep = eta_for_domain(domain, fam, ys, None, check)
        if best is None or rep.eta_min < best.eta_min - 1e-14:
            best = rep
            best.worst_y = tuple(np.atleast_1d(ys).tolist())
    return best
