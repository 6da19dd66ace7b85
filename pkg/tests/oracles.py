"""Independent reference computations used by the tests."""

import numpy as np
from scipy.optimize import brentq


def duffy_rule(n):
    """Collapsed Gauss rule with n x n points on the reference triangle, built from scratch."""
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1), 0.5 * w
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    pts = np.column_stack([(u * (1 - v)).ravel(), v.ravel()])
    return pts, (wu * wv * (1 - v)).ravel()


def _monomials(p):
    return [(i, k - i) for k in range(p + 1) for i in range(k + 1)]


def dense_oracle(space, A_fn, b_fn, c_fn, f_fn, n=18):
    """Dense matrix and load of a(grad u, grad v) + (b . grad u) v + c u v and (f, v).

    Local bases are obtained by inverting a physical-coordinate Vandermonde
    matrix on each element's nodes, so nothing is shared with the reference
    element of the library beyond the DOF numbering.
    """
    ref, w = duffy_rule(n)
    exps = _monomials(space.p)
    N = space.ndof
    K = np.zeros((N, N))
    F = np.zeros(N)
    P = space.mesh.vertices[space.mesh.triangles]
    for t, dofs in enumerate(space.cell_dofs):
        p0, p1, p2 = P[t]
        J = np.column_stack([p1 - p0, p2 - p0])
        det = abs(np.linalg.det(J))
        X = p0 + ref @ J.T
        c0 = P[t].mean(axis=0)
        nodes = space.dof_coords[dofs] - c0
        Xc = X - c0
        V = np.array([[x ** i * y ** j for i, j in exps] for x, y in nodes])
        C = np.linalg.inv(V)           # column k: coefficients of basis k
        M = np.array([Xc[:, 0] ** i * Xc[:, 1] ** j for i, j in exps]).T
        Mx = np.array([i * Xc[:, 0] ** max(i - 1, 0) * Xc[:, 1] ** j for i, j in exps]).T
        My = np.array([j * Xc[:, 0] ** i * Xc[:, 1] ** max(j - 1, 0) for i, j in exps]).T
        phi, phx, phy = M @ C, Mx @ C, My @ C
        A = A_fn(X)                    # (q, 2, 2)
        b = b_fn(X)                    # (q, 2)
        c = c_fn(X)
        wd = w * det
        gx = A[:, 0, 0, None] * phx + A[:, 0, 1, None] * phy
        gy = A[:, 1, 0, None] * phx + A[:, 1, 1, None] * phy
        loc = (phx.T * wd) @ gx + (phy.T * wd) @ gy
        loc += (phi.T * wd) @ (b[:, 0, None] * phx + b[:, 1, None] * phy)
        loc += (phi.T * (wd * c)) @ phi
        K[np.ix_(dofs, dofs)] += loc
        F[dofs] += phi.T @ (wd * f_fn(X))
    return K, F


def two_sector_dd_exponents(w1, w2, a1, a2, upper=2.0, n_scan=20000):
    """Roots of a1 cos(l w1) sin(l w2) + a2 sin(l w1) cos(l w2) on (0, upper]."""
    def g(lam):
        return a1 * np.cos(lam * w1) * np.sin(lam * w2) + a2 * np.sin(lam * w1) * np.cos(lam * w2)
    grid = np.linspace(1e-6, upper, n_scan)
    vals = g(grid)
    roots = [brentq(g, grid[i], grid[i + 1], xtol=1e-15, rtol=1e-15)
             for i in range(len(grid) - 1) if vals[i] * vals[i + 1] < 0]
    return np.array(roots)
