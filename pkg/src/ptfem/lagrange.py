"""Lagrange elements of arbitrary degree on the reference triangle."""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np


def monomial_exponents(p: int) -> list[tuple[int, int]]:
    return [(i, d - i) for d in range(p + 1) for i in range(d, -1, -1)]


def monomials(points: np.ndarray, p: int, alpha=(0, 0)) -> np.ndarray:
    """Derivative ``alpha`` of all monomials of degree <= p at ``points``.

    Returns an array of shape (n_points, n_monomials).
    """
    points = np.asarray(points, dtype=float)
    s, t = points[..., 0], points[..., 1]
    cols = []
    for i, j in monomial_exponents(p):
        if i < alpha[0] or j < alpha[1]:
            cols.append(np.zeros_like(s))
            continue
        c = (factorial(i) // factorial(i - alpha[0])) * (factorial(j) // factorial(j - alpha[1]))
        cols.append(c * s ** (i - alpha[0]) * t ** (j - alpha[1]))
    return np.stack(cols, axis=-1)


class ReferenceElement:
    """Degree-p Lagrange element with equispaced lattice nodes.

    Local node order: the three vertices, then the p-1 nodes of each edge
    (0->1, 1->2, 2->0) listed from the first to the second vertex, then the
    interior nodes.
    """

    EDGES = ((0, 1), (1, 2), (2, 0))

    def __init__(self, p: int):
        if p < 1:
            raise ValueError("degree must be >= 1")
        self.p = p
        verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        nodes = [verts[0], verts[1], verts[2]]
        for a, b in self.EDGES:
            for k in range(1, p):
                nodes.append(verts[a] + (verts[b] - verts[a]) * k / p)
        interior = []
        for j in range(1, p):
            for i in range(1, p - j):
                interior.append([i / p, j / p])
        nodes.extend(np.array(interior).reshape(-1, 2))
        self.nodes = np.array(nodes)
        self.n_local = len(self.nodes)
        self.n_interior = len(interior)
        vand = monomials(self.nodes, p)
        self.coeffs = np.linalg.inv(vand)  # (n_mono, n_local)

    def eval(self, points: np.ndarray, alpha=(0, 0)) -> np.ndarray:
        """Reference-coordinate derivative ``alpha`` of all basis functions, (n_points, n_local)."""
        return monomials(points, self.p, alpha) @ self.coeffs

    def grad(self, points: np.ndarray) -> np.ndarray:
        """Reference gradients, shape (n_points, n_local, 2)."""
        return np.stack([self.eval(points, (1, 0)), self.eval(points, (0, 1))], axis=-1)

    def edge_points(self, edge: int, t: np.ndarray) -> np.ndarray:
        a, b = self.EDGES[edge]
        v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        return v[a][None, :] + np.asarray(t)[:, None] * (v[b] - v[a])[None, :]


@lru_cache(maxsize=None)
def reference_element(p: int) -> ReferenceElement:
    return ReferenceElement(p)
