"""Quadrature rules on the reference triangle {(s, t): s, t >= 0, s + t <= 1} and on [0, 1]."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_interval(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _radon7():
    a = (6.0 - np.sqrt(15.0)) / 21.0
    b = (6.0 + np.sqrt(15.0)) / 21.0
    wa = (155.0 - np.sqrt(15.0)) / 2400.0
    wb = (155.0 + np.sqrt(15.0)) / 2400.0
    pts = np.array([
        [1 / 3, 1 / 3],
        [a, a], [1 - 2 * a, a], [a, 1 - 2 * a],
        [b, b], [1 - 2 * b, b], [b, 1 - 2 * b],
    ])
    w = np.array([9 / 80, wa, wa, wa, wb, wb, wb])
    return pts, w


@lru_cache(maxsize=None)
def collapsed_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Conical-product Gauss rule exact for polynomials of total degree ``degree``.

    The square [0,1]^2 is collapsed onto the triangle through
    (u, v) -> (u, (1 - u) v); the collapse point is the vertex (1, 0).
    """
    n = max(1, int(np.ceil((degree + 2) / 2)))
    x, w = gauss_interval(n)
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    s = u.ravel()
    t = ((1.0 - u) * v).ravel()
    weights = (wu * wv * (1.0 - u)).ravel()
    return np.column_stack([s, t]), weights


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Points (n, 2) and weights (n,) summing to 1/2, exact to ``degree``."""
    if degree <= 5:
        return _radon7()
    return collapsed_rule(degree)


def assembly_degree(p: int) -> int:
    """Default assembly quadrature degree for Lagrange degree ``p``."""
    return 5 if p <= 2 else 2 * p + 2
