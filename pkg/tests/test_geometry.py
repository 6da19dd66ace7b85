import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptfem.errors import AmbiguousSideError, GeometryError, ValidationError
from ptfem.geometry import Category, DomainSpec, SmoothedDistance, Subdomain, classify_singular_points, \
    interface_side


def test_square_has_four_dirichlet_corners(square):
    pts = classify_singular_points(square)
    assert len(pts) == 4
    for q in pts:
        assert q.categories == {Category.BOUNDARY_VERTEX}
        assert not q.in_Vs
        assert q.total_angle == pytest.approx(math.pi / 2)


def test_lshape_reentrant_angle(lshape):
    q = next(q for q in classify_singular_points(lshape) if q.location == (0.0, 0.0))
    assert q.total_angle == pytest.approx(1.5 * math.pi, abs=1e-12)


def test_bc_change_and_neumann_membership(lshape_nn):
    pts = {q.vertex: q for q in classify_singular_points(lshape_nn)}
    assert pts[0].in_Vs
    assert pts[0].bc_start == pts[0].bc_end == "neumann"
    assert Category.BC_CHANGE in pts[1].categories
    assert not pts[1].in_Vs


def test_interface_meets_boundary(split_square):
    pts = {q.vertex: q for q in classify_singular_points(split_square)}
    assert Category.INTERFACE_MEETS_BOUNDARY in pts[1].categories
    assert set(pts[1].angles) == {"L", "R"}
    assert pts[1].angles["L"] == pytest.approx(math.pi / 2)


def test_smooth_domain_has_empty_singular_set():
    d = DomainSpec([[0, 0], [1, 0], [1, 1], [0, 1]], [Subdomain("o", (0, 1, 2, 3))], smooth=True)
    assert classify_singular_points(d) == []
    assert np.all(SmoothedDistance.from_domain(d)(np.random.default_rng(0).random((5, 2))) == 1.0)


def test_overlapping_subdomains_rejected():
    with pytest.raises(ValidationError):
        DomainSpec([[0, 0], [1, 0], [1, 1], [0, 1]],
                   [Subdomain("a", (0, 1, 2, 3)), Subdomain("b", (0, 1, 2, 3))])


def test_interface_side(split_square):
    assert interface_side(split_square, [0.51, 0.5])[1] == split_square.subdomain_index("R")
    assert interface_side(split_square, [0.49, 0.5])[1] == split_square.subdomain_index("L")
    with pytest.raises(AmbiguousSideError):
        interface_side(split_square, [0.5, 0.0])
    assert interface_side(split_square, [0.5, 0.5], hint="L")[1] == split_square.subdomain_index("L")


def test_domain_roundtrip(split_square):
    again = DomainSpec.from_dict(split_square.to_dict())
    assert np.array_equal(again.vertices, split_square.vertices)
    assert [s.kind for s in again.segments] == [s.kind for s in split_square.segments]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-2, 2), st.floats(-2, 2)), min_size=1, max_size=20))
def test_smoothed_distance_bounds(pts):
    sd = SmoothedDistance.from_points([[0, 0], [1, 0]])
    x = np.array(pts)
    rho = sd(x)
    dist = np.minimum(np.linalg.norm(x, axis=1), np.linalg.norm(x - [1, 0], axis=1))
    assert np.all(rho <= 1.0)
    assert np.all(rho <= dist + 1e-15)
    assert np.all(rho >= np.minimum(dist, 0.5) - 1e-15)


def test_pinched_domain_rejected():
    d = DomainSpec([[0, 0], [1, 0], [1, 1], [-1, 0], [-1, -1]],
                   [Subdomain("a", (0, 1, 2)), Subdomain("b", (0, 3, 4))])
    with pytest.raises(GeometryError, match="pinched"):
        classify_singular_points(d)
