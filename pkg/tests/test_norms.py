import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptfem.convergence import make_case, mesh_hierarchy
from ptfem.errors import OrderError, ValidationError
from ptfem.expressions import parse_expression
from ptfem.fem import FESpace
from ptfem.geometry import SmoothedDistance
from ptfem.mesh import generate_initial_mesh, refine
from ptfem.norms import ExprField, FEField, NormSpec, broken_norm, broken_norm_details, multi_indices


def test_multi_indices():
    assert multi_indices(1) == [(0, 0), (1, 0), (0, 1)]
    assert len(multi_indices(3)) == 10


def test_h1_norm_of_linear_function(square):
    mesh = refine(generate_initial_mesh(square, 0.5))
    u = ExprField(parse_expression("x1"), mesh)
    assert broken_norm(u, NormSpec(1), mesh) == pytest.approx(math.sqrt(4 / 3), rel=1e-12)
    assert broken_norm(u, NormSpec(0), mesh) == pytest.approx(math.sqrt(1 / 3), rel=1e-12)


def test_fe_field_matches_expression(square):
    mesh = refine(generate_initial_mesh(square, 0.5))
    space = FESpace(mesh, 2)
    expr = parse_expression("x1**2 - x1*x2 + 3")
    uh = FEField(space, space.interpolate(lambda X, s: X[:, 0] ** 2 - X[:, 0] * X[:, 1] + 3))
    for m in (0, 1, 2):
        a = broken_norm(uh, NormSpec(m), mesh)
        b = broken_norm(ExprField(expr, mesh), NormSpec(m), mesh)
        assert a == pytest.approx(b, rel=1e-12)
    with pytest.raises(OrderError):
        broken_norm(uh, NormSpec(3), mesh)


def test_sup_norm(square):
    mesh = refine(generate_initial_mesh(square, 0.5))
    u = ExprField(parse_expression("x1*x2"), mesh)
    assert broken_norm(u, NormSpec(0, mode="Winf"), mesh) == pytest.approx(1.0, rel=1e-12)


def test_weighted_norm_is_finite_below_exponent(lshape):
    case = make_case("dirichlet-corner", lshape)
    mesh = mesh_hierarchy(lshape, 2, "graded", {case.vertex: 0.2})[-1]
    sd = SmoothedDistance.from_domain(lshape)
    good = broken_norm_details(case.field(mesh), NormSpec(2, 1.5, "broken-Kma"), mesh, sd)
    bad = broken_norm_details(case.field(mesh), NormSpec(2, 1.9, "broken-Kma"), mesh, sd)
    assert math.isfinite(good.value) and not good.divergent
    assert bad.divergent and bad.value == math.inf


def test_weight_one_without_singular_set(square):
    mesh = refine(generate_initial_mesh(square, 0.5))
    sd = SmoothedDistance()
    u = ExprField(parse_expression("sin(x1)*x2"), mesh)
    assert broken_norm(u, NormSpec(1, 0.7, "broken-Kma"), mesh, sd) == \
        pytest.approx(broken_norm(u, NormSpec(1), mesh, sd), rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(-5, 5), st.floats(-2, 2))
def test_norm_homogeneity_and_triangle(c, shift):
    mesh = _mesh()
    u = ExprField(parse_expression("x1*x2 + 1"), mesh)
    v = ExprField(parse_expression(f"{shift}*x1"), mesh)
    spec = NormSpec(1)
    assert broken_norm(c * u, spec, mesh) == pytest.approx(abs(c) * broken_norm(u, spec, mesh), abs=1e-12)
    assert broken_norm(u + v, spec, mesh) <= broken_norm(u, spec, mesh) + broken_norm(v, spec, mesh) + 1e-12


_MESH = []


def _mesh():
    if not _MESH:
        from ptfem.geometry import DomainSpec, Subdomain
        d = DomainSpec([[0, 0], [1, 0], [1, 1], [0, 1]], [Subdomain("o", (0, 1, 2, 3))])
        _MESH.append(generate_initial_mesh(d, 0.5))
    return _MESH[0]


def test_bad_mode():
    with pytest.raises(ValidationError):
        NormSpec(1, 0.0, "L7")


def test_weighted_value_scales_with_weight(lshape):
    mesh = refine(generate_initial_mesh(lshape, 0.5))
    u = ExprField(parse_expression("1"), mesh)
    lo = broken_norm(u, NormSpec(0, -0.5, "broken-Kma"), mesh)
    hi = broken_norm(u, NormSpec(0, 0.5, "broken-Kma"), mesh)
    # rho <= 1, so rho^{-a} grows with a
    assert lo < math.sqrt(3.0) < hi
    assert np.isfinite(hi)
