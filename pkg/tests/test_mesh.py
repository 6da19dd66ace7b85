import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptfem.convergence import mesh_hierarchy
from ptfem.errors import ParameterError
from ptfem.mesh import generate_initial_mesh, grading_for_order, nearest_neighbor_distance, refine, \
    write_mesh


def test_initial_mesh_covers_domain(lshape):
    mesh = generate_initial_mesh(lshape, 0.5)
    assert mesh.areas().min() > 0
    assert mesh.areas().sum() == pytest.approx(lshape.area, rel=1e-12)
    assert mesh.h <= 1.0 + 1e-12
    mesh.check_conformity()


def test_uniform_refinement_counts(square):
    mesh = generate_initial_mesh(square, 1.0)
    fine = refine(mesh)
    assert fine.n_triangles == 4 * mesh.n_triangles
    assert fine.h == pytest.approx(mesh.h / 2)
    assert fine.min_angle() == pytest.approx(mesh.min_angle())
    fine.check_conformity()


def test_graded_half_equals_uniform(lshape):
    mesh = generate_initial_mesh(lshape, 0.5)
    graded = mesh.with_grading({0: 0.5})
    for _ in range(2):
        graded, mesh = refine(graded, "graded"), refine(mesh)
    assert np.array_equal(graded.vertices, mesh.vertices)
    assert np.array_equal(graded.triangles, mesh.triangles)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 0.5), st.integers(1, 3))
def test_graded_distance_scales_like_kappa_power(kappa, levels):
    meshes = mesh_hierarchy(_lshape(), levels, "graded", {0: kappa})
    d0 = nearest_neighbor_distance(meshes[0], 0)
    dl = nearest_neighbor_distance(meshes[-1], 0)
    assert dl == pytest.approx(d0 * kappa ** levels, rel=1e-9)
    assert meshes[-1].areas().sum() == pytest.approx(3.0, rel=1e-12)


def _lshape():
    from ptfem.geometry import DomainSpec, Subdomain
    return DomainSpec([[0, 0], [1, 0], [1, 1], [-1, 1], [-1, -1], [0, -1]],
                      [Subdomain("a", (0, 1, 2, 3, 4, 5))])


def test_grading_rule():
    assert grading_for_order(1, 2.0) == 0.5
    eta = 2 / 3
    assert grading_for_order(2, eta) == pytest.approx(2 ** (-2 / (0.95 * eta)))
    assert grading_for_order(1, eta) == pytest.approx(2 ** (-1 / (0.95 * eta)))
    assert grading_for_order(4, 0.1) == 0.1
    with pytest.raises(ParameterError):
        grading_for_order(0, 1.0)


def test_invalid_kappa(square):
    with pytest.raises(ParameterError):
        generate_initial_mesh(square, 0.5).with_grading({0: 0.7})


def test_interface_edges_preserved(split_square):
    mesh = refine(refine(generate_initial_mesh(split_square, 0.5)))
    left = mesh.tri_sub == split_square.subdomain_index("L")
    cent = mesh.vertices[mesh.triangles].mean(axis=1)
    assert np.all(cent[left, 0] < 0.5) and np.all(cent[~left, 0] > 0.5)


def test_write_mesh(tmp_path, square):
    mesh = refine(generate_initial_mesh(square, 0.5))
    write_mesh(mesh, tmp_path / "m.txt")
    text = (tmp_path / "m.txt").read_text()
    assert text.startswith(f"# vertices {mesh.n_vertices}")
    assert (tmp_path / "m.txt.json").exists()
    assert math.isfinite(mesh.min_angle())
