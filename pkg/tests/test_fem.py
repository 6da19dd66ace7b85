import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_oracle
from ptfem.coefficients import CoefficientFamily, SourceData, estimate_positivity_constants
from ptfem.errors import ConfigurationError, EvaluationError, NotPositiveDefiniteError, \
    PositivityViolationError
from ptfem.fem import FESpace, assemble, h1_norm, make_cutoffs, solve, solve_augmented
from ptfem.mesh import generate_initial_mesh, refine

COEFFS = dict(a11="2 + x1*x2", a12="0.3*sin(x1)", a22="1.5 + exp(x2)/4",
              b1="0.5*x2", b2="cos(x1)", c="1 + x1**2")


def _fns():
    def A(X):
        x, y = X[:, 0], X[:, 1]
        out = np.empty((len(X), 2, 2))
        out[:, 0, 0] = 2 + x * y
        out[:, 0, 1] = out[:, 1, 0] = 0.3 * np.sin(x)
        out[:, 1, 1] = 1.5 + np.exp(y) / 4
        return out
    return (A, lambda X: np.column_stack([0.5 * X[:, 1], np.cos(X[:, 0])]),
            lambda X: 1 + X[:, 0] ** 2, lambda X: np.sin(X[:, 0] + 2 * X[:, 1]))


def small_mesh(domain):
    mesh = generate_initial_mesh(domain, 1.0)
    assert mesh.n_triangles <= 20
    return mesh


@pytest.mark.parametrize("p", [1, 2, 3])
def test_assembly_matches_dense_oracle(lshape, p):
    mesh = small_mesh(lshape)
    space = FESpace(mesh, p)
    fam = CoefficientFamily.build(**COEFFS, domain=lshape)
    data = SourceData.build(f="sin(x1 + 2*x2)", domain=lshape)
    sysm = assemble(fam, space, data=data, quad_degree=30)
    K, F = dense_oracle(space, *_fns())
    assert np.abs(sysm.full.toarray() - K).max() <= 1e-10 * np.abs(K).max()
    assert np.abs(sysm.load_full - F).max() <= 1e-10 * np.abs(F).max()


def test_interface_dofs_shared(split_square):
    space = FESpace(refine(generate_initial_mesh(split_square, 0.5)), 2)
    on = np.isclose(space.dof_coords[:, 0], 0.5)
    assert len(np.unique(space.dof_coords[on], axis=0)) == on.sum()


def test_p1_reproduces_linear_solution(square):
    space = FESpace(refine(generate_initial_mesh(square, 0.5)), 1)
    fam = CoefficientFamily.build(a="1 + x1", domain=square)
    # -div((1 + x) grad(x + 2 y)) = -1; boundary values via a lifting
    data = SourceData.build(f=-1.0, domain=square)
    sysm = assemble(fam, space, data=data)
    g = space.dof_coords[:, 0] + 2 * space.dof_coords[:, 1]
    lift = np.where(space.dirichlet, g, 0.0)
    rhs = sysm.load - (sysm.full @ lift)[space.free]
    u = np.linalg.solve(sysm.matrix.toarray(), rhs)
    assert np.allclose(u, g[space.free], atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 5.0), st.floats(-3, 3))
def test_solution_linear_in_data(scale, shift):
    from ptfem.geometry import DomainSpec, Subdomain
    dom = DomainSpec([[0, 0], [1, 0], [1, 1], [0, 1]], [Subdomain("o", (0, 1, 2, 3))])
    space = _cached_space(dom)
    fam = CoefficientFamily.build(a=scale, domain=dom)
    u1 = solve(assemble(fam, space, data=SourceData.build(f=1.0, domain=dom))).u
    u2 = solve(assemble(fam, space, data=SourceData.build(f=shift, domain=dom))).u
    assert np.allclose(u2, shift * u1, atol=1e-12 * (1 + abs(shift)))


_SPACES = {}


def _cached_space(dom):
    if "sq" not in _SPACES:
        _SPACES["sq"] = FESpace(refine(generate_initial_mesh(dom, 0.5)), 2)
    return _SPACES["sq"]


def test_pure_neumann_laplacian_rejected(square):
    dom = square.__class__(square.vertices, square.subdomains, default_bc="neumann")
    space = FESpace(refine(generate_initial_mesh(dom, 0.5)), 1)
    fam = CoefficientFamily.build(a=1, domain=dom)
    with pytest.raises(NotPositiveDefiniteError) as exc:
        estimate_positivity_constants(fam, space)
    vec = exc.value.eigenvector[space.free]
    assert np.ptp(vec) < 1e-8         # the constant mode
    with pytest.raises(PositivityViolationError):
        solve(assemble(fam, space, data=SourceData.build(f=1.0, domain=dom)))


def test_coercivity_of_solution(lshape):
    space = FESpace(refine(generate_initial_mesh(lshape, 0.5)), 2)
    fam = CoefficientFamily.build(a="1 + x1**2", c=0.5, domain=lshape)
    est = estimate_positivity_constants(fam, space)
    sysm = assemble(fam, space, data=SourceData.build(f=1.0, domain=lshape))
    u = solve(sysm).u[space.free]
    assert u @ (sysm.sym @ u) >= est.r_h * h1_norm(space, space.extend(u)) ** 2 * (1 - 1e-12)


def test_nonfinite_coefficient_reported(square):
    space = FESpace(generate_initial_mesh(square, 0.5), 1)
    fam = CoefficientFamily.build(a="1/(x1 - 0.5)**0", c="log(x1 - 2)", domain=square)
    with pytest.raises(EvaluationError):
        assemble(fam, space)


def test_interface_data_requires_interface(square):
    space = FESpace(generate_initial_mesh(square, 0.5), 1)
    with pytest.raises(ConfigurationError):
        assemble(CoefficientFamily.build(a=1), space, data=SourceData.build(h=1.0))


def test_augmented_solve_recovers_constant(lshape_nn):
    space = FESpace(refine(generate_initial_mesh(lshape_nn, 0.5)), 2)
    cut = make_cutoffs(space)
    assert len(cut) == 1
    sol = solve_augmented(assemble(CoefficientFamily.build(a=1), space, data=SourceData.build(f=1.0)), cut)
    assert np.allclose(sol.u, sol.u_r + sum(c * cut[i](space.dof_coords) for i, c in
                                            enumerate(sol.ws_coefficients.values())), atol=1e-10)
