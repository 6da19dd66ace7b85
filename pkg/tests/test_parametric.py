import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptfem.coefficients import CoefficientFamily, SourceData
from ptfem.errors import ParameterError, SmoothnessClassError
from ptfem.fem import FESpace, assemble, h1_norm, solve
from ptfem.mesh import generate_initial_mesh, refine
from ptfem.parametric import CollocationGrid, Surrogate, build_surrogate, decay_fit, l2uv_error, \
    parametric_derivative, parse_sampler, scan_samples


@pytest.fixture
def setup(square):
    space = FESpace(refine(generate_initial_mesh(square, 0.5)), 1)
    fam = CoefficientFamily.build(a="2 + y1", s=1, family="affine", domain=square)
    data = SourceData.build(f="1 + x1", s=1, domain=square)
    return space, fam, data


@pytest.mark.parametrize("family", ["gauss-legendre", "clenshaw-curtis"])
@pytest.mark.parametrize("n", [1, 2, 5, 8])
def test_quadrature_exact_on_polynomials(family, n):
    x, w = CollocationGrid((n,), family).axes[0]
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    exact_deg = 2 * n - 1 if family == "gauss-legendre" else n - 1
    for k in range(exact_deg + 1):
        assert w @ x ** k == pytest.approx((1 + (-1) ** k) / (2 * (k + 1)), abs=1e-13)


def test_grid_tensor_structure():
    g = CollocationGrid((3, 2))
    assert g.size == 6 and g.nodes.shape == (6, 2)
    assert g.weights.sum() == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        CollocationGrid((0,))
    with pytest.raises(ParameterError):
        CollocationGrid((2,), "newton-cotes")


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=2), st.integers(1, 4), st.integers(1, 4))
def test_surrogate_reproduces_tensor_polynomials(y, n1, n2):
    # a surrogate with n nodes per axis reproduces y-polynomials of degree < n exactly
    grid = CollocationGrid((n1, n2), "clenshaw-curtis")
    def poly(t):
        return np.array([(t[0] ** (n1 - 1)) * (1 + t[1]) ** (n2 - 1), t[0] ** (n1 - 1) - 2 * t[1] ** (n2 - 1)])
    vals = np.array([poly(t) for t in grid.nodes])
    sur = Surrogate(grid, None, vals)
    assert np.allclose(sur(y), poly(y), atol=1e-12)


def test_surrogate_interpolates_at_nodes(setup):
    space, fam, data = setup
    sur = build_surrogate(fam, data, space, CollocationGrid((3,)))
    for node, vals in zip(sur.grid.nodes, sur.values):
        assert np.array_equal(sur(node), vals)
    with pytest.raises(ParameterError):
        sur((0.0, 0.0))


def test_l2uv_gauss_sampler_small_for_rich_grid(setup):
    space, fam, data = setup
    sur = build_surrogate(fam, data, space, CollocationGrid((8,)))
    res = l2uv_error(sur, fam, data, sampler="gauss:4")
    assert res.estimate < 1e-4
    assert res.stderr == 0.0


def test_coincident_samples_are_offset(setup):
    space, fam, data = setup
    sur = build_surrogate(fam, data, space, CollocationGrid((3,)))
    with pytest.warns(RuntimeWarning, match="coincide"):
        res = l2uv_error(sur, fam, data, sampler="gauss:3")
    assert res.warnings


def test_mc_reproducible(setup):
    space, fam, data = setup
    sur = build_surrogate(fam, data, space, CollocationGrid((2,)))
    a = l2uv_error(sur, fam, data, sampler="mc:10", seed=4)
    b = l2uv_error(sur, fam, data, sampler="mc:10", seed=4)
    assert a.estimate == b.estimate and a.stderr > 0


@pytest.mark.parametrize("bad", ["mc:1", "mc:x", "grid:3", "gauss:"])
def test_bad_sampler(bad):
    with pytest.raises(ParameterError):
        parse_sampler(bad)


def test_derivative_closed_form(setup):
    space, fam, data = setup
    y0 = 0.4
    u = solve(assemble(fam, space, (y0,), data=data)).u
    res = parametric_derivative(fam, data, space, (y0,), (1,))
    exact = -u / (2 + y0)
    assert h1_norm(space, res.derivative - exact) <= 1e-10 * h1_norm(space, exact)
    res2 = parametric_derivative(fam, data, space, (y0,), (2,))
    exact2 = 2 * u / (2 + y0) ** 2
    assert h1_norm(space, res2.derivative - exact2) <= 1e-10 * h1_norm(space, exact2)


def test_taylor_remainder_is_second_order(setup):
    space, fam, data = setup
    y0 = 0.1
    u0 = solve(assemble(fam, space, (y0,), data=data)).u
    du = parametric_derivative(fam, data, space, (y0,), (1,)).derivative
    hs = np.array([0.2, 0.1, 0.05, 0.025])
    rem = [h1_norm(space, solve(assemble(fam, space, (y0 + h,), data=data)).u - u0 - h * du) for h in hs]
    slope = np.polyfit(np.log(hs), np.log(rem), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.1)


def test_derivative_order_limited_by_smoothness_class(square):
    space = FESpace(generate_initial_mesh(square, 0.5), 1)
    fam = CoefficientFamily.build(a="2 + y1", s=1, k0=1, domain=square)
    with pytest.raises(SmoothnessClassError):
        parametric_derivative(fam, SourceData.build(f=1, s=1), space, (0.0,), (2,))


def test_decay_fit_geometric():
    n = np.array([2, 4, 6, 8])
    fit = decay_fit(n, 3.0 * np.exp(-0.7 * n))
    assert fit["rate"] == pytest.approx(0.7, rel=1e-6)


def test_scan_samples():
    ys = scan_samples(2, 5)
    assert ys.shape == (25, 2)
    assert {tuple(v) for v in ys} >= {(-1.0, -1.0), (1.0, 1.0)}


def test_evaluation_next_to_node_is_finite():
    grid = CollocationGrid((3,), "clenshaw-curtis")
    sur = Surrogate(grid, None, np.array([[1.0], [2.0], [5.0]]))
    assert np.allclose(sur((1e-300,)), [2.0])
    assert np.allclose(sur((-1 + 1e-17,)), [1.0])
