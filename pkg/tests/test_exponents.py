import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import two_sector_dd_exponents
from ptfem.coefficients import CoefficientFamily
from ptfem.errors import UnsupportedCornerError, ValidationError
from ptfem.exponents import compute_singular_exponents, eta_for_domain, oracle_exponents


@pytest.mark.parametrize("omega", [math.pi / 3, math.pi / 2, 1.5 * math.pi, 1.9 * math.pi])
def test_dd_corner(omega):
    res = compute_singular_exponents([omega], "DD")
    assert abs(res.eta - math.pi / omega) <= 1e-10
    assert res.excluded == []


def test_nn_corner_reports_zero_mode():
    omega = 1.5 * math.pi
    res = compute_singular_exponents([omega], "NN")
    assert res.excluded == [0.0]
    assert np.allclose(res.exponents, [k * math.pi / omega for k in (1, 2, 3)], atol=1e-10)


def test_dn_corner():
    omega = 1.5 * math.pi
    res = compute_singular_exponents([omega], "DN")
    assert res.eta == pytest.approx(math.pi / (2 * omega), abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.3, 3.0), st.floats(0.1, 10.0))
def test_two_material_wedge_matches_oracle(w1, w2, ratio):
    res = compute_singular_exponents([w1, w2], "DD", [1.0, ratio])
    ref = two_sector_dd_exponents(w1, w2, 1.0, ratio)
    got = np.array(res.exponents)
    got = got[got <= 2.0 - 1e-6]
    ref = ref[ref <= 2.0 - 1e-6]
    assert len(got) == len(ref)
    assert np.allclose(got, ref, rtol=0, atol=1e-8)


def test_collocation_oracle_agrees_with_closed_form():
    assert oracle_exponents("DD", [1.5 * math.pi], [1.0])[0] == pytest.approx(2 / 3, abs=1e-8)


def test_interior_kink_periodic_has_zero_mode():
    res = compute_singular_exponents([math.pi / 2, 1.5 * math.pi], "periodic", [1.0, 5.0])
    assert res.excluded == [0.0]
    assert 0 < res.eta < 1


def test_domain_eta(lshape, lshape_nn):
    assert eta_for_domain(lshape).eta_min == pytest.approx(2 / 3, abs=1e-10)
    rep = eta_for_domain(lshape_nn)
    assert rep.eta_min == pytest.approx(2 / 3, abs=1e-10)
    assert rep.eta_of(1) == pytest.approx(1.0, abs=1e-10)
    assert rep.to_dict()["recommended_kappa"]["1"] == pytest.approx(2 ** (-1 / (0.95 * 2 / 3)))


def test_interface_point_uses_coefficients(split_square):
    fam = CoefficientFamily.build(a={"L": 1, "R": 3}, domain=split_square)
    rep = eta_for_domain(split_square, fam)
    c = next(c for c in rep.corners if c.vertex == 1)
    assert sorted(c.coeffs) == [1.0, 3.0]


def test_anisotropic_corner_unsupported(lshape):
    fam = CoefficientFamily.build(a11=1, a22=2, domain=lshape)
    with pytest.raises(UnsupportedCornerError):
        eta_for_domain(lshape, fam)


def test_invalid_angle():
    with pytest.raises(ValidationError):
        compute_singular_exponents([7.0], "DD")
