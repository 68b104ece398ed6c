import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monofk.special import (
    bessel_j,
    composite_gauss_legendre,
    gauss_legendre,
    jacobi_polynomial,
    scaled_bessel,
)

MU_11 = math.sqrt(1.25)

# mpmath.besselj at 30 digits
FROZEN_J = [
    (0.5, 1.0, 0.67139670714180309),
    (MU_11, 0.3, 0.11236818239708381),
    (MU_11, 7.5, 0.089879193145006839),
    (MU_11, 40.0, 0.12290474479688664),
    (MU_11, 1000.0, 8.1513178701763167e-5),
    (2.958, 12.0, 0.18759728975327321),
    (10.3, 9.0, 0.10269403630115552),
    (49.7, 60.0, -0.13644124905554165),
    (49.7, 1000.0, 0.008031756324092647),
]


@pytest.mark.parametrize("mu,x,expected", FROZEN_J)
def test_bessel_frozen_values(mu, x, expected):
    assert bessel_j(mu, x) == pytest.approx(expected, rel=1e-10)


def test_half_integer_closed_form():
    assert bessel_j(0.5, 1.0) == pytest.approx(0.671396707, abs=1e-9)
    x = np.linspace(0.1, 900.0, 4001)
    closed = np.sqrt(2 / (np.pi * x)) * np.sin(x)
    big = np.abs(closed) > 1e-3 * np.sqrt(2 / (np.pi * x))
    assert np.allclose(bessel_j(0.5, x)[big], closed[big], rtol=1e-10, atol=0)
    closed15 = np.sqrt(2 / (np.pi * x)) * (np.sin(x) / x - np.cos(x))
    big = np.abs(closed15) > 1e-3 * np.sqrt(2 / (np.pi * x))
    assert np.allclose(bessel_j(1.5, x)[big], closed15[big], rtol=1e-10, atol=0)


def test_series_oracle_real_order():
    mu = mpmath.mpf("1.118034")
    series = mpmath.nsum(
        lambda k: (-1) ** k * mpmath.mpf(0.5) ** (mu + 2 * k) / (mpmath.factorial(k) * mpmath.gamma(mu + k + 1)),
        [0, 40],
    )
    assert bessel_j(1.118034, 1.0) == pytest.approx(float(series), rel=1e-13)


def test_zero_argument():
    assert bessel_j(1.3, 0.0) == 0.0
    assert bessel_j(0.0, 0.0) == 1.0


def test_domain_errors():
    with pytest.raises(ValueError):
        bessel_j(-0.5, 1.0)
    with pytest.raises(ValueError):
        bessel_j(1.0, -1.0)
    with pytest.raises(ValueError):
        scaled_bessel(0.3, 1.0)


def test_vectorised_shape():
    x = np.linspace(0, 50, 12).reshape(3, 4)
    assert bessel_j(2.2, x).shape == (3, 4)
    assert isinstance(bessel_j(2.2, 3.0), float)


@settings(max_examples=60, deadline=None)
@given(mu=st.floats(0.0, 50.0), x=st.floats(0.01, 1000.0))
def test_bessel_against_mpmath(mu, x):
    ref = float(mpmath.besselj(mu, x))
    envelope = math.sqrt(2 / (math.pi * x)) if x > mu else abs(ref)
    got = bessel_j(mu, x)
    assert abs(got - ref) <= 1e-10 * max(abs(ref), 1e-2 * envelope) + 1e-300


@settings(max_examples=40, deadline=None)
@given(mu=st.floats(0.5, 30.0), x=st.floats(0.5, 800.0))
def test_bessel_ode_residual(mu, x):
    # fourth-order central differences, step matched to the local scale
    h = 0.01 * min(1.0, x / max(mu, 1.0))
    f = bessel_j(mu, x + h * np.arange(-2, 3))
    d1 = (f[0] - 8 * f[1] + 8 * f[3] - f[4]) / (12 * h)
    d2 = (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * h * h)
    terms = np.array([x * x * d2, x * d1, (x * x - mu * mu) * f[2]])
    assert abs(terms.sum()) <= 1e-8 * np.abs(terms).max()


def test_continuity_across_regimes():
    for mu in (MU_11, 7.5, 20.0):
        for edge in (5.0, 25.0, 1.5 * mu):
            lo, hi = np.nextafter(edge, 0), np.nextafter(edge, np.inf)
            assert bessel_j(mu, lo) == pytest.approx(bessel_j(mu, hi), rel=1e-9, abs=1e-15)


def test_scaled_bessel_limits():
    assert scaled_bessel(1.5, 0.0) == 0.0
    assert scaled_bessel(0.5, 0.0) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-14)
    assert scaled_bessel(0.5, 1e-8) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-12)


def test_scaled_bessel_decay_bound():
    y = np.linspace(100.0, 1000.0, 2001)
    bound = math.sqrt(2 / math.pi) * 1.01
    assert np.all(np.abs(scaled_bessel(MU_11, y)) * y <= bound)
    assert abs(scaled_bessel(MU_11, 1000.0)) <= bound / 1000.0


def test_jacobi_basics():
    assert jacobi_polynomial(0, 2.0, 3.0, 0.4) == 1.0
    assert jacobi_polynomial(1, 0.0, 0.0, 0.3) == pytest.approx(0.3)
    # Legendre P_3
    assert jacobi_polynomial(3, 0.0, 0.0, 0.7) == pytest.approx(0.5 * (5 * 0.7**3 - 3 * 0.7))


@settings(max_examples=50, deadline=None)
@given(k=st.integers(0, 12), a=st.floats(0, 6), b=st.floats(0, 6), xi=st.floats(-1, 1))
def test_jacobi_reflection(k, a, b, xi):
    lhs = jacobi_polynomial(k, a, b, -xi)
    rhs = (-1) ** k * jacobi_polynomial(k, b, a, xi)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("k,a,b", [(1, 1.0, 1.0), (2, 2.0, 0.0), (2, 1.0, 3.0), (4, 2.5, 0.5)])
def test_jacobi_against_mpmath(k, a, b):
    for xi in np.linspace(-0.95, 0.95, 8):
        assert jacobi_polynomial(k, a, b, xi) == pytest.approx(float(mpmath.jacobi(k, a, b, xi)), rel=1e-12, abs=1e-12)


def _rodrigues(k, a, b, xi):
    # (-1)^k / (2^k k!) (1-x)^-a (1+x)^-b d^k/dx^k [(1-x)^(a+k) (1+x)^(b+k)], by hand for k <= 2
    w = (1 - xi) ** a * (1 + xi) ** b
    if k == 0:
        return 1.0
    if k == 1:
        d = -(a + 1) * (1 - xi) ** a * (1 + xi) ** (b + 1) + (b + 1) * (1 - xi) ** (a + 1) * (1 + xi) ** b
        return -d / (2 * w)
    d2 = (
        (a + 2) * (a + 1) * (1 - xi) ** a * (1 + xi) ** (b + 2)
        - 2 * (a + 2) * (b + 2) * (1 - xi) ** (a + 1) * (1 + xi) ** (b + 1)
        + (b + 2) * (b + 1) * (1 - xi) ** (a + 2) * (1 + xi) ** b
    )
    return d2 / (8 * w)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_jacobi_rodrigues_cross_check(k):
    for a, b in ((1.0, 1.0), (2.0, 0.0), (0.5, 3.0)):
        for xi in (-0.6, 0.1, 0.8):
            assert jacobi_polynomial(k, a, b, xi) == pytest.approx(_rodrigues(k, a, b, xi), rel=1e-12)


def test_gauss_legendre_exactness():
    rule = gauss_legendre(2, 0.0, 1.0)
    assert rule.integrate(rule.nodes**3) == pytest.approx(0.25, abs=1e-14)
    for n in (1, 5, 40):
        r = gauss_legendre(n, -1.0, 1.0)
        assert r.integrate(np.ones(n)) == pytest.approx(2.0, abs=1e-14)
    r = gauss_legendre(20, 0.0, math.pi)
    assert r.integrate(np.sin(r.nodes)) == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("n", [1, 3, 17, 64])
def test_quadrature_invariants(n):
    r = gauss_legendre(n, -2.0, 5.0)
    assert len(r.nodes) == len(r.weights) == n
    assert np.all(np.diff(r.nodes) > 0)
    assert np.all((r.nodes > -2.0) & (r.nodes < 5.0))
    assert np.all(r.weights > 0)
    assert r.weights.sum() == pytest.approx(7.0, abs=1e-12)


def test_quadrature_convergence_order():
    f = lambda x: np.exp(np.sin(3 * x))  # noqa: E731
    exact = float(mpmath.quad(lambda x: mpmath.exp(mpmath.sin(3 * x)), [0, 2]))
    errs = []
    for n in (4, 8, 16):
        r = gauss_legendre(n, 0.0, 2.0)
        errs.append(abs(r.integrate(f(r.nodes)) - exact))
    assert errs[1] < errs[0] / 10 and errs[2] < errs[1] / 100


def test_gauss_legendre_rejects_bad_input():
    with pytest.raises(ValueError):
        gauss_legendre(0, 0.0, 1.0)
    with pytest.raises(ValueError):
        gauss_legendre(4, 1.0, 1.0)


def test_composite_rule():
    r = composite_gauss_legendre(np.geomspace(1e-3, 10.0, 9), 16)
    assert r.integrate(1.0 / r.nodes) == pytest.approx(math.log(1e4), rel=1e-12)
