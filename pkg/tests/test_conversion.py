"""Smoothed gas-power conversion law."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gaspower.conversion import (
    ConversionConfigError,
    ConversionEdge,
    ConversionFactors,
    check_monotone,
    conversion_flow,
    conversion_residual,
    smoothing_ds,
    smoothing_s,
)

FACTORS = ConversionFactors()
E_GTP = FACTORS.e_gtp(0.785)
E_PTG = FACTORS.e_ptg(0.785)
EDGE = ConversionEdge("c", "node", "bus", E_GTP, E_PTG, epsilon=1.0)


def random_triples(rng, n=100):
    a = rng.uniform(0.005, 1.0, n)
    b = rng.uniform(0.005, 1.0, n)
    eps = rng.uniform(0.01, 50.0, n)
    return zip(a, b, eps)


def test_factors_from_efficiencies():
    assert E_GTP == pytest.approx(1 / (0.785 * 40 * 0.4), rel=1e-14)
    assert E_PTG == pytest.approx(0.8 / (0.785 * 1.11 * 40), rel=1e-14)
    # quoted values are the first three significant figures (0.022953 -> 0.0229)
    assert math.floor(E_GTP * 1e4) / 1e4 == pytest.approx(0.0796, abs=1e-12)
    assert math.floor(E_PTG * 1e4) / 1e4 == pytest.approx(0.0229, abs=1e-12)


def test_six_properties_of_the_blend(rng):
    for a, b, eps in random_triples(rng):
        tol = 1e-12 * max(1.0, abs(a * eps), abs(b * eps))
        # degree four: a quintic fit has no x^5 term but a nonzero x^4 term
        x = np.linspace(-eps, eps, 9)
        coef = np.polyfit(x / eps, smoothing_s(x, a, b, eps), 5)
        assert abs(coef[0]) <= tol
        assert abs(coef[1]) > 0 or a == b
        assert abs(smoothing_s(0.0, a, b, eps)) <= tol
        assert abs(smoothing_s(eps, a, b, eps) - a * eps) <= tol
        assert abs(smoothing_s(-eps, a, b, eps) + b * eps) <= tol
        assert abs(smoothing_ds(eps, a, b, eps) - a) <= 1e-12 * max(1.0, a, b)
        assert abs(smoothing_ds(-eps, a, b, eps) - b) <= 1e-12 * max(1.0, a, b)


def test_derivative_matches_finite_difference(rng):
    for a, b, eps in random_triples(rng, 20):
        x = rng.uniform(-eps, eps, 7)
        h = 1e-6 * eps
        fd = (smoothing_s(x + h, a, b, eps) - smoothing_s(x - h, a, b, eps)) / (2 * h)
        np.testing.assert_allclose(smoothing_ds(x, a, b, eps), fd, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("point", [-1.0, 1.0])
def test_flow_is_c1_at_band_edges(point):
    eps = EDGE.epsilon
    x = point * eps
    h = 1e-7 * eps
    left = (conversion_flow(x, EDGE) - conversion_flow(x - h, EDGE)) / h
    right = (conversion_flow(x + h, EDGE) - conversion_flow(x, EDGE)) / h
    assert right == pytest.approx(left, rel=1e-6)
    assert conversion_flow(x - 1e-12, EDGE) == pytest.approx(conversion_flow(x + 1e-12, EDGE), abs=1e-12)


def test_linear_branches():
    assert conversion_flow(100.0, EDGE) == pytest.approx(100 * E_GTP, rel=1e-15)
    assert conversion_flow(-100.0, EDGE) == pytest.approx(-100 * E_PTG, rel=1e-15)
    assert math.trunc(conversion_flow(100.0, EDGE) * 100) / 100 == pytest.approx(7.96)
    assert math.trunc(conversion_flow(-100.0, EDGE) * 100) / 100 == pytest.approx(-2.29)
    assert conversion_flow(0.0, EDGE) == 0.0


@given(st.floats(min_value=-1e4, max_value=1e4), st.floats(min_value=-1e4, max_value=1e4))
def test_flow_monotone_for_benchmark_factors(p1, p2):
    lo, hi = sorted((p1, p2))
    assert conversion_flow(lo, EDGE) <= conversion_flow(hi, EDGE)


def test_flow_derivative_output():
    q, dq = conversion_flow(np.array([-5.0, -0.3, 0.0, 0.4, 5.0]), EDGE, derivative=True)
    np.testing.assert_allclose(dq[[0, 4]], [E_PTG, E_GTP])
    assert dq[2] == pytest.approx(0.5 * (E_GTP + E_PTG))
    assert conversion_residual(q[3], 0.4, EDGE) == 0.0


def test_non_monotone_blend_rejected():
    # a large factor ratio makes S' dip below zero inside the band
    bad = ConversionEdge("c", "n", "b", e_gtp=1.0, e_ptg=0.01, epsilon=1.0)
    with pytest.raises(ConversionConfigError):
        check_monotone(bad)
    check_monotone(EDGE)


def test_invalid_edge_parameters():
    with pytest.raises(ValueError):
        ConversionEdge("c", "n", "b", E_GTP, E_PTG, epsilon=0.0)
    with pytest.raises(ValueError):
        ConversionEdge("c", "n", "b", -E_GTP, E_PTG)
