from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from src.nonlocal_topopt.exceptions import InvalidArgumentError, KernelDomainError
from src.nonlocal_topopt.kernel import KernelSpec, normalization_constant


@pytest.mark.parametrize("delta", [0.05, 0.1, 0.2])
@pytest.mark.parametrize("s", [1.0 / 3.0, 2.0 / 3.0])
def test_kernel_is_normalized(delta, s):
    spec = KernelSpec.create(delta, s)
    assert spec.numeric_normalization() == pytest.approx(1.0, abs=1e-8)


def test_normalization_against_two_dimensional_quadrature():
    spec = KernelSpec.create(0.1, 0.25, beta=2.0)
    # (1/2) ∫_B A(|z|) dz in polar coordinates without the algebraic weight
    radial, _ = integrate.quad(
        lambda r: float(spec.evaluate(r)) * r, 0.0, spec.delta, epsabs=1e-13, limit=200
    )
    assert 0.5 * 2.0 * math.pi * radial == pytest.approx(1.0, rel=1e-7)


def test_normalization_constant_closed_form():
    # s = 1/2, beta = 1: ∫_0^δ (δ² - r²) dr = 2δ³/3
    delta = 0.3
    expected = 1.0 / (math.pi * 2.0 * delta**3 / 3.0)
    assert normalization_constant(delta, 0.5, 1.0) == pytest.approx(expected, rel=1e-12)


def test_kernel_vanishes_outside_the_horizon():
    spec = KernelSpec.create(0.1, 1.0 / 3.0)
    assert np.all(spec.evaluate(np.array([0.1, 0.15, 1.0])) == 0.0)
    assert np.all(spec.evaluate(np.array([1e-6, 0.05, 0.099])) > 0.0)


@pytest.mark.parametrize("r", [0.0, -0.1])
def test_kernel_rejects_non_positive_radius(r):
    spec = KernelSpec.create(0.1, 1.0 / 3.0)
    with pytest.raises(KernelDomainError):
        spec.evaluate(r)


@pytest.mark.parametrize(
    ("delta", "s", "beta"),
    [(0.0, 0.5, 3.0), (-0.1, 0.5, 3.0), (0.1, 0.0, 3.0), (0.1, 1.0, 3.0), (0.1, 0.5, -1.0)],
)
def test_invalid_kernel_parameters(delta, s, beta):
    with pytest.raises(InvalidArgumentError):
        KernelSpec.create(delta, s, beta)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=1e-6, max_value=0.5))
def test_lower_bound_holds_on_half_horizon(fraction):
    spec = KernelSpec.create(0.2, 0.4)
    r = fraction * spec.delta
    assert float(spec.evaluate(r)) >= spec.lower_bound_constant()


def test_over_r_squared_matches_evaluate():
    spec = KernelSpec.create(0.2, 2.0 / 3.0)
    r = np.linspace(0.01, 0.19, 7)
    assert np.allclose(spec.over_r_squared(r), spec.evaluate(r) / r**2, rtol=1e-13)
