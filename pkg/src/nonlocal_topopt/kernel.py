"""Truncated fractional kernel A(r) = c · r^-(n+2s-2) · (δ² - r²)_+^β."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from mashumaro import DataClassDictMixin
from scipy import integrate, special

from src.nonlocal_topopt.exceptions import InvalidArgumentError, KernelDomainError
from src.nonlocal_topopt.types import FloatArray


def normalization_constant(delta: float, s: float, beta: float, n: int = 2) -> float:
    """Constant c with (1/n) ∫_{B(0,δ)} A(|z|) dz = 1.

    For n = 2 this is 2 / (π · δ^{2-2s+2β} · B(1-s, β+1)).
    """
    if n != 2:
        msg = f"only n = 2 is supported, got {n}"
        raise InvalidArgumentError(msg)
    scale = delta ** (2.0 - 2.0 * s + 2.0 * beta)
    return 2.0 / (math.pi * scale * special.beta(1.0 - s, beta + 1.0))


@dataclass(frozen=True)
class KernelSpec(DataClassDictMixin):
    """Parameters of the truncated fractional kernel with its normalization constant."""

    delta: float
    s: float
    beta: float
    c_nrm: float
    n: int = 2

    @classmethod
    def create(cls, delta: float, s: float, beta: float = 3.0) -> KernelSpec:
        """Validate the parameters and compute c_nrm."""
        if not math.isfinite(delta) or delta <= 0.0:
            msg = f"kernel horizon delta must be positive, got {delta!r}"
            raise InvalidArgumentError(msg)
        if not 0.0 < s < 1.0:
            msg = f"fractional order s must lie in (0, 1), got {s!r}"
            raise InvalidArgumentError(msg)
        if not math.isfinite(beta) or beta < 0.0:
            msg = f"truncation exponent beta must be non-negative, got {beta!r}"
            raise InvalidArgumentError(msg)
        return cls(delta=delta, s=s, beta=beta, c_nrm=normalization_constant(delta, s, beta))

    @property
    def exponent(self) -> float:
        """Power of the singular factor, n + 2s - 2."""
        return self.n + 2.0 * self.s - 2.0

    def radial_factor(self, r: FloatArray | float) -> FloatArray:
        """(δ² - r²)_+^β, exactly zero for r >= δ."""
        r = np.asarray(r, dtype=np.float64)
        inside = r < self.delta
        base = np.where(inside, self.delta**2 - r * r, 1.0)
        return np.where(inside, base**self.beta, 0.0)

    def evaluate(self, r: FloatArray | float) -> FloatArray:
        """A(r) for r > 0."""
        r = np.asarray(r, dtype=np.float64)
        if np.any(r <= 0.0):
            msg = "kernel evaluated at r <= 0"
            raise KernelDomainError(msg)
        return self.c_nrm * r ** (-self.exponent) * self.radial_factor(r)

    def over_r_squared(self, r: FloatArray) -> FloatArray:
        """A(r) / r², the weight of (Δu)² in the bilinear form."""
        return self.c_nrm * r ** (-self.exponent - 2.0) * self.radial_factor(r)

    def lower_bound_constant(self) -> float:
        """γ_0 = c_nrm · (δ² - δ²/4)^β, a lower bound of A on (0, δ/2]."""
        return self.c_nrm * (0.75 * self.delta**2) ** self.beta

    def numeric_normalization(self) -> float:
        """(1/n) ∫_{B(0,δ)} A(|z|) dz computed by adaptive 1D quadrature; equals 1."""
        # ∫_0^δ c r^{1-2s} (δ² - r²)^β dr with the algebraic endpoint weight
        value, _ = integrate.quad(
            lambda r: self.c_nrm * (self.delta**2 - r * r) ** self.beta,
            0.0,
            self.delta,
            weight="alg",
            wvar=(1.0 - 2.0 * self.s, 0.0),
            epsabs=1e-14,
            epsrel=1e-13,
        )
        return 2.0 * math.pi * value / self.n
