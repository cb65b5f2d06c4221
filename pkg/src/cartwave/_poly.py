"""Scaled nonnegative polynomials for leaf-count dynamic programs.

Coefficients are stored as ``mantissa * exp(scale)`` with a shared scale, so
products of astronomically large terms (tree counts, Gaussian likelihood
factors) stay finite.  Coefficients more than ~700 nats below the largest one
underflow to zero, far below any tolerance used in this package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScaledPoly:
    """sum_d coeffs[d] * exp(scale) * y^(mindeg + d), coeffs >= 0."""

    mindeg: int
    scale: float
    coeffs: np.ndarray

    @classmethod
    def monomial(cls, deg: int, log_coeff: float = 0.0) -> "ScaledPoly":
        return cls(deg, log_coeff, np.ones(1))

    @classmethod
    def zero(cls) -> "ScaledPoly":
        return cls(0, -math.inf, np.zeros(1))

    def is_zero(self) -> bool:
        return not np.any(self.coeffs > 0.0)

    def _normalized(self) -> "ScaledPoly":
        m = float(np.max(self.coeffs))
        if m <= 0.0:
            return ScaledPoly.zero()
        return ScaledPoly(self.mindeg, self.scale + math.log(m), self.coeffs / m)

    def mul(self, other: "ScaledPoly") -> "ScaledPoly":
        if self.is_zero() or other.is_zero():
            return ScaledPoly.zero()
        out = np.convolve(self.coeffs, other.coeffs)
        return ScaledPoly(
            self.mindeg + other.mindeg, self.scale + other.scale, out
        )._normalized()

    def scaled(self, log_factor: float) -> "ScaledPoly":
        return ScaledPoly(self.mindeg, self.scale + log_factor, self.coeffs)

    def add(self, other: "ScaledPoly") -> "ScaledPoly":
        if self.is_zero():
            return other
        if other.is_zero():
            return self
        lo = min(self.mindeg, other.mindeg)
        hi = max(self.mindeg + len(self.coeffs), other.mindeg + len(other.coeffs))
        s = max(self.scale, other.scale)
        out = np.zeros(hi - lo)
        out[self.mindeg - lo : self.mindeg - lo + len(self.coeffs)] += self.coeffs * math.exp(
            self.scale - s
        )
        out[other.mindeg - lo : other.mindeg - lo + len(other.coeffs)] += other.coeffs * math.exp(
            other.scale - s
        )
        return ScaledPoly(lo, s, out)._normalized()

    def log_coeff(self, deg: int) -> float:
        """log of the y^deg coefficient, -inf if absent."""
        i = deg - self.mindeg
        if i < 0 or i >= len(self.coeffs) or self.coeffs[i] <= 0.0:
            return -math.inf
        return self.scale + math.log(self.coeffs[i])

    def log_coeff_array(self) -> tuple[int, np.ndarray]:
        """(mindeg, log-coefficients) with -inf for zero entries."""
        with np.errstate(divide="ignore"):
            return self.mindeg, self.scale + np.log(self.coeffs)

    def log_dot(self, log_weights: np.ndarray) -> float:
        """log sum_d coeffs[d] e^scale w[mindeg+d], given log-weights indexed by degree."""
        mindeg, logc = self.log_coeff_array()
        idx = np.arange(mindeg, mindeg + len(logc))
        valid = idx < len(log_weights)
        terms = logc[valid] + log_weights[idx[valid]]
        if terms.size == 0:
            return -math.inf
        m = float(np.max(terms))
        if not math.isfinite(m):
            return -math.inf
        return m + math.log(float(np.sum(np.exp(terms - m))))
