"""Regularization profiles on (-1, 1): the bump-poly family and its moments.

A shape is a polynomial times the standard bump b(xi) = exp(-1/(1-xi^2)),
which is smooth, vanishes with all derivatives at xi = +-1 and is supported
exactly on [-1, 1].  The family is closed under differentiation up to the
orders needed here, so derivative shapes (delta'-like profiles etc.) come
with analytic evaluators as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.integrate import quad

__all__ = [
    "ShapeError",
    "QuadratureAccuracyError",
    "ShapeFunction",
    "MomentVector",
    "make_bump_shape",
    "moment",
    "is_delta_like",
    "scaled_potential",
]


class ShapeError(ValueError):
    """Invalid shape specification."""


class QuadratureAccuracyError(RuntimeError):
    """Adaptive quadrature could not reach the requested accuracy."""

    def __init__(self, message, achieved):
        super().__init__(message)
        self.achieved = achieved


def _bump_jet(xi, orders):
    """Values of b, b', ..., b^(orders) of the standard bump at xi.

    Returns an array of shape (orders+1,) + xi.shape, zero outside (-1, 1).
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    out = np.zeros((orders + 1,) + xi.shape)
    inside = np.abs(xi) < 1.0
    x = xi[inside]
    w = 1.0 - x * x
    b = np.exp(-1.0 / w)
    s1 = -2.0 * x / w**2
    s2 = -2.0 / w**2 - 8.0 * x**2 / w**3
    s3 = -24.0 * x / w**3 - 48.0 * x**3 / w**4
    jets = [b]
    if orders >= 1:
        jets.append(s1 * b)
    if orders >= 2:
        jets.append((s2 + s1**2) * b)
    if orders >= 3:
        jets.append((s3 + 3 * s1 * s2 + s1**3) * b)
    for j, vals in enumerate(jets):
        out[j][inside] = vals
    return out


@dataclass(frozen=True)
class ShapeFunction:
    """Smooth compactly supported profile p(xi) * b(xi) on [-1, 1].

    ``shift`` > 0 denotes a derivative of a family member; derivative
    evaluators remain available up to order 2 for shift <= 1.
    """

    family: str
    coefficients: tuple = field(default_factory=tuple)
    shift: int = 0

    MAX_ORDER = 3

    def _poly_coeffs(self):
        cache = getattr(self, "_pc_cache", None)
        if cache is None:
            c = np.asarray(self.coefficients, dtype=float)
            cache = [c]
            for _ in range(self.MAX_ORDER):
                c = np.polynomial.polynomial.polyder(c)
                cache.append(c if len(c) else np.zeros(1))
            object.__setattr__(self, "_pc_cache", cache)
        return cache

    def __call__(self, xi, order=0):
        total = order + self.shift
        if order < 0 or total > self.MAX_ORDER:
            raise ValueError(f"derivative order {order} not available")
        ders = self._poly_coeffs()
        xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
        jets = _bump_jet(xi_arr, total)
        result = np.zeros_like(jets[0])
        for j in range(total + 1):
            c = ders[total - j]
            pv = np.full_like(xi_arr, c[-1])
            for ck in c[-2::-1]:
                pv = pv * xi_arr + ck
            result += comb(total, j) * pv * jets[j]
        if np.ndim(xi) == 0:
            return float(result[0])
        return result

    def derivative(self) -> "ShapeFunction":
        """The derivative profile, still supported on [-1, 1]."""
        if self.shift + 1 > self.MAX_ORDER - 2:
            raise ValueError("derivative order budget exhausted")
        return ShapeFunction(self.family + "'", self.coefficients, self.shift + 1)

    def scaled(self, factor) -> "ShapeFunction":
        coeffs = tuple(factor * c for c in self.coefficients)
        return ShapeFunction(self.family, coeffs, self.shift)


def make_bump_shape(coefficients) -> ShapeFunction:
    """Shape sum_k c_k xi^k * exp(-1/(1-xi^2)) from polynomial coefficients."""
    coeffs = tuple(float(c) for c in np.atleast_1d(coefficients))
    if len(coeffs) == 0:
        raise ShapeError("coefficient list is empty")
    if not all(np.isfinite(coeffs)):
        raise ShapeError("coefficients must be finite")
    if all(c == 0.0 for c in coeffs):
        raise ShapeError("zero polynomial gives the zero shape; support would be empty")
    return ShapeFunction("bump-poly", coeffs)


@dataclass(frozen=True)
class MomentVector:
    """Scaled moments <f>_0 .. <f>_K with <f>_k = (1/k!) int xi^k f(xi) dxi."""

    values: tuple
    K: int

    def __getitem__(self, k):
        return self.values[k]


def moment(f, k, abs_tol=1e-10):
    """<f>_k by adaptive quadrature over the support [-1, 1].

    Raises QuadratureAccuracyError when the error estimate exceeds abs_tol.
    """
    if k < 0:
        raise ValueError("moment order must be nonnegative")
    kfact = math.factorial(k)

    def integrand(x):
        return x**k * f(x)

    val, err = quad(integrand, -1.0, 1.0, epsabs=abs_tol * 1e-2, epsrel=1e-12,
                    limit=200)
    if err > abs_tol:
        raise QuadratureAccuracyError(
            f"moment quadrature error estimate {err:.3e} exceeds {abs_tol:.1e}",
            achieved=err,
        )
    return val / kfact


def moment_vector(f, K) -> MomentVector:
    return MomentVector(tuple(moment(f, k) for k in range(K + 1)), K)


def is_delta_like(f, n, tol=1e-8):
    """Test the delta^(n) moment conditions: <f>_j = 0 (j < n), <f>_n = (-1)^n.

    Returns (verdict, MomentVector); the moments are reported either way.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    mv = moment_vector(f, n)
    ok = all(abs(mv[j]) <= tol for j in range(n)) and abs(mv[n] - (-1.0) ** n) <= tol
    return ok, mv


def scaled_potential(p, eps, x):
    """The squeezed potential of problem ``p`` at x, zero outside [-eps, eps].

    p supplies couplings (alpha, beta, gamma1, gamma2) and shapes
    (psi, phi, upsilon1, upsilon2); a shape set to None contributes nothing.
    """
    lo = min(abs(p.a), p.b)
    if not 0.0 < eps < lo:
        raise ValueError(f"eps={eps} outside (0, {lo})")
    x = np.asarray(x, dtype=float)
    xi = x / eps
    out = np.zeros_like(xi)
    for coupling, shape, power in (
        (p.alpha, p.psi, 4),
        (p.beta, p.phi, 3),
        (p.gamma1, p.upsilon1, 2),
        (p.gamma2, p.upsilon2, 1),
    ):
        if coupling != 0.0 and shape is not None:
            out += coupling * eps ** (-power) * shape(xi)
    return out if out.shape else float(out)
