"""Integration kernel for linear fourth-order ODEs u'''' + c(t) u = f(t).

Every solver in this package shoots through this module.  Equations are
integrated as first-order systems in the state (u, u', u'', u''') with an
adaptive Dormand-Prince 5(4) scheme and quartic dense output.  States may be
propagated in batches: the state array has shape (4, k) and the coefficient
callable may return a per-column array, which lets a whole lambda-scan run
in lockstep through a single integration pass.

For constant coefficients the transfer matrix over a step has a closed form
(generalized Krylov-Duncan functions) exposed as ``constant_transfer``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

__all__ = [
    "IntegrationError",
    "Trajectory",
    "TransferMatrix",
    "integrate_ivp",
    "fundamental_matrix",
    "particular_solution",
    "constant_transfer",
    "derivative_rescale",
    "bilinear_concomitant",
    "gauss_legendre",
    "integrate_function",
]


class IntegrationError(RuntimeError):
    """Raised when the adaptive integrator cannot proceed.

    Attributes:
        t: location at which the step size underflowed.
    """

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


# Dormand-Prince 5(4) tableau with the Shampine quartic interpolant.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    np.array([], dtype=float),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# b - bhat, including the FSAL stage
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)
_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)


class Trajectory:
    """Dense-output solution of a fourth-order IVP.

    Stores the accepted steps of one integration together with interpolation
    coefficients, so states can be evaluated anywhere in [t0, t1].  The state
    convention is ``state[i] = i-th derivative of u``; for batched solves the
    state carries a trailing column axis of width k.
    """

    def __init__(self, ts, y0s, qs, end_state, squeeze):
        self._ts = ts          # (n+1,) knots, monotone in integration direction
        self._y0s = y0s        # (n, 4, k) state at the start of each step
        self._qs = qs          # (n, 4, k, 4) interpolation coefficients
        self._end = end_state  # (4, k)
        self._squeeze = squeeze
        self._fwd = ts[-1] >= ts[0]

    @property
    def t0(self):
        return self._ts[0]

    @property
    def t1(self):
        return self._ts[-1]

    @property
    def end_state(self):
        """State (4,) or (4, k) at t1."""
        return self._end[:, 0] if self._squeeze else self._end

    def __call__(self, t):
        """Evaluate states at scalar or array ``t``.

        Returns shape (4,), (4, k), (m, 4) or (m, 4, k) depending on the
        shapes of ``t`` and the stored state.
        """
        if self._qs is None:
            raise ValueError("trajectory was integrated without dense output")
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        ts = self._ts if self._fwd else -self._ts
        tq = t_arr if self._fwd else -t_arr
        idx = np.clip(np.searchsorted(ts, tq, side="right") - 1, 0, len(ts) - 2)
        out = np.empty((len(t_arr), 4) + self._y0s.shape[2:])
        for j, (i, tj) in enumerate(zip(idx, t_arr)):
            h = self._ts[i + 1] - self._ts[i]
            theta = (tj - self._ts[i]) / h
            powers = theta * np.array([1.0, theta, theta**2, theta**3])
            out[j] = self._y0s[i] + h * (self._qs[i] @ powers)
        if self._squeeze:
            out = out[..., 0]
        if np.isscalar(t) or np.ndim(t) == 0:
            return out[0]
        return out

    def value(self, t, order=0):
        """Derivative of the given order (0..3) at ``t``."""
        return self.__call__(t)[..., order, :] if not self._squeeze else self.__call__(t)[..., order]

    def column(self, j) -> "Trajectory":
        """Single-column view of a batched trajectory."""
        if self._squeeze:
            raise ValueError("trajectory is not batched")
        qs = None if self._qs is None else self._qs[:, :, j : j + 1, :]
        y0s = None if self._y0s is None else self._y0s[:, :, j : j + 1]
        return Trajectory(self._ts, y0s, qs, self._end[:, j : j + 1], True)

    def combination(self, coeffs) -> "Trajectory":
        """Linear combination of the columns as a scalar trajectory."""
        c = np.asarray(coeffs, dtype=float)
        qs = None if self._qs is None else np.einsum("nikj,k->nij", self._qs, c)[:, :, None, :]
        y0s = None if self._y0s is None else (self._y0s @ c)[:, :, None]
        return Trajectory(self._ts, y0s, qs, (self._end @ c)[:, None], True)


def _as_callable(g) -> Callable:
    if g is None:
        return lambda t: 0.0
    if callable(g):
        return g
    val = np.asarray(g, dtype=float)
    if val.ndim == 0:
        val = float(val)
    return lambda t: val


def integrate_ivp(coeff, rhs, t0, t1, y0, rtol=1e-10, atol=1e-12, dense=False,
                  max_steps=1_000_000):
    """Solve u'''' + coeff(t) u = rhs(t) from t0 to t1 (either direction).

    Args:
        coeff, rhs: callables of t returning a scalar or a (k,) array aligned
            with the state columns; scalars and None (meaning 0) also accepted.
        y0: initial state, shape (4,) or (4, k).
        dense: keep per-step interpolation data for later evaluation.

    Returns:
        Trajectory.  ``end_state`` is always available; interior evaluation
        requires ``dense=True``.

    Raises:
        IntegrationError: on step-size underflow, with the failure location.
    """
    if t0 == t1:
        raise ValueError("integration interval is empty")
    cf = _as_callable(coeff)
    ff = _as_callable(rhs)

    y0 = np.asarray(y0, dtype=float)
    squeeze = y0.ndim == 1
    y = y0.reshape(4, -1).copy()
    if not np.all(np.isfinite(y)):
        raise ValueError("initial state contains non-finite entries")
    k = y.shape[1]

    def f(t, state):
        out = np.empty_like(state)
        out[0] = state[1]
        out[1] = state[2]
        out[2] = state[3]
        out[3] = ff(t) - cf(t) * state[0]
        return out

    span = t1 - t0
    direction = 1.0 if span > 0 else -1.0
    # initial step: bounded by the local oscillation rate of the coefficient
    c0 = np.max(np.abs(np.asarray(cf(t0), dtype=float)))
    rate = max(1.0, c0) ** 0.25
    h = direction * min(abs(span) / 10.0, 0.5 / rate)

    t = t0
    K = np.empty((7, 4, k))
    K[0] = f(t0, y)

    ts = [t0]
    y0s, qs = [], []

    tiny = 16 * np.finfo(float).eps
    nsteps = 0
    while (t - t1) * direction < 0:
        nsteps += 1
        if nsteps > max_steps:
            raise IntegrationError(f"step budget exhausted at t={t!r}", t=t)
        if abs(h) < tiny * max(abs(t), abs(span)):
            raise IntegrationError(f"step size underflow at t={t!r}", t=t)
        if (t + h - t1) * direction > 0:
            h = t1 - t

        for s in range(1, 6):
            ys = y + h * np.tensordot(_A[s], K[:s], axes=(0, 0))
            K[s] = f(t + _C[s] * h, ys)
        y_new = y + h * np.tensordot(_B, K[:6], axes=(0, 0))
        K[6] = f(t + h, y_new)

        err_vec = h * np.tensordot(_E, K, axes=(0, 0))
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        ratios = err_vec / scale
        # worst column governs the shared step
        err = np.sqrt(np.mean(ratios**2, axis=0)).max() if k > 1 else \
            np.sqrt(np.mean(ratios**2))

        if err <= 1.0:
            if dense:
                y0s.append(y.copy())
                qs.append(np.einsum("sik,sj->ikj", K, _P) * 1.0)
            t = t + h
            ts.append(t)
            y = y_new
            K[0] = K[6]
        factor = 0.9 * (max(err, 1e-16)) ** -0.2
        h = h * min(5.0, max(0.2, factor))

    ts = np.asarray(ts)
    if dense:
        return Trajectory(ts, np.asarray(y0s), np.asarray(qs), y, squeeze)
    return Trajectory(ts, None, None, y, squeeze)


@dataclass(frozen=True)
class TransferMatrix:
    """Fundamental solution matrix of u'''' + c(t) u = 0 over (t0, t1).

    Column j holds the end state of the solution with j-th unit initial
    state, so ``matrix @ state(t0) = state(t1)``.
    """

    matrix: np.ndarray
    t0: float
    t1: float
    descriptor: str = ""

    def compose(self, earlier: "TransferMatrix") -> "TransferMatrix":
        """Transfer over (earlier.t0, self.t1); ``earlier`` must end at self.t0."""
        if not math.isclose(earlier.t1, self.t0, rel_tol=0.0, abs_tol=1e-12):
            raise ValueError("intervals do not chain")
        return TransferMatrix(self.matrix @ earlier.matrix, earlier.t0, self.t1,
                              self.descriptor)

    def __matmul__(self, state):
        return self.matrix @ state


def fundamental_matrix(coeff, t0, t1, rtol=1e-10, atol=1e-12,
                       descriptor="") -> TransferMatrix:
    """Propagate the four unit initial states through u'''' + c(t) u = 0."""
    sol = integrate_ivp(coeff, None, t0, t1, np.eye(4), rtol=rtol, atol=atol)
    return TransferMatrix(sol.end_state, t0, t1, descriptor)


def particular_solution(coeff, rhs, t0, t1, y0, rtol=1e-10, atol=1e-12) -> Trajectory:
    """Dense solution of the forced equation u'''' + c(t) u = f(t)."""
    return integrate_ivp(coeff, rhs, t0, t1, y0, rtol=rtol, atol=atol, dense=True)


def _phi(z):
    """Entire functions phi_j(z) = sum_k z^k / (4k+j)!, j = 0..3.

    These build the constant-coefficient transfer matrix: with z = -c dt^4
    the matrix is phi0 I + phi1 dt A + phi2 dt^2 A^2 + phi3 dt^3 A^3 where A
    is the companion matrix of u'''' = -c u.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    phi = np.empty((4,) + z.shape)
    w = np.abs(z) ** 0.25
    small = w < 0.2
    zs = np.where(small, z, 0.0)
    fact = [math.factorial(n) for n in range(16)]
    for j in range(4):
        phi[j] = sum(zs**k / fact[4 * k + j] for k in range(4))
    big = ~small
    if np.any(big):
        wb = w[big]
        pos = z[big] >= 0
        # z >= 0: hyperbolic/trig pair with argument w
        ch, co = np.cosh(wb), np.cos(wb)
        sh, si = np.sinh(wb), np.sin(wb)
        p0 = np.where(pos, (ch + co) / 2, 0.0)
        p1 = np.where(pos, (sh + si) / (2 * wb), 0.0)
        p2 = np.where(pos, (ch - co) / (2 * wb**2), 0.0)
        p3 = np.where(pos, (sh - si) / (2 * wb**3), 0.0)
        # z < 0: exponentially damped/growing oscillations at rate w/sqrt(2)
        s = wb / np.sqrt(2.0)
        chs, cos_ = np.cosh(s), np.cos(s)
        shs, sin_ = np.sinh(s), np.sin(s)
        q0 = chs * cos_
        q1 = (chs * sin_ + shs * cos_) / (2 * s)
        q2 = shs * sin_ / (2 * s**2)
        q3 = (chs * sin_ - shs * cos_) / (4 * s**3)
        phi[0][big] = np.where(pos, p0, q0)
        phi[1][big] = np.where(pos, p1, q1)
        phi[2][big] = np.where(pos, p2, q2)
        phi[3][big] = np.where(pos, p3, q3)
    return phi


def constant_transfer(c, dt):
    """Exact transfer matrix of u'''' + c u = 0 over a step of length dt.

    ``c`` may be an array; the result then has shape c.shape + (4, 4).
    """
    c_in = np.asarray(c, dtype=float)
    c = np.atleast_1d(c_in)
    z = -c * dt**4
    p0, p1, p2, p3 = _phi(z)
    d = np.array(dt, dtype=float)
    m = np.empty(c.shape + (4, 4))
    m[..., 0, 0] = p0
    m[..., 0, 1] = p1 * d
    m[..., 0, 2] = p2 * d**2
    m[..., 0, 3] = p3 * d**3
    m[..., 1, 0] = -c * p3 * d**3
    m[..., 1, 1] = p0
    m[..., 1, 2] = p1 * d
    m[..., 1, 3] = p2 * d**2
    m[..., 2, 0] = -c * p2 * d**2
    m[..., 2, 1] = -c * p3 * d**3
    m[..., 2, 2] = p0
    m[..., 2, 3] = p1 * d
    m[..., 3, 0] = -c * p1 * d
    m[..., 3, 1] = -c * p2 * d**2
    m[..., 3, 2] = -c * p3 * d**3
    m[..., 3, 3] = p0
    if c_in.ndim == 0:
        return m[0]
    return m


def derivative_rescale(eps):
    """diag(1, 1/eps, 1/eps^2, 1/eps^3).

    Maps inner states sampled in the stretched variable xi = x/eps to
    physical x-derivative states: if y(x) = u(x/eps) then
    state_x(y) = derivative_rescale(eps) @ state_xi(u).
    """
    return np.diag([1.0, 1.0 / eps, 1.0 / eps**2, 1.0 / eps**3])


def bilinear_concomitant(u_state, w_state):
    """Lagrange bilinear form u''' w - u'' w' + u' w'' - u w''' of two states.

    Constant along t for any two solutions of the same homogeneous equation.
    Accepts states with the derivative axis first.
    """
    u, w = np.asarray(u_state), np.asarray(w_state)
    return u[3] * w[0] - u[2] * w[1] + u[1] * w[2] - u[0] * w[3]


@lru_cache(maxsize=32)
def _leggauss(n):
    return np.polynomial.legendre.leggauss(n)


def gauss_legendre(a, b, n=128):
    """Gauss-Legendre nodes and weights on (a, b)."""
    x, w = _leggauss(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def integrate_function(f, a, b, n=128):
    """Fixed-order Gauss-Legendre integral of a vectorized callable."""
    x, w = gauss_legendre(a, b, n)
    return float(np.dot(w, f(x)))
