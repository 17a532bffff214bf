"""Compactified multiple shooting for the fourth-order eigenvalue solvers.

Families of solutions (the columns spanning a boundary-condition subspace)
are propagated region by region with QR re-orthonormalization at interior
checkpoints, which keeps the columns linearly independent at large |lambda|
where naive propagation underflows the shooting determinant.  All positive
det(R) factors divide out of the determinant, so its sign pattern, and hence
the bracketed eigenvalues, are unchanged.

Everything is batched over lambda: a scan grid is propagated in one pass,
with constant-coefficient regions using the exact transfer matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import odecore

#: boundary-condition kind -> columns of the initial solution family at an
#: endpoint where the two stated trace components vanish
BC_BASIS = {
    "clamped": (2, 3),  # y = y' = 0
    "pinned": (1, 3),   # y = y'' = 0
    "free": (0, 1),     # y'' = y''' = 0
}

#: boundary-condition kind -> state components tested at the far endpoint
BC_ROWS = {
    "clamped": (0, 1),
    "pinned": (0, 2),
    "free": (2, 3),
}

RATE_CAP = 12.0  # max (|coeff|^(1/4) * length) per subsegment before a QR


def bc_initial_family(kind) -> np.ndarray:
    cols = BC_BASIS[kind]
    Y = np.zeros((4, 2))
    Y[cols[0], 0] = 1.0
    Y[cols[1], 1] = 1.0
    return Y


def bc_rows(kind) -> np.ndarray:
    rows = BC_ROWS[kind]
    F = np.zeros((2, 4))
    F[0, rows[0]] = 1.0
    F[1, rows[1]] = 1.0
    return F


def _qr_fix(Y):
    """Batched reduced QR with positive diagonal R; returns (Q, R)."""
    Q, R = np.linalg.qr(Y)
    s = np.sign(np.einsum("...ii->...i", R))
    s = np.where(s == 0.0, 1.0, s)
    Q = Q * s[..., None, :]
    R = R * s[..., :, None]
    return Q, R


@dataclass
class SegmentRecord:
    """Dense data for one propagation segment of an eigenfunction rebuild."""

    t0: float
    t1: float
    trajectory: odecore.Trajectory  # batched columns in segment coordinates
    r_factor: np.ndarray            # (m, m) from the QR at the segment end
    inner_eps: float | None = None  # set when the segment lives in xi = x/eps


class FamilyPropagator:
    """Propagates a batched family Y (B, 4, m) through regions with QR stops."""

    def __init__(self, Y0, record=False, rtol=1e-10, atol=1e-12, track_r=False):
        Y = np.asarray(Y0, dtype=float)
        if Y.ndim == 2:
            Y = Y[None]
        self.Y = Y.copy()
        self.B, _, self.m = self.Y.shape
        self.record = record
        self.segments: list[SegmentRecord] = []
        self.rtol = rtol
        self.atol = atol
        self.r_chain = np.broadcast_to(np.eye(self.m), (self.B, self.m, self.m)).copy() \
            if track_r else None

    def orthonormalize(self):
        Q, R = _qr_fix(self.Y)
        self.Y = Q
        if self.r_chain is not None:
            self.r_chain = R @ self.r_chain
        return R

    def checkpoint_merge(self):
        """QR after an out-of-band linear map; folds R into the last record."""
        R = self.orthonormalize()
        if self.record and self.segments:
            self.segments[-1].r_factor = R[0] @ self.segments[-1].r_factor

    def _store(self, t0, t1, traj, R, inner_eps=None):
        if self.record:
            self.segments.append(SegmentRecord(t0, t1, traj, R[0], inner_eps))

    def run_constant(self, cvals, t0, t1):
        """Constant-coefficient region: exact transfers, split by growth rate."""
        cvals = np.broadcast_to(np.asarray(cvals, float), (self.B,))
        length = abs(t1 - t0)
        rate = float(np.max(np.abs(cvals))) ** 0.25
        nseg = max(1, int(np.ceil(rate * length / RATE_CAP)))
        ts = np.linspace(t0, t1, nseg + 1)
        for k in range(nseg):
            if self.record:
                # exact transfer has no dense output; rebuilds use RK instead
                traj = odecore.integrate_ivp(
                    lambda t: cvals[0], None, ts[k], ts[k + 1],
                    self.Y[0], rtol=self.rtol, atol=self.atol, dense=True)
                self.Y = traj.end_state[None]
                R = self.orthonormalize()
                self._store(ts[k], ts[k + 1], traj, R)
            else:
                T = odecore.constant_transfer(cvals, ts[k + 1] - ts[k])
                self.Y = T @ self.Y
                self.orthonormalize()

    def run_rk(self, coeff, t0, t1, rate_bound, rhs=None, inner_eps=None):
        """Variable-coefficient region via batched adaptive RK.

        ``coeff`` maps t to per-batch values (B,); ``rate_bound`` bounds
        |coeff|^(1/4) on the region and sets the checkpoint spacing.
        """
        length = abs(t1 - t0)
        nseg = max(1, int(np.ceil(rate_bound * length / RATE_CAP)))
        ts = np.linspace(t0, t1, nseg + 1)
        for k in range(nseg):
            traj = odecore.integrate_ivp(
                self._column_coeff(coeff), rhs, ts[k], ts[k + 1],
                self._flat(), rtol=self.rtol, atol=self.atol, dense=self.record)
            self._unflat(traj.end_state)
            R = self.orthonormalize()
            self._store(ts[k], ts[k + 1], traj, R, inner_eps)

    def rescale_rows(self, diag4):
        self.Y = np.asarray(diag4)[None, :, None] * self.Y

    def _column_coeff(self, coeff):
        if self.B == 1 and self.m == 1:
            return coeff
        m = self.m

        def col_coeff(t):
            return np.repeat(np.atleast_1d(coeff(t)), m)

        return col_coeff

    def _flat(self):
        return self.Y.transpose(1, 0, 2).reshape(4, self.B * self.m)

    def _unflat(self, flat):
        self.Y = flat.reshape(4, self.B, self.m).transpose(1, 0, 2)


def forward_coefficients(segments, initial_coeff):
    """Per-segment coefficients from the coefficient on the initial columns."""
    coeffs = [np.asarray(initial_coeff, dtype=float)]
    for seg in segments[:-1]:
        coeffs.append(seg.r_factor @ coeffs[-1])
    return coeffs


def rebuild_coefficients(segments, final_coeff):
    """Per-segment combination coefficients from the final null vector.

    Walking the QR chain backwards: if the eigenfunction is Q_final @ c at
    the end, its coefficients on segment k's columns are R_{k+1}^-1 ... c.
    """
    coeffs = [np.asarray(final_coeff, dtype=float)]
    for seg in reversed(segments):
        coeffs.append(np.linalg.solve(seg.r_factor, coeffs[-1]))
    coeffs.reverse()
    # coeffs[k] applies to segment k's columns; the last entry is the
    # final-basis coefficient and belongs to no segment
    return coeffs[:-1]


@dataclass
class Piece:
    """One x-interval of a piecewise eigenfunction, with state evaluation."""

    lo: float
    hi: float
    trajectory: odecore.Trajectory
    inner_eps: float | None = None
    scale: float = 1.0

    def states(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.inner_eps is None:
            out = self.trajectory(x) * self.scale
        else:
            eps = self.inner_eps
            st = self.trajectory(x / eps) * self.scale
            out = st * (1.0 / eps) ** np.arange(4)
        return out


class PiecewiseEigenfunction:
    """Eigenfunction of a piecewise shooting problem on (a, b).

    With ``zero_outside`` the function is extended by zero off its pieces
    (direct-sum eigenfunctions supported on a half-interval).
    """

    def __init__(self, pieces, zero_outside=False):
        self.pieces = sorted(pieces, key=lambda p: p.lo)
        self.zero_outside = zero_outside

    def states(self, x):
        """States (m, 4) at the query points, using the covering piece."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros((len(x), 4))
        filled = np.zeros(len(x), dtype=bool)
        for p in self.pieces:
            sel = (~filled) & (x >= p.lo - 1e-14) & (x <= p.hi + 1e-14)
            if np.any(sel):
                out[sel] = p.states(x[sel])
                filled[sel] = True
        if not np.all(filled) and not self.zero_outside:
            raise ValueError("query point outside the eigenfunction domain")
        return out

    def __call__(self, x, order=0):
        sts = self.states(x)
        vals = sts[:, order]
        return vals if np.ndim(x) else float(vals[0])

    def l2_norm(self, quad_n=64):
        total = 0.0
        for p in self.pieces:
            xs, ws = odecore.gauss_legendre(p.lo, p.hi, quad_n)
            total += float(np.dot(ws, p.states(xs)[:, 0] ** 2))
        return np.sqrt(total)

    def rescale(self, factor):
        for p in self.pieces:
            p.scale *= factor

    def inner_product(self, other, quad_n=96):
        """L2 inner product against another piecewise/callable function."""
        cuts = sorted({p.lo for p in self.pieces} | {p.hi for p in self.pieces})
        if isinstance(other, PiecewiseEigenfunction):
            cuts = sorted(set(cuts) | {p.lo for p in other.pieces}
                          | {p.hi for p in other.pieces})
        total = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            if hi - lo < 1e-15:
                continue
            xs, ws = odecore.gauss_legendre(lo, hi, quad_n)
            fv = self.states(xs)[:, 0]
            gv = other.states(xs)[:, 0] if isinstance(other, PiecewiseEigenfunction) \
                else other(xs)
            total += float(np.dot(ws, fv * gv))
        return total
