"""Eigenvalue problem for the squeezed-potential beam operator.

The operator d^4/dx^4 + U(x) + Psi_eps(x) on (a, b) is solved by composite
shooting through the three regions (a, -eps), (-eps, eps), (eps, b).  The
inner region is never integrated in x: the stretched variable xi = x/eps
keeps the coefficient O(alpha) there, and states are conjugated by
diag(1, 1/eps, 1/eps^2, 1/eps^3) at the interfaces, so the determinant is
exact up to integrator tolerance for every eps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _rootfind, _shooting, odecore

__all__ = [
    "Problem",
    "Eigenpair",
    "MultiplicityWarning",
    "perturbed_determinant",
    "perturbed_spectrum",
    "divergent_branch_probe",
    "eigenpair_ode_residual",
]


class MultiplicityWarning(UserWarning):
    """Shooting null space numerically two-dimensional at a root."""


@dataclass(frozen=True)
class Problem:
    """Interval, background potential, couplings, shapes, and BC kinds.

    ``u_coeffs`` are polynomial coefficients of U(x), lowest order first.
    Shapes set to None act as the zero profile.
    """

    a: float
    b: float
    u_coeffs: tuple = (0.0,)
    alpha: float = 0.0
    beta: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    psi: object = None
    phi: object = None
    upsilon1: object = None
    upsilon2: object = None
    bc_left: str = "clamped"
    bc_right: str = "clamped"

    def __post_init__(self):
        if not self.a < 0.0 < self.b:
            raise ValueError("interval must satisfy a < 0 < b")
        for kind in (self.bc_left, self.bc_right):
            if kind not in _shooting.BC_BASIS:
                raise ValueError(f"unknown boundary condition kind {kind!r}")
        object.__setattr__(self, "u_coeffs", tuple(float(c) for c in self.u_coeffs))

    def U(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, self.u_coeffs[-1])
        for c in self.u_coeffs[-2::-1]:
            out = out * x + c
        return out

    @property
    def u_constant(self):
        return all(c == 0.0 for c in self.u_coeffs[1:])

    def u_bound(self):
        xs = np.linspace(self.a, self.b, 64)
        return float(np.max(np.abs(self.U(xs))))

    def shape_pairs(self):
        return ((self.alpha, self.psi), (self.beta, self.phi),
                (self.gamma1, self.upsilon1), (self.gamma2, self.upsilon2))

    def inner_coefficient(self, eps, lams):
        """Coefficient of the stretched inner equation, batched over lambda.

        u'''' + [alpha Psi + eps beta Phi + eps^2 g1 Y1 + eps^3 g2 Y2
                 + eps^4 (U(eps xi) - lambda)] u = 0 on (-1, 1).
        """
        lams = np.atleast_1d(np.asarray(lams, dtype=float))
        weights = [self.alpha, eps * self.beta, eps**2 * self.gamma1,
                   eps**3 * self.gamma2]
        shapes = [self.psi, self.phi, self.upsilon1, self.upsilon2]

        def coeff(xi):
            base = eps**4 * (self.U(eps * xi) - lams)
            for w, s in zip(weights, shapes):
                if w != 0.0 and s is not None:
                    base = base + w * s(xi)
            return base

        return coeff

    def inner_rate_bound(self, eps, lam_abs_max):
        total = eps**4 * (self.u_bound() + lam_abs_max)
        grid = np.linspace(-1, 1, 257)
        for w, s in zip(
            [self.alpha, eps * self.beta, eps**2 * self.gamma1, eps**3 * self.gamma2],
            [self.psi, self.phi, self.upsilon1, self.upsilon2],
        ):
            if w != 0.0 and s is not None:
                total += abs(w) * float(np.max(np.abs(s(grid))))
        return max(total, 1.0) ** 0.25


@dataclass
class Eigenpair:
    """Eigenvalue with its piecewise eigenfunction and interface traces."""

    lam: float
    y: _shooting.PiecewiseEigenfunction
    l2norm: float
    trace_left: np.ndarray   # state at -eps (outer side), x-derivatives
    trace_right: np.ndarray  # state at +eps (outer side)
    matching_defect: float = 0.0
    null_gap: float = 0.0


def _check_eps(p: Problem, eps):
    if not 0.0 < eps < min(abs(p.a), p.b):
        raise ValueError(f"eps={eps} outside (0, {min(abs(p.a), p.b)})")


def _outer_region(prop, p, lams, t0, t1, lam_abs_max):
    if p.u_constant:
        prop.run_constant(p.u_coeffs[0] - lams, t0, t1)
    else:
        rate = (p.u_bound() + lam_abs_max) ** 0.25
        prop.run_rk(lambda x: p.U(x) - lams, t0, t1, rate_bound=rate)


def _scale_in(eps):
    return np.array([1.0, eps, eps**2, eps**3])


def _propagate(p, eps, lams, record=False, rtol=1e-10):
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    B = len(lams)
    lam_abs_max = float(np.max(np.abs(lams)))
    Y0 = np.broadcast_to(_shooting.bc_initial_family(p.bc_left), (B, 4, 2))
    prop = _shooting.FamilyPropagator(Y0, record=record, rtol=rtol)
    _outer_region(prop, p, lams, p.a, -eps, lam_abs_max)
    prop.rescale_rows(_scale_in(eps))
    prop.checkpoint_merge()
    prop.run_rk(p.inner_coefficient(eps, lams), -1.0, 1.0,
                rate_bound=p.inner_rate_bound(eps, lam_abs_max), inner_eps=eps)
    prop.rescale_rows(1.0 / _scale_in(eps))
    prop.checkpoint_merge()
    _outer_region(prop, p, lams, eps, p.b, lam_abs_max)
    return prop


def perturbed_determinant(p: Problem, eps, lam, rtol=1e-10):
    """Compactified shooting determinant; zero exactly at eigenvalues.

    Accepts a scalar or an array of lambdas (one batched pass).  The value
    is the raw determinant divided by the positive re-orthonormalization
    factors, so roots and sign changes match the textbook determinant.
    """
    _check_eps(p, eps)
    scalar = np.ndim(lam) == 0
    prop = _propagate(p, eps, lam, rtol=rtol)
    F = _shooting.bc_rows(p.bc_right)
    M = np.einsum("ij,bjm->bim", F, prop.Y)
    d = M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]
    return float(d[0]) if scalar else d


def _s_to_lam(s):
    return s * np.abs(s) ** 3


def _lam_to_s(lam):
    return np.sign(lam) * np.abs(lam) ** 0.25


def _assemble_eigenpair(p, eps, lam, rtol=1e-11) -> Eigenpair:
    prop = _propagate(p, eps, np.array([lam]), record=True, rtol=rtol)
    F = _shooting.bc_rows(p.bc_right)
    M = F @ prop.Y[0]
    _, svals, vt = np.linalg.svd(M)
    gap = svals[1] / max(svals[0], 1e-300)
    if svals[0] < 1e-7:
        warnings.warn(f"lambda={lam}: shooting matrix numerically rank zero; "
                      "eigenvalue may be double", MultiplicityWarning)
    null = vt[-1]
    coeffs = _shooting.rebuild_coefficients(prop.segments, null)
    pieces = []
    for seg, c in zip(prop.segments, coeffs):
        traj = seg.trajectory.combination(c)
        if seg.inner_eps is None:
            pieces.append(_shooting.Piece(seg.t0, seg.t1, traj))
        else:
            e = seg.inner_eps
            pieces.append(_shooting.Piece(e * seg.t0, e * seg.t1, traj, inner_eps=e))
    y = _shooting.PiecewiseEigenfunction(pieces)
    norm = y.l2_norm()
    y.rescale(1.0 / norm)
    xs = np.linspace(p.a, p.b, 101)
    vals = y(xs)
    if vals[int(np.argmax(np.abs(vals)))] < 0:
        y.rescale(-1.0)

    # outer-side traces and the C3 matching defect at +-eps
    inner = [q for q in y.pieces if q.inner_eps is not None]
    outer = [q for q in y.pieces if q.inner_eps is None]
    outer_left = max((q for q in outer if q.hi <= -eps + 1e-12), key=lambda q: q.hi)
    outer_right = min((q for q in outer if q.lo >= eps - 1e-12), key=lambda q: q.lo)
    inner_first = min(inner, key=lambda q: q.lo)
    inner_last = max(inner, key=lambda q: q.hi)
    match = 0.0
    tl = outer_left.states(np.array([-eps]))[0]
    tr = outer_right.states(np.array([eps]))[0]
    for st_out, st_in in ((tl, inner_first.states(np.array([-eps]))[0]),
                          (tr, inner_last.states(np.array([eps]))[0])):
        scale = np.abs(st_out) + np.abs(st_in) + 1.0
        match = max(match, float(np.max(np.abs(st_in - st_out) / scale)))
    return Eigenpair(lam=float(lam), y=y, l2norm=1.0, trace_left=tl,
                     trace_right=tr, matching_defect=match, null_gap=float(gap))


def perturbed_spectrum(p: Problem, eps, window, max_count=32,
                       scan_rtol=3e-9, refine_rtol=1e-10) -> list[Eigenpair]:
    """All eigenvalues in the window, with normalized eigenfunctions.

    The scan grid is uniform in the quartic-scaled variable, with spacing an
    eighth of the asymptotic mode gap of the unperturbed clamped problem.
    """
    _check_eps(p, eps)
    lam_lo, lam_hi = float(window[0]), float(window[1])
    if not lam_lo < lam_hi:
        raise ValueError("empty spectral window")
    ds = np.pi / (8.0 * (p.b - p.a))
    s_lo, s_hi = _lam_to_s(lam_lo), _lam_to_s(lam_hi)
    # one extra cell on each side so window-edge dips have interior minima
    ns = int(np.ceil((s_hi - s_lo) / ds)) + 4
    s = np.linspace(s_lo - ds, s_hi + ds, ns)
    f_scan = lambda ss: perturbed_determinant(p, eps, _s_to_lam(ss), rtol=scan_rtol)
    brackets, collisions = _rootfind.scan_with_dip_refinement(f_scan, s)
    if collisions:
        warnings.warn("close eigenvalue pair resolved by local rescans",
                      MultiplicityWarning)
    if not brackets:
        return []
    lo, hi, flo, fhi = (np.array(v) for v in zip(*brackets))
    roots_s = _rootfind.illinois(
        lambda ss: perturbed_determinant(p, eps, _s_to_lam(ss), rtol=refine_rtol),
        lo, hi, flo, fhi, iterations=14, bisect_tail=4)
    lams = np.sort(_s_to_lam(roots_s))
    lams = lams[(lams >= lam_lo) & (lams <= lam_hi)][:max_count]
    return [_assemble_eigenpair(p, eps, lam) for lam in lams]


def divergent_branch_probe(p: Problem, eps_values, lam_cap=None, scan_points=2400):
    """Track the negative spectrum across an eps-sequence.

    Returns a dict with per-eps rows (eps, lam1, eps^4*lam1, count of
    negative eigenvalues).  When no negative eigenvalue exists for the
    largest eps, the result carries ``threshold_reached=False``.
    """
    rows = []
    for eps in eps_values:
        _check_eps(p, eps)
        if lam_cap is None:
            grid = np.linspace(-1, 1, 257)
            depth = sum(abs(w) * float(np.max(np.abs(s(grid))))
                        for w, s in p.shape_pairs() if s is not None and w != 0.0)
            cap = (depth + 1.0) * eps**-4 + p.u_bound() + 1.0
        else:
            cap = lam_cap * eps**-4
        s_lo = -(cap ** 0.25)
        s = np.linspace(s_lo, -1e-3, scan_points)
        lams = _s_to_lam(s)
        D = perturbed_determinant(p, eps, lams, rtol=3e-9)
        idx = _rootfind.sign_change_brackets(s, D)
        if len(idx) == 0:
            rows.append({"eps": eps, "lam1": None, "scaled_lam1": None,
                         "n_negative": 0})
            continue
        roots_s = _rootfind.illinois(
            lambda ss: perturbed_determinant(p, eps, _s_to_lam(ss), rtol=1e-10),
            s[idx], s[idx + 1], D[idx], D[idx + 1], iterations=12, bisect_tail=3)
        roots = np.sort(_s_to_lam(roots_s))
        rows.append({"eps": eps, "lam1": float(roots[0]),
                     "scaled_lam1": float(eps**4 * roots[0]),
                     "n_negative": int(len(roots))})
    reached = all(r["lam1"] is not None for r in rows)
    return {"rows": rows, "threshold_reached": reached}


def eigenpair_ode_residual(p: Problem, eps, pair: Eigenpair, samples=24):
    """Integral-form plug-back residual of an eigenpair, piece by piece.

    Checks y''' against the quadrature of its derivative from the equation
    (independent of the integrator's own bookkeeping); returns the maximum
    over pieces of the defect relative to the piece's y''' scale.
    """
    worst = 0.0
    for piece in pair.y.pieces:
        if piece.inner_eps is None:
            lo, hi = piece.lo, piece.hi
            coeff = lambda x: p.U(x) - pair.lam
            states = lambda x: piece.states(x)
        else:
            e = piece.inner_eps
            lo, hi = piece.lo / e, piece.hi / e
            coeff = p.inner_coefficient(e, np.array([pair.lam]))
            states = lambda x: np.asarray(piece.trajectory(x))
        ts = np.linspace(lo, hi, samples)
        st = states(ts)
        scale = float(np.max(np.abs(st[:, 3]))) + float(np.max(np.abs(st[:, 0]))) + 1e-300
        defect = 0.0
        for t_end, st_end in zip(ts[1:], st[1:]):
            xs, ws = odecore.gauss_legendre(lo, t_end, 48)
            sts = states(xs)
            integral = float(np.dot(ws, -np.ravel(coeff(xs)) * sts[:, 0]))
            defect = max(defect, abs(st_end[3] - st[0][3] - integral))
        worst = max(worst, defect / scale)
    return worst
