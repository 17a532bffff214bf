"""Spectra of the small-eps limit operators.

Away from the resonant set the limit decouples into clamped problems on
(a, 0) and (0, b).  At a nondegenerate resonance the halves couple through
the origin via three interface conditions

    f(0) = 0,
    f'(+0) = theta f'(-0),
    theta f''(+0) - f''(-0) = kappa f'(-0),

with f''' unconstrained; theta is the resonance coupling ratio and kappa
collects the quadratic shape functional of the second singular term.  The
resonant solver keeps one determinant: the left boundary family is shot
from a, its value at 0- becomes a determinant row, the traces are pushed
through the interface map together with a free f'''(+0) column and shot to
b against the right boundary rows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _rootfind, _shooting, resonance
from .perturbed import MultiplicityWarning, Problem, _lam_to_s, _s_to_lam

__all__ = [
    "InterfaceConditions",
    "LimitEigenpair",
    "build_interface",
    "limit_spectrum_nonresonant",
    "limit_spectrum_resonant",
]

COINCIDENCE_TOL = 1e-7


@dataclass(frozen=True)
class InterfaceConditions:
    """Coupling data at the origin for the limit operator."""

    mode: str            # "nonresonant" | "resonant"
    theta: float | None = None
    kappa: float = 0.0

    def __post_init__(self):
        if self.mode == "resonant" and (self.theta is None or self.theta == 0.0):
            raise ValueError("resonant interface requires nonzero theta")


@dataclass
class LimitEigenpair:
    lam: float
    y: _shooting.PiecewiseEigenfunction
    mode: str
    side: str | None          # "left"/"right" for decoupled eigenfunctions
    trace_left: np.ndarray    # state at 0-
    trace_right: np.ndarray   # state at 0+
    multiplicity: int = 1


def build_interface(r: resonance.ResonanceData, beta, phi) -> InterfaceConditions:
    """Interface conditions of the resonant limit operator.

    kappa = beta * integral of phi * (w_alpha / w_alpha'(-1))^2; the stored
    eigenfunction is already normalized by its left slope.
    """
    if not r.nondegenerate:
        raise resonance.DegenerateResonanceError(
            f"no limit operator for the degenerate resonance alpha={r.alpha}")
    if beta == 0.0 or phi is None:
        kappa = 0.0
    else:
        kappa = beta * resonance.functional_quadratic_phi(phi, r.w_alpha)
    return InterfaceConditions(mode="resonant", theta=r.theta, kappa=kappa)


def _run_outer(prop, p: Problem, lams, t0, t1):
    if p.u_constant:
        prop.run_constant(p.u_coeffs[0] - lams, t0, t1)
    else:
        rate = (p.u_bound() + float(np.max(np.abs(lams)))) ** 0.25
        prop.run_rk(lambda x: p.U(x) - lams, t0, t1, rate_bound=rate)


def _scan_roots(f_scan, f_refine, window, length):
    lam_lo, lam_hi = float(window[0]), float(window[1])
    if not lam_lo < lam_hi:
        raise ValueError("empty spectral window")
    ds = np.pi / (8.0 * max(length, 1e-3))
    s_lo, s_hi = _lam_to_s(lam_lo), _lam_to_s(lam_hi)
    # one extra cell on each side so window-edge dips have interior minima
    ns = int(np.ceil((s_hi - s_lo) / ds)) + 4
    s = np.linspace(s_lo - ds, s_hi + ds, ns)
    brackets, collisions = _rootfind.scan_with_dip_refinement(
        lambda ss: f_scan(_s_to_lam(ss)), s)
    if collisions:
        warnings.warn("close limit eigenvalues resolved by local rescans",
                      MultiplicityWarning)
    if not brackets:
        return np.array([])
    lo, hi, flo, fhi = (np.array(v) for v in zip(*brackets))
    roots_s = _rootfind.illinois(lambda ss: f_refine(_s_to_lam(ss)),
                                 lo, hi, flo, fhi, iterations=14, bisect_tail=4)
    roots = np.sort(_s_to_lam(roots_s))
    return roots[(roots >= lam_lo) & (roots <= lam_hi)]


def _half_determinant(p: Problem, side, rtol):
    t0 = p.a if side == "left" else p.b
    bc = p.bc_left if side == "left" else p.bc_right

    def determinant(lams):
        lams = np.atleast_1d(lams)
        B = len(lams)
        Y0 = np.broadcast_to(_shooting.bc_initial_family(bc), (B, 4, 2))
        prop = _shooting.FamilyPropagator(Y0, rtol=rtol)
        _run_outer(prop, p, lams, t0, 0.0)
        M = prop.Y[:, :2, :]  # rows y(0), y'(0): clamped at the origin
        return M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]

    return determinant


def _assemble_half(p: Problem, side, lam, rtol=1e-11) -> LimitEigenpair:
    t0 = p.a if side == "left" else p.b
    bc = p.bc_left if side == "left" else p.bc_right
    prop = _shooting.FamilyPropagator(_shooting.bc_initial_family(bc),
                                      record=True, rtol=rtol)
    _run_outer(prop, p, np.array([lam]), t0, 0.0)
    M = prop.Y[0, :2, :]
    _, _, vt = np.linalg.svd(M)
    null = vt[-1]
    coeffs = _shooting.rebuild_coefficients(prop.segments, null)
    pieces = [_shooting.Piece(min(seg.t0, seg.t1), max(seg.t0, seg.t1),
                              seg.trajectory.combination(c))
              for seg, c in zip(prop.segments, coeffs)]
    y = _shooting.PiecewiseEigenfunction(pieces, zero_outside=True)
    y.rescale(1.0 / y.l2_norm())
    xs = np.linspace(min(t0, 0.0), max(t0, 0.0), 65)
    vals = y(xs)
    if vals[int(np.argmax(np.abs(vals)))] < 0:
        y.rescale(-1.0)
    zero_state = np.zeros(4)
    trace0 = y.states(np.array([0.0]))[0]
    tl = trace0 if side == "left" else zero_state
    tr = trace0 if side == "right" else zero_state
    return LimitEigenpair(lam=float(lam), y=y, mode="nonresonant", side=side,
                          trace_left=tl, trace_right=tr)


def limit_spectrum_nonresonant(p: Problem, window, max_count=32,
                               scan_rtol=3e-10, refine_rtol=1e-11):
    """Union of the decoupled clamped spectra on (a, 0) and (0, b).

    Coinciding left/right eigenvalues are reported pairwise with
    multiplicity 2 (both eigenfunctions are returned).
    """
    out = []
    for side in ("left", "right"):
        length = abs(p.a) if side == "left" else p.b
        roots = _scan_roots(_half_determinant(p, side, scan_rtol),
                            _half_determinant(p, side, refine_rtol),
                            window, length)
        out.extend(_assemble_half(p, side, lam) for lam in roots)
    out.sort(key=lambda e: e.lam)
    for e1, e2 in zip(out[:-1], out[1:]):
        if abs(e1.lam - e2.lam) <= COINCIDENCE_TOL * max(1.0, abs(e1.lam)):
            e1.multiplicity = e2.multiplicity = 2
    return out[:max_count]


def _interface_map(ic: InterfaceConditions):
    """Left traces at 0- to the right state at 0+ (third derivative free).

    Encodes v(0+) = 0, v'(0+) = theta v'(0-),
    v''(0+) = (v''(0-) + kappa v'(0-)) / theta.
    """
    th, ka = ic.theta, ic.kappa
    B = np.zeros((4, 4))
    B[1, 1] = th
    B[2, 1] = ka / th
    B[2, 2] = 1.0 / th
    return B


def _resonant_parts(p: Problem, ic: InterfaceConditions, lams, rtol, record=False):
    """Left family at 0-, interface-mapped right family at b, R bookkeeping."""
    lams = np.atleast_1d(lams)
    B = len(lams)
    Bmap = _interface_map(ic)
    Y0 = np.broadcast_to(_shooting.bc_initial_family(p.bc_left), (B, 4, 2))
    left = _shooting.FamilyPropagator(Y0, rtol=rtol, record=record)
    _run_outer(left, p, lams, p.a, 0.0)
    T = left.Y  # (B, 4, 2)
    Z0 = np.zeros((B, 4, 3))
    Z0[:, :, :2] = np.einsum("ij,bjm->bim", Bmap, T)
    Z0[:, 3, 2] = 1.0
    right = _shooting.FamilyPropagator(Z0, rtol=rtol, record=record, track_r=True)
    _run_outer(right, p, lams, 0.0, p.b)
    return left, right, T


def _resonant_matrix(p, ic, right, T):
    F = _shooting.bc_rows(p.bc_right)
    rows23 = np.einsum("ij,bjm->bim", F, right.Y)
    B = right.B
    t_row = np.zeros((B, 3))
    t_row[:, 0] = T[:, 0, 0]
    t_row[:, 1] = T[:, 0, 1]
    t_prime = np.linalg.solve(np.transpose(right.r_chain, (0, 2, 1)),
                              t_row[:, :, None])[:, :, 0]
    return np.concatenate([t_prime[:, None, :], rows23], axis=1)


def limit_spectrum_resonant(p: Problem, ic: InterfaceConditions, window,
                            max_count=32, scan_rtol=3e-10, refine_rtol=1e-11):
    """Eigenvalues and eigenfunctions of the coupled resonant limit operator."""
    if ic.mode != "resonant":
        raise ValueError("interface conditions are not resonant")

    def det(lams, rtol):
        _, right, T = _resonant_parts(p, ic, lams, rtol)
        return np.linalg.det(_resonant_matrix(p, ic, right, T))

    roots = _scan_roots(lambda l: det(l, scan_rtol), lambda l: det(l, refine_rtol),
                        window, p.b - p.a)
    return [_assemble_resonant(p, ic, lam, rtol=refine_rtol)
            for lam in roots[:max_count]]


def _assemble_resonant(p: Problem, ic: InterfaceConditions, lam, rtol=1e-11):
    left, right, T = _resonant_parts(p, ic, np.array([lam]), rtol, record=True)
    M = _resonant_matrix(p, ic, right, T)[0]
    _, svals, vt = np.linalg.svd(M)
    mult = int(np.sum(svals < 1e-7 * max(svals[0], 1e-300)))
    # the null vector lives on the final right basis; undo the accumulated
    # QR mixing to recover coefficients on (left family at 0-, free column)
    c0 = np.linalg.solve(right.r_chain[0], vt[-1])
    c0 /= np.linalg.norm(c0)
    left_coeffs = _shooting.rebuild_coefficients(left.segments, c0[:2])
    right_coeffs = _shooting.forward_coefficients(right.segments, c0)
    pieces = [_shooting.Piece(seg.t0, seg.t1, seg.trajectory.combination(c))
              for seg, c in zip(left.segments, left_coeffs)]
    pieces += [_shooting.Piece(seg.t0, seg.t1, seg.trajectory.combination(c))
               for seg, c in zip(right.segments, right_coeffs)]
    y = _shooting.PiecewiseEigenfunction(pieces)
    y.rescale(1.0 / y.l2_norm())
    xs = np.linspace(p.a, p.b, 101)
    vals = y(xs)
    if vals[int(np.argmax(np.abs(vals)))] < 0:
        y.rescale(-1.0)
    left_end = max((q for q in y.pieces if q.hi <= 1e-12), key=lambda q: q.hi)
    right_start = min((q for q in y.pieces if q.lo >= -1e-12), key=lambda q: q.lo)
    tl = left_end.states(np.array([0.0]))[0]
    tr = right_start.states(np.array([0.0]))[0]
    if mult > 1:
        warnings.warn(f"limit eigenvalue {lam} numerically multiple",
                      MultiplicityWarning)
    return LimitEigenpair(lam=float(lam), y=y, mode="resonant", side=None,
                          trace_left=tl, trace_right=tr, multiplicity=max(mult, 1))
