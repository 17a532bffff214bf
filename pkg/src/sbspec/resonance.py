"""Resonant set of a shape: couplings alpha where the free-end inner problem
w'''' + alpha Psi w = 0 on (-1, 1), w''(+-1) = w'''(+-1) = 0 has a nontrivial
solution, together with the eigenfunctions w_alpha, the coupling ratio
theta = w'(1)/w'(-1), and the quadratic/linear shape functionals that feed
the interface conditions of the limit operator.

The determinant D(alpha) is built from the two Cauchy solutions that carry
free-end data at the left endpoint (g1(-1)=1 resp. g2'(-1)=1, vanishing
second and third derivatives): a nontrivial free-end solution exists exactly
when the 2x2 matrix of their second and third derivatives at +1 is singular.
alpha = 0 is always resonant with the two-dimensional kernel of linear
functions; it is reported but flagged degenerate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _rootfind, odecore

__all__ = [
    "ResonanceData",
    "DegenerateResonanceError",
    "ScanResolutionWarning",
    "resonance_determinant",
    "resonant_set",
    "theta",
    "functional_quadratic_phi",
    "functional_linear_upsilon",
]

DET_RTOL = 1e-11
POLISH_RTOL = 2e-13
SCAN_RTOL = 3e-9
NONDEG_SLOPE_TOL = 1e-6
MULTIPLICITY_TOL = 1e-7


class DegenerateResonanceError(ValueError):
    """Operation requires a nondegenerate resonance."""


class ScanResolutionWarning(UserWarning):
    """Adjacent sign changes on the scan grid; roots may be under-resolved."""


@dataclass
class ResonanceData:
    """One member of the resonant set.

    ``w_alpha`` is normalized by w'(-1) = 1 when that slope is usable;
    ``theta`` is None for degenerate resonances (alpha = 0 included).
    """

    alpha: float
    multiplicity: int
    nondegenerate: bool
    theta: float | None
    w_alpha: odecore.Trajectory | None
    trace_left: np.ndarray | None
    trace_right: np.ndarray | None
    det_value: float = 0.0


def _g_end_states(psi, alphas, rtol=DET_RTOL, atol=1e-13, dense=False):
    """End states of the Cauchy pairs (g1, g2) for a batch of alphas.

    Returns (E, sol) where E[i, b, j] is the i-th derivative of g_{j+1} at
    xi = 1 for batch entry b.
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    nb = len(alphas)
    y0 = np.zeros((4, 2 * nb))
    y0[0, 0::2] = 1.0
    y0[1, 1::2] = 1.0
    cvec = np.repeat(alphas, 2)
    sol = odecore.integrate_ivp(lambda t: cvec * psi(t), None, -1.0, 1.0, y0,
                                rtol=rtol, atol=atol, dense=dense)
    E = sol.end_state.reshape(4, nb, 2)
    return E, sol


def resonance_determinant(psi, alpha, rtol=DET_RTOL):
    """det [[g1''(1), g2''(1)], [g1'''(1), g2'''(1)]]; zero iff alpha resonant.

    Accepts a scalar or an array of alphas (evaluated in one batched pass).
    The 2x2 determinant is accumulated in extended precision: near a root
    the two products cancel almost exactly, and the float64 subtraction
    would otherwise floor |D| at eps times the product magnitude.
    """
    scalar = np.ndim(alpha) == 0
    E, _ = _g_end_states(psi, alpha, rtol=rtol)
    El = E.astype(np.longdouble)
    d = (El[2, :, 0] * El[3, :, 1] - El[2, :, 1] * El[3, :, 0]).astype(float)
    return float(d[0]) if scalar else d


def _s_to_alpha(s):
    return s * np.abs(s) ** 3


def _alpha_to_s(a):
    return np.sign(a) * np.abs(a) ** 0.25


def _polish(psi, roots_s, cap=6000.0, iterations=5):
    """Secant polish at the tight evaluation tolerance.

    Refinement ran at a looser integrator tolerance; re-refining against the
    tight-tolerance determinant drives |D| down to its floating granularity.
    Only worthwhile where the granularity floor lies below ~1e-9, i.e. for
    moderate |alpha|; larger roots are already far more accurate than any
    absolute determinant criterion can certify.
    """
    small = np.abs(_s_to_alpha(roots_s)) <= cap
    if not np.any(small):
        return roots_s, np.full(len(roots_s), np.nan)
    x1 = roots_s[small]
    x0 = x1 * (1.0 + 3e-8) + 1e-10
    f0 = resonance_determinant(psi, _s_to_alpha(x0), rtol=POLISH_RTOL)
    f1 = resonance_determinant(psi, _s_to_alpha(x1), rtol=POLISH_RTOL)
    for _ in range(iterations):
        denom = np.where(f1 == f0, 1.0, f1 - f0)
        step = f1 * (x1 - x0) / denom
        step = np.clip(step, -1e-4 * np.abs(x1) - 1e-8, 1e-4 * np.abs(x1) + 1e-8)
        x0, f0 = x1, f1
        x1 = x1 - step
        f1 = resonance_determinant(psi, _s_to_alpha(x1), rtol=POLISH_RTOL)
        if np.all(np.abs(x1 - x0) <= 4e-16 * np.abs(x1)):
            break
    best = np.where(np.abs(f1) <= np.abs(f0), x1, x0)
    # final pass: scan a few floating-point granules around each root and
    # keep the argmin of |D|; the attainable floor is the eps-level jitter
    # of the trace products, so more candidates buy a smaller minimum
    offsets = np.arange(-16, 17)
    cand = best[:, None] * (1.0 + 1e-15 * offsets[None, :])
    fc = resonance_determinant(psi, _s_to_alpha(cand.ravel()), rtol=POLISH_RTOL)
    fc = np.abs(fc.reshape(cand.shape))
    pick = np.argmin(fc, axis=1)
    best = cand[np.arange(len(best)), pick]
    out = roots_s.copy()
    out[small] = best
    achieved = np.full(len(roots_s), np.nan)
    achieved[small] = fc[np.arange(len(best)), pick]
    return out, achieved


def resonant_set(psi, window, max_count=16, scan_step=0.05,
                 include_trajectories=True) -> list[ResonanceData]:
    """All resonances of ``psi`` in the window, ordered by |alpha|.

    The scan runs on a uniform grid in the quartic-scaled variable
    s = sign(alpha) |alpha|^(1/4), where consecutive resonances keep roughly
    constant spacing, and sign changes of D are refined by a safeguarded
    regula falsi.  alpha = 0 is always included (multiplicity 2, degenerate).
    """
    a_lo, a_hi = float(window[0]), float(window[1])
    if not (np.isfinite(a_lo) and np.isfinite(a_hi)) or a_lo >= a_hi:
        raise ValueError(f"invalid window {window!r}")

    s_lo, s_hi = _alpha_to_s(a_lo), _alpha_to_s(a_hi)
    # one extra cell on each side keeps window-edge roots bracketable
    ns = max(8, int(np.ceil((s_hi - s_lo) / scan_step)) + 3)
    s = np.linspace(s_lo - scan_step, s_hi + scan_step, ns)
    D = resonance_determinant(psi, _s_to_alpha(s), rtol=SCAN_RTOL)

    sgn = np.sign(D)
    # D vanishes identically at alpha = 0; roots there are handled separately
    near_zero = np.abs(_s_to_alpha(s)) < 0.5
    change = (sgn[:-1] * sgn[1:] < 0) & ~near_zero[:-1] & ~near_zero[1:]
    idx = np.where(change)[0]
    if len(idx) >= 2 and np.any(np.diff(idx) == 1):
        warnings.warn("adjacent sign changes on scan grid; rescanning locally",
                      ScanResolutionWarning)
        fine = []
        for i in idx[np.r_[np.diff(idx) == 1, False] | np.r_[False, np.diff(idx) == 1]]:
            fine.append(np.linspace(s[max(i - 1, 0)], s[min(i + 2, ns - 1)], 64))
        s = np.sort(np.unique(np.concatenate([s] + fine)))
        D = resonance_determinant(psi, _s_to_alpha(s), rtol=SCAN_RTOL)
        sgn = np.sign(D)
        near_zero = np.abs(_s_to_alpha(s)) < 0.5
        change = (sgn[:-1] * sgn[1:] < 0) & ~near_zero[:-1] & ~near_zero[1:]
        idx = np.where(change)[0]

    results: list[ResonanceData] = []
    if a_lo < 0.0 < a_hi:
        results.append(ResonanceData(alpha=0.0, multiplicity=2, nondegenerate=False,
                                     theta=None, w_alpha=None,
                                     trace_left=None, trace_right=None))

    if len(idx) > 0:
        roots_s = _rootfind.illinois(
            lambda ss: resonance_determinant(psi, _s_to_alpha(ss), rtol=SCAN_RTOL),
            s[idx], s[idx + 1], D[idx], D[idx + 1])
        roots_s, achieved = _polish(psi, roots_s)
        roots = _s_to_alpha(roots_s)
        keep = (roots >= a_lo) & (roots <= a_hi)
        if np.any(keep):
            results.extend(_populate(psi, roots[keep], include_trajectories,
                                     achieved[keep]))

    results.sort(key=lambda r: (abs(r.alpha), r.alpha))
    return results[:max_count]


def _populate(psi, roots, include_trajectories, achieved=None):
    """Eigen-data for refined roots; one dense batched pass for all of them."""
    E, sol = _g_end_states(psi, roots, rtol=DET_RTOL, dense=include_trajectories)
    out = []
    for b, alpha in enumerate(roots):
        B = np.array([[E[2, b, 0], E[2, b, 1]], [E[3, b, 0], E[3, b, 1]]])
        det_val = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
        if achieved is not None and np.isfinite(achieved[b]):
            det_val = achieved[b]
        scale = np.max(np.abs(E[:, b, :]))
        svals = np.linalg.svd(B, compute_uv=False)
        mult = 2 if svals[0] < MULTIPLICITY_TOL * max(scale, 1.0) else 1
        _, _, vt = np.linalg.svd(B)
        null = vt[-1]  # (c1, c2): w = c1 g1 + c2 g2
        wp_m1 = null[1]
        wp_p1 = null[0] * E[1, b, 0] + null[1] * E[1, b, 1]

        if include_trajectories:
            cfull = np.zeros(2 * len(roots))
            cfull[2 * b : 2 * b + 2] = null
            traj = sol.combination(cfull)
        else:
            traj = None
        if traj is not None:
            grid = np.linspace(-1.0, 1.0, 257)
            slope_max = float(np.max(np.abs(traj(grid)[:, 1])))
        else:
            slope_max = max(abs(wp_m1), abs(wp_p1))
        ok_slopes = (abs(wp_m1) > NONDEG_SLOPE_TOL * slope_max
                     and abs(wp_p1) > NONDEG_SLOPE_TOL * slope_max)
        nondeg = mult == 1 and ok_slopes

        th = None
        traj_norm = traj
        tl = tr = None
        if nondeg:
            th = float(wp_p1 / wp_m1)
            if traj is not None:
                cfull = np.zeros(2 * len(roots))
                cfull[2 * b : 2 * b + 2] = null / wp_m1
                traj_norm = sol.combination(cfull)
            tl = np.array([null[0] / wp_m1, 1.0, 0.0, 0.0])
            tr = (E[:, b, :] @ null) / wp_m1
        out.append(ResonanceData(alpha=float(alpha), multiplicity=mult,
                                 nondegenerate=bool(nondeg), theta=th,
                                 w_alpha=traj_norm, trace_left=tl,
                                 trace_right=tr, det_value=float(det_val)))
    return out


def theta(r: ResonanceData) -> float:
    """Coupling ratio w'(1)/w'(-1); defined only for nondegenerate resonances."""
    if not r.nondegenerate or r.theta is None:
        raise DegenerateResonanceError(
            f"theta is not defined for the degenerate resonance alpha={r.alpha}")
    return r.theta


def _auto_quad(f, n0=96, tol=1e-9):
    v1 = odecore.integrate_function(f, -1.0, 1.0, n=n0)
    v2 = odecore.integrate_function(f, -1.0, 1.0, n=2 * n0)
    if abs(v2 - v1) > tol * max(1.0, abs(v2)):
        v1, v2 = v2, odecore.integrate_function(f, -1.0, 1.0, n=4 * n0)
        if abs(v2 - v1) > tol * max(1.0, abs(v2)):
            raise RuntimeError("shape-functional quadrature did not settle")
    return v2


def _as_values(f):
    """Adapt trajectories, shapes and plain callables to xi -> u(xi)."""
    if isinstance(f, odecore.Trajectory):
        return lambda x: f(x)[:, 0]
    return f


def functional_quadratic_phi(phi, f) -> float:
    """Quadratic shape functional: integral of phi(xi) f(xi)^2 over (-1, 1)."""
    fv = _as_values(f)
    return _auto_quad(lambda x: phi(x) * fv(x) ** 2)


def functional_linear_upsilon(upsilon, f) -> float:
    """Linear shape functional: integral of upsilon(xi) f(xi) over (-1, 1)."""
    fv = _as_values(f)
    return _auto_quad(lambda x: upsilon(x) * fv(x))
