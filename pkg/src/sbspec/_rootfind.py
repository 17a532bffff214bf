"""Vectorized bracketed root refinement for batched determinant functions."""

from __future__ import annotations

import numpy as np


def sign_change_brackets(xs, fs, mask=None):
    """Indices i where f changes sign between xs[i] and xs[i+1]."""
    sgn = np.sign(fs)
    change = sgn[:-1] * sgn[1:] < 0
    if mask is not None:
        change &= mask[:-1] & mask[1:]
    return np.where(change)[0]


def scan_with_dip_refinement(f, xs, fs=None, depth=3, local_points=33,
                             dip_ratio=0.6):
    """Brackets from a grid scan, recursively resolving suspicious dips.

    A pair of close roots inside one cell leaves no sign change, only a dip
    of |f|; local minima that undershoot the geometric mean of their
    neighbors by ``dip_ratio`` are rescanned on a finer local grid.

    Returns (brackets, collisions): each bracket is (lo, hi, flo, fhi);
    ``collisions`` is True when any dip resolved into multiple roots.
    """
    fs = f(xs) if fs is None else fs
    out = []
    collisions = False
    idx = sign_change_brackets(xs, fs)
    for i in idx:
        out.append((xs[i], xs[i + 1], fs[i], fs[i + 1]))
    if depth <= 0:
        return out, collisions
    absf = np.abs(fs)
    near_change = np.zeros(len(xs), dtype=bool)
    near_change[idx] = True
    near_change[idx + 1] = True
    for i in range(1, len(xs) - 1):
        if near_change[i - 1] or near_change[i] or near_change[i + 1]:
            continue
        if not (absf[i] < absf[i - 1] and absf[i] < absf[i + 1]):
            continue
        gm = np.sqrt(absf[i - 1] * absf[i + 1])
        if absf[i] < dip_ratio * gm or absf[i] == 0.0:
            local = np.linspace(xs[i - 1], xs[i + 1], local_points)
            sub, _ = scan_with_dip_refinement(f, local, depth=depth - 1,
                                              local_points=local_points,
                                              dip_ratio=dip_ratio)
            if len(sub) > 1:
                collisions = True
            out.extend(sub)
    out.sort(key=lambda b: b[0])
    return out, collisions


def illinois(f, lo, hi, flo, fhi, xtol_rel=1e-13, iterations=16, bisect_tail=6):
    """Safeguarded regula falsi on a batch of brackets.

    ``f`` maps an array of abscissas to an array of values (one batched
    evaluation per iteration).  Returns the refined roots.
    """
    lo, hi = np.asarray(lo, float).copy(), np.asarray(hi, float).copy()
    flo, fhi = np.asarray(flo, float).copy(), np.asarray(fhi, float).copy()
    side = np.zeros(len(lo), dtype=int)
    for _ in range(iterations):
        denom = fhi - flo
        denom = np.where(denom == 0.0, 1.0, denom)
        mid = hi - fhi * (hi - lo) / denom
        width = hi - lo
        mid = np.clip(mid, lo + 1e-3 * width, hi - 1e-3 * width)
        fm = f(mid)
        on_lo = np.sign(fm) == np.sign(flo)
        fhi = np.where(on_lo & (side == -1), 0.5 * fhi, fhi)
        flo = np.where(~on_lo & (side == 1), 0.5 * flo, flo)
        lo = np.where(on_lo, mid, lo)
        flo = np.where(on_lo, fm, flo)
        hi = np.where(on_lo, hi, mid)
        fhi = np.where(on_lo, fhi, fm)
        side = np.where(on_lo, -1, 1)
        if np.all(hi - lo <= xtol_rel * np.maximum(1.0, np.abs(lo))):
            break
    for _ in range(bisect_tail):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        on_lo = np.sign(fm) == np.sign(flo)
        lo = np.where(on_lo, mid, lo)
        flo = np.where(on_lo, fm, flo)
        hi = np.where(on_lo, hi, mid)
    return 0.5 * (lo + hi)
