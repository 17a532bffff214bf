"""Independent oracles used by the tests.

Everything here deliberately avoids the library's own solution paths:
transcendental characteristic equations solved by bisection, fixed-grid
quadrature with Richardson extrapolation, classical fixed-step RK4, and a
finite-difference generalized eigensolver with free-end ghost stencils.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def bisect(f, lo, hi, iterations=200):
    flo = f(lo)
    assert flo * f(hi) < 0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def clamped_clamped_roots(n):
    """Roots of cos(z) cosh(z) = 1; eigenvalues are (z/L)^4 on length L."""
    f = lambda z: np.cos(z) * np.cosh(z) - 1.0
    grid = np.linspace(1.0, 3.2 + (n + 1) * np.pi, 6000)
    vals = f(grid)
    idx = np.where(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    return [bisect(f, grid[i], grid[i + 1]) for i in idx[:n]]


def clamped_pinned_roots(n):
    """Roots of tan(z) = tanh(z) (z > 0)."""
    f = lambda z: np.tan(z) - np.tanh(z)
    roots = []
    for k in range(1, n + 1):
        lo, hi = k * np.pi + 1e-6, k * np.pi + np.pi / 2 - 1e-6
        roots.append(bisect(f, lo, hi))
    return roots


def richardson_quadrature(f, a, b, n=512):
    """Composite Simpson at n and 2n intervals, Richardson-extrapolated."""
    def simpson(m):
        xs = np.linspace(a, b, m + 1)
        ys = f(xs)
        h = (b - a) / m
        return h / 3 * (ys[0] + ys[-1] + 4 * np.sum(ys[1:-1:2])
                        + 2 * np.sum(ys[2:-1:2]))
    s1, s2 = simpson(n), simpson(2 * n)
    return (16 * s2 - s1) / 15


def rk4_final_state(coeff, t0, t1, y0, nsteps):
    """Classical fixed-step RK4 for u'''' + c(t) u = 0 on a uniform grid."""
    def f(t, y):
        out = np.empty_like(y)
        out[0], out[1], out[2] = y[1], y[2], y[3]
        out[3] = -coeff(t) * y[0]
        return out

    h = (t1 - t0) / nsteps
    t, y = t0, np.array(y0, dtype=float)
    for _ in range(nsteps):
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


def free_end_fd_matrices(psi, N):
    """FD matrix of d^4/dxi^4 with free-end ghost stencils, and diag(psi)."""
    h = 2.0 / N
    n = N + 1
    xi = -1.0 + h * np.arange(n)
    A = sp.lil_matrix((n, n))
    for j in range(2, N - 1):
        A[j, j - 2:j + 3] = [1, -4, 6, -4, 1]
    A[0, 0:3] = [2, -4, 2]
    A[1, 0:4] = [-2, 5, -4, 1]
    A[N, N - 2:N + 1] = [2, -4, 2]
    A[N - 1, N - 3:N + 1] = [1, -4, 5, -2]
    return (A.tocsc()) / h**4, psi(xi), h


def _banded_matvec_longdouble(A, v):
    n = A.shape[0]
    out = np.zeros(n, np.longdouble)
    vl = np.asarray(v, np.longdouble)
    for k in (-2, -1, 0, 1, 2):
        d = np.asarray(A.diagonal(k), np.longdouble)
        if k >= 0:
            out[:n - k] += d * vl[k:]
        else:
            out[-k:] += d * vl[:n + k]
    return out


def fd_resonances_near(psi, sigma, N, k=4, imag_tol=1e-8):
    """Generalized eigensolve A w = -alpha B w near the shift sigma.

    Shift-inverted Arnoldi supplies left/right eigenvector estimates; the
    two-sided Rayleigh quotient is then evaluated in extended precision,
    which removes the O(N^4 eps) roundoff of the stiff operator.
    """
    A, b, h = free_end_fd_matrices(psi, N)
    B = sp.diags(b).tocsc()
    lu = spla.splu((A + sigma * B).tocsc())
    n = A.shape[0]
    opR = spla.LinearOperator((n, n), matvec=lambda v: lu.solve(B @ v))
    opL = spla.LinearOperator((n, n),
                              matvec=lambda v: lu.solve(B @ v, trans="T"))
    valsR, WR = spla.eigs(opR, k=k, which="LM", maxiter=9000, tol=1e-13)
    valsL, WL = spla.eigs(opL, k=k, which="LM", maxiter=9000, tol=1e-13)
    out = []
    for j in range(len(valsR)):
        a0 = sigma - 1.0 / valsR[j]
        if abs(a0.imag) > imag_tol * (1 + abs(a0.real)):
            continue
        i = int(np.argmin(np.abs(valsL - valsR[j])))
        w = WR[:, j].real
        u = np.asarray(WL[:, i].real, np.longdouble)
        Aw = _banded_matvec_longdouble(A, w)
        num = u @ Aw
        den = u @ (np.asarray(b, np.longdouble) * np.asarray(w, np.longdouble))
        out.append(float(-num / den))
    return np.array(out)


def fd_resonance_oracle(psi, target, levels=(960, 1920)):
    """Richardson-extrapolated FD value of the resonance nearest ``target``."""
    picks, hs = [], []
    for N in levels:
        al = fd_resonances_near(psi, target * 1.029 + 1.0, N)
        picks.append(al[np.argmin(np.abs(al - target))])
        hs.append(2.0 / N)
    if len(levels) == 2:
        return picks[1] + (picks[1] - picks[0]) * hs[1]**2 / (hs[0]**2 - hs[1]**2)
    M = np.vstack([np.ones(len(hs))]
                  + [np.array(hs) ** (2 + 2 * i) for i in range(len(hs) - 1)]).T
    return float(np.linalg.solve(M, np.array(picks))[0])


def clamped_fd_eigenvalues(u_fn, lo, hi, N, count):
    """FD eigenvalues of u'''' + U(x) u on (lo, hi), clamped both ends.

    Clamped ghost elimination: w(-h) = w(h) mirrors the slope condition.
    Interior unknowns only; the matrix is symmetric, so a plain Rayleigh
    quotient in extended precision removes the O(N^4 eps) roundoff from the
    ARPACK values.
    """
    h = (hi - lo) / N
    xs = lo + h * np.arange(1, N)
    n = N - 1
    A = sp.lil_matrix((n, n))
    for j in range(n):
        for off, val in zip((-2, -1, 0, 1, 2), (1.0, -4.0, 6.0, -4.0, 1.0)):
            i = j + off
            if 0 <= i < n:
                A[j, i] += val
    # ghost reflection at clamped ends: w_{-1} = w_1, w_{N+1} = w_{N-1}
    A[0, 0] += 1.0
    A[n - 1, n - 1] += 1.0
    A = (A.tocsc() / h**4 + sp.diags(u_fn(xs))).tocsc()
    vals, vecs = spla.eigsh(A, k=count, sigma=0.0, which="LM")
    out = []
    for j in range(len(vals)):
        v = vecs[:, j]
        Av = _banded_matvec_longdouble(A, v)
        vl = np.asarray(v, np.longdouble)
        out.append(float((vl @ Av) / (vl @ vl)))
    return np.sort(out)


def clamped_fd_oracle(u_fn, lo, hi, count, levels=(160, 320, 640)):
    """Richardson-extrapolated clamped FD eigenvalues.

    Levels stay modest: beyond N ~ 1000 the eigenvector roundoff of the
    stiff pencil outgrows the h^2 truncation and extrapolation degrades.
    """
    vals = np.array([clamped_fd_eigenvalues(u_fn, lo, hi, N, count)
                     for N in levels])
    hs = np.array([(hi - lo) / N for N in levels])
    M = np.vstack([np.ones(len(hs))]
                  + [hs ** (2 + 2 * i) for i in range(len(hs) - 1)]).T
    return np.linalg.solve(M, vals)[0]
