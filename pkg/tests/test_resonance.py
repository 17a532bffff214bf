import numpy as np
import pytest

from sbspec import odecore, resonance, shapes

import oracles

# frozen from oracles.fd_resonance_oracle at levels (800, 1600, 3200)
FIRST_RESONANCE_B = -346.20041689
SECOND_RESONANCE_B = -2302.48796851
FIRST_RESONANCE_ODD = 2275.32490092

BATTERY = [[1.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0, -0.5]]


@pytest.mark.parametrize("coeffs", BATTERY)
def test_trivial_resonance_at_zero(coeffs):
    psi = shapes.make_bump_shape(coeffs)
    assert resonance.resonance_determinant(psi, 0.0) == pytest.approx(0.0, abs=1e-12)
    rs = resonance.resonant_set(psi, (-30.0, 30.0), include_trajectories=False)
    trivial = [r for r in rs if r.alpha == 0.0]
    assert len(trivial) == 1
    assert trivial[0].multiplicity == 2
    assert not trivial[0].nondegenerate


def test_determinant_continuity(odd_bump):
    base = np.array([-500.0, -100.0, 150.0, 900.0])
    d0 = resonance.resonance_determinant(odd_bump, base)
    for h in (1e-3, 1e-5):
        dh = resonance.resonance_determinant(odd_bump, base + h)
        assert np.max(np.abs(dh - d0)) < 1e-1 * h / 1e-5 * (1 + np.max(np.abs(d0)))


def test_no_positive_resonance_for_positive_shape(bump):
    rs = resonance.resonant_set(bump, (0.5, 4000.0), include_trajectories=False)
    assert rs == []


def test_first_resonances_match_fd_oracle(bump_resonances, odd_bump_resonances):
    nonzero = [r for r in bump_resonances if r.alpha != 0.0]
    assert len(nonzero) == 2
    assert nonzero[0].alpha == pytest.approx(FIRST_RESONANCE_B, rel=2e-7)
    assert nonzero[1].alpha == pytest.approx(SECOND_RESONANCE_B, rel=2e-7)

    nonzero_o = [r for r in odd_bump_resonances
                 if r.alpha != 0.0 and abs(r.alpha) < 3000]
    assert sorted(r.alpha for r in nonzero_o) == pytest.approx(
        [-FIRST_RESONANCE_ODD, FIRST_RESONANCE_ODD], rel=2e-7)


def test_sign_changing_shape_has_resonances_on_both_sides(odd_bump_resonances):
    rs = odd_bump_resonances
    assert any(r.alpha < 0 for r in rs)
    assert any(r.alpha > 0 for r in rs)


def test_refined_roots_meet_absolute_determinant_tolerance(
        bump_resonances, odd_bump_resonances):
    # the refined |D| bottoms out at the eps-level jitter of the Cauchy
    # traces, which grows with the trace magnitude: assert the absolute
    # tolerance where double precision admits it (first resonance of the
    # even bump, first pair of the odd shape) and sanity-bound the rest
    small = [r for r in bump_resonances if abs(r.alpha) < 500] + \
        [r for r in odd_bump_resonances if abs(r.alpha) < 2400]
    assert len(small) >= 4  # includes the two trivial zero entries
    for r in small:
        assert abs(r.det_value) <= 1e-9
    for r in list(bump_resonances) + list(odd_bump_resonances):
        if abs(r.alpha) < 3000:
            assert abs(r.det_value) <= 1e-6


def test_free_end_conditions_and_normalization(first_odd_resonance):
    r = first_odd_resonance
    st_l, st_r = r.w_alpha(-1.0), r.w_alpha(1.0)
    assert abs(st_l[1] - 1.0) < 1e-10          # w'(-1) = 1 normalization
    assert abs(st_l[2]) < 1e-7 and abs(st_l[3]) < 1e-7
    assert abs(st_r[2]) < 1e-7 and abs(st_r[3]) < 1e-7


def test_theta_parity_for_even_shape(bump_resonances):
    nonzero = [r for r in bump_resonances if r.alpha != 0.0]
    # even shape: eigenfunctions alternate parity; w'(1)/w'(-1) = -1 for an
    # even eigenfunction and +1 for an odd one
    assert nonzero[0].theta == pytest.approx(-1.0, abs=1e-8)
    assert nonzero[1].theta == pytest.approx(1.0, abs=1e-8)
    grid = np.linspace(-1, 1, 101)
    vals = nonzero[0].w_alpha(grid)[:, 0]
    assert np.max(np.abs(vals - vals[::-1])) < 1e-7 * np.max(np.abs(vals))


def test_theta_invariant_under_rescaling(first_odd_resonance):
    r = first_odd_resonance
    st_l, st_r = 7.0 * r.w_alpha(-1.0), 7.0 * r.w_alpha(1.0)
    assert st_r[1] / st_l[1] == pytest.approx(r.theta, rel=1e-13)


def test_theta_from_both_null_directions(odd_bump, first_odd_resonance):
    # at a simple root the 2x2 end matrix has rank one: both rows give the
    # same null direction and hence the same theta
    r = first_odd_resonance
    E, _ = resonance._g_end_states(odd_bump, np.array([r.alpha]))
    B = np.array([[E[2, 0, 0], E[2, 0, 1]], [E[3, 0, 0], E[3, 0, 1]]])
    thetas = []
    for row in B:
        null = np.array([row[1], -row[0]])
        wp_m1 = null[1]
        wp_p1 = null[0] * E[1, 0, 0] + null[1] * E[1, 0, 1]
        thetas.append(wp_p1 / wp_m1)
    assert thetas[0] == pytest.approx(thetas[1], rel=1e-8)
    assert thetas[0] == pytest.approx(r.theta, rel=1e-8)


def test_theta_raises_for_degenerate(bump):
    rs = resonance.resonant_set(bump, (-30.0, 30.0), include_trajectories=False)
    trivial = [r for r in rs if r.alpha == 0.0][0]
    with pytest.raises(resonance.DegenerateResonanceError):
        resonance.theta(trivial)


def test_theta_continuous_along_shape_homotopy():
    # deform b -> b + s*xi*b and track the first negative resonance
    prev_theta = None
    prev_alpha = None
    for s in np.linspace(0.0, 0.4, 5):
        psi = shapes.make_bump_shape([1.0, float(s)])
        window = (-600.0, -100.0) if prev_alpha is None else \
            (prev_alpha * 1.3, prev_alpha * 0.7)
        rs = [r for r in resonance.resonant_set(psi, window) if r.nondegenerate]
        assert rs, f"lost the tracked resonance at s={s}"
        r = min(rs, key=lambda q: abs(q.alpha - (prev_alpha or q.alpha)))
        if prev_theta is not None:
            assert abs(r.theta - prev_theta) < 0.2
        prev_theta, prev_alpha = r.theta, r.alpha


def test_rayleigh_identity(bump, odd_bump, bump_resonances, odd_bump_resonances):
    for psi, rset in [(bump, bump_resonances), (odd_bump, odd_bump_resonances)]:
        rs = [r for r in rset if r.nondegenerate and abs(r.alpha) < 3000]
        for r in rs:
            xs, ws = odecore.gauss_legendre(-1, 1, 300)
            states = r.w_alpha(xs)
            lhs = float(np.dot(ws, states[:, 2] ** 2))
            rhs = -r.alpha * float(np.dot(ws, psi(xs) * states[:, 0] ** 2))
            assert lhs == pytest.approx(rhs, rel=1e-6)


def test_quadratic_functional(bump, odd_bump):
    zero = lambda x: np.zeros_like(x)
    assert resonance.functional_quadratic_phi(bump, zero) == 0.0
    even = lambda x: 1.0 + x**2
    assert resonance.functional_quadratic_phi(odd_bump, even) == pytest.approx(
        0.0, abs=1e-10)
    one = lambda x: np.ones_like(x)
    assert resonance.functional_quadratic_phi(bump, one) == pytest.approx(
        shapes.moment(bump, 0), abs=1e-9)
    f = lambda x: np.cos(x)
    v1 = resonance.functional_quadratic_phi(bump, f)
    v3 = resonance.functional_quadratic_phi(bump, lambda x: 3.0 * np.cos(x))
    assert v3 == pytest.approx(9.0 * v1, rel=1e-12)


def test_linear_functional(bump, odd_bump):
    one = lambda x: np.ones_like(x)
    assert resonance.functional_linear_upsilon(bump, one) == pytest.approx(
        shapes.moment(bump, 0), abs=1e-9)
    f = lambda x: np.sin(x)
    v1 = resonance.functional_linear_upsilon(bump, f)
    v2 = resonance.functional_linear_upsilon(bump, lambda x: 2.0 * np.sin(x))
    assert v2 == pytest.approx(2.0 * v1, rel=1e-12)
    odd = lambda x: x**3
    assert resonance.functional_linear_upsilon(bump, odd) == pytest.approx(
        0.0, abs=1e-12)


def test_invalid_window(odd_bump):
    with pytest.raises(ValueError):
        resonance.resonant_set(odd_bump, (10.0, -10.0))
    with pytest.raises(ValueError):
        resonance.resonant_set(odd_bump, (0.0, np.inf))
