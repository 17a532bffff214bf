import numpy as np
import pytest

from sbspec import perturbed, shapes

import oracles


@pytest.fixture(scope="module")
def coupled_problem(bump):
    return perturbed.Problem(a=-1.0, b=1.0, alpha=50.0, psi=bump)


def test_zero_coupling_matches_clamped_beam_oracle():
    p = perturbed.Problem(a=-1.0, b=1.0)
    pairs = perturbed.perturbed_spectrum(p, 0.05, (1.0, 12000.0))
    zs = oracles.clamped_clamped_roots(5)
    lam_oracle = [(z / 2.0) ** 4 for z in zs]
    assert len(pairs) >= 5
    for pair, lam in zip(pairs[:5], lam_oracle):
        assert pair.lam == pytest.approx(lam, rel=1e-8)


def test_bc_variants_match_oracles():
    # pinned-pinned on (-1, 1): lambda = (n pi / 2)^4
    p = perturbed.Problem(a=-1.0, b=1.0, bc_left="pinned", bc_right="pinned")
    pairs = perturbed.perturbed_spectrum(p, 0.05, (1.0, 1500.0))
    expect = [(n * np.pi / 2) ** 4 for n in (1, 2)]
    assert [q.lam for q in pairs[:2]] == pytest.approx(expect, rel=1e-9)

    # clamped-pinned: roots of tan z = tanh z scaled to length 2
    p2 = perturbed.Problem(a=-1.0, b=1.0, bc_right="pinned")
    pairs2 = perturbed.perturbed_spectrum(p2, 0.05, (1.0, 1500.0))
    zs = oracles.clamped_pinned_roots(2)
    assert [q.lam for q in pairs2[:2]] == pytest.approx(
        [(z / 2) ** 4 for z in zs], rel=1e-9)


def test_determinant_continuity_in_lambda(coupled_problem):
    lams = np.linspace(100.0, 140.0, 9)
    d = perturbed.perturbed_determinant(coupled_problem, 0.1, lams)
    dh = perturbed.perturbed_determinant(coupled_problem, 0.1, lams + 1e-6)
    assert np.max(np.abs(dh - d)) < 1e-3 * (1 + np.max(np.abs(d)))


def test_roots_consistent_across_eps_resolution(coupled_problem):
    # root locations drift at first order in eps: successive halvings of eps
    # must halve the drift
    lams = {}
    for eps in (0.04, 0.02, 0.01):
        prs = perturbed.perturbed_spectrum(coupled_problem, eps, (400.0, 560.0))
        assert len(prs) == 2
        lams[eps] = prs[0].lam
    d1 = abs(lams[0.04] - lams[0.02])
    d2 = abs(lams[0.02] - lams[0.01])
    assert 1.4 < d1 / d2 < 2.8


def test_eigenvalues_continuous_and_bounded_above(coupled_problem):
    lam_prev = None
    for eps in (0.1, 0.09, 0.08):
        pairs = perturbed.perturbed_spectrum(coupled_problem, eps, (400.0, 560.0))
        lam = pairs[0].lam
        if lam_prev is not None:
            assert abs(lam - lam_prev) < 8.0
        lam_prev = lam
    # bounded above along a decreasing eps sequence
    tops = [perturbed.perturbed_spectrum(coupled_problem, eps, (400.0, 560.0))[0].lam
            for eps in (0.1, 0.05, 0.025)]
    assert max(tops) < 560.0


def test_eigenpair_quality(coupled_problem):
    eps = 0.05
    pairs = perturbed.perturbed_spectrum(coupled_problem, eps, (1.0, 4100.0))
    assert len(pairs) >= 3
    for q in pairs:
        assert q.matching_defect < 1e-6
        assert abs(q.y.l2_norm() - 1.0) < 1e-9
        res = perturbed.eigenpair_ode_residual(coupled_problem, eps, q)
        assert res < 1e-5
        # boundary conditions at the endpoints
        st_a = q.y.states(np.array([coupled_problem.a]))[0]
        st_b = q.y.states(np.array([coupled_problem.b]))[0]
        assert abs(st_a[0]) < 1e-7 and abs(st_a[1]) < 1e-7
        assert abs(st_b[0]) < 1e-7 and abs(st_b[1]) < 1e-7


def test_eigenfunction_orthogonality(coupled_problem):
    pairs = perturbed.perturbed_spectrum(coupled_problem, 0.05, (1.0, 1200.0))
    for i in range(len(pairs)):
        for j in range(i + 1, len(pairs)):
            assert abs(pairs[i].y.inner_product(pairs[j].y)) < 1e-5


def test_monotone_window_coverage(coupled_problem):
    small = perturbed.perturbed_spectrum(coupled_problem, 0.05, (400.0, 560.0))
    large = perturbed.perturbed_spectrum(coupled_problem, 0.05, (300.0, 1000.0))
    lams_small = [q.lam for q in small]
    lams_large = [q.lam for q in large]
    for lam in lams_small:
        assert min(abs(lam - l2) for l2 in lams_large) < 1e-7 * max(1, lam)


def test_nonconstant_potential_against_fd_oracle():
    p = perturbed.Problem(a=-1.0, b=1.0, u_coeffs=(0.0, 0.0, 40.0))
    pairs = perturbed.perturbed_spectrum(p, 0.05, (1.0, 1500.0))
    oracle = oracles.clamped_fd_oracle(lambda x: 40.0 * x**2, -1.0, 1.0, 3)
    for q, lam in zip(pairs[:3], oracle):
        assert q.lam == pytest.approx(lam, rel=1e-6)


def test_divergent_branch_for_sign_changing_shape(odd_bump):
    p = perturbed.Problem(a=-1.0, b=1.0, alpha=1000.0, psi=odd_bump)
    probe = perturbed.divergent_branch_probe(p, [0.1, 0.05])
    assert probe["threshold_reached"]
    scaled = [row["scaled_lam1"] for row in probe["rows"]]
    assert all(s < -1.0 for s in scaled)
    assert abs(scaled[1] - scaled[0]) < 0.2 * abs(scaled[0])
    counts = [row["n_negative"] for row in probe["rows"]]
    assert counts[0] == counts[1]


def test_no_divergent_branch_for_positive_shape(bump):
    p = perturbed.Problem(a=-1.0, b=1.0, alpha=50.0, psi=bump)
    probe = perturbed.divergent_branch_probe(p, [0.1, 0.05])
    assert not probe["threshold_reached"]
    assert all(row["n_negative"] == 0 for row in probe["rows"])


def test_domain_errors(coupled_problem):
    with pytest.raises(ValueError):
        perturbed.perturbed_determinant(coupled_problem, 1.5, 10.0)
    with pytest.raises(ValueError):
        perturbed.perturbed_spectrum(coupled_problem, 0.05, (10.0, 10.0))
    with pytest.raises(ValueError):
        perturbed.Problem(a=1.0, b=2.0)
    with pytest.raises(ValueError):
        perturbed.Problem(a=-1.0, b=1.0, bc_left="weird")
