import numpy as np
import pytest

from oracles import model_gram, model_statistics, random_explicit_model
from reference import CERT_L2, PG_FULL, STALL_TOL, TABLE_WIN
from sdqre.constellation import Constellation
from sdqre.pm_hierarchy import (CapacityError, DualCertificate, SolverError, build_full_dist_sdp, build_guessing_sdp,
                                constraint_residual, distribution_witness, explicit_guessing_probability,
                                explicit_moment_matrix, full_dist_guessing, guessing_bound, monomials,
                                objective_value, realify, recheck_certificate, score_weights)


def _weights(q, win):
    nx, ny = q.shape
    return score_weights({(x, y): q[x, y] for x in range(nx) for y in range(ny)},
                         {(x, y): int(win[x, y]) for x in range(nx) for y in range(ny)})


def test_monomials():
    assert monomials(1) == [((), 0), ((0,), 0), ((1,), 0), ((), 1)]
    words = monomials(2)
    assert ((0, 0), 0) not in words
    assert ((0, 1), 0) in words and ((0,), 1) in words
    assert len(set(words)) == len(words)


def test_identical_states_certify_nothing():
    g = np.ones((4, 4), dtype=complex)
    w = _weights(np.full((4, 2), 1 / 8), TABLE_WIN)
    cert = guessing_bound(g, w, 0.5, 2)
    assert cert.bound(0.5) == pytest.approx(1.0, abs=1e-6)
    assert cert.bound(0.5) == pytest.approx(cert.primal_objective, abs=1e-6)


def test_orthogonal_states_deterministic_game():
    g = np.eye(2, dtype=complex)
    w = _weights(np.array([[0.5], [0.5]]), np.array([[0], [1]]))
    cert = guessing_bound(g, w, 1.0, 2)
    assert cert.bound(1.0) == pytest.approx(1.0, abs=1e-6)


def test_published_certificate(published_game, cert_l2):
    nu = published_game.omega - 0.0019
    assert cert_l2.bound(nu) < 1 - 1e-3
    assert cert_l2.bound(nu) == pytest.approx(CERT_L2["bound"], abs=1e-5)
    assert cert_l2.lam[1] == pytest.approx(CERT_L2["lam1"], abs=1e-3)
    assert 0.5 <= cert_l2.bound(nu) <= 1 + 1e-9
    assert cert_l2.residual <= 1e-8


def test_certificate_matches_primal_at_constraint(published_game, cert_l1, cert_l2):
    nu = published_game.omega - 0.0019
    # degenerate optimum: the solver stops with a small primal-dual gap
    for cert in (cert_l1, cert_l2):
        assert abs(cert.bound(nu) - cert.primal_objective) <= STALL_TOL


def test_lambda_envelope(cert_l1, cert_l2):
    for cert in (cert_l1, cert_l2):
        assert np.all(np.isfinite(cert.lam)) and np.isfinite(cert.c)
        assert max(abs(v) for v in cert.lam) <= 1e3
        assert cert.lam_min <= cert.lam_max


def test_affine_bound_property(published_gram, published_game):
    w = published_game.weights()
    om, d = published_game.omega, published_game.delta
    grid = om + d * np.linspace(-5, 5, 5)
    certs = [guessing_bound(published_gram, w, nu, 1) for nu in grid]
    for c1 in certs:
        for nu2, c2 in zip(grid, certs):
            # stalled primal iterates are slightly infeasible, so compare within the stall gap
            assert c1.bound(nu2) >= c2.primal_objective - STALL_TOL


def test_monotone_in_level(published_game, cert_l1, cert_l2, witness_l1, witness_l2, published_dist):
    nu = published_game.omega - 0.0019
    assert cert_l2.bound(nu) <= cert_l1.bound(nu) + 1e-7
    assert witness_l2.value(published_dist) <= witness_l1.value(published_dist) + STALL_TOL


def test_certificate_round_trip(published_gram, published_game, cert_l2):
    back = DualCertificate.from_dict(cert_l2.to_dict())
    assert back == cert_l2
    chk = recheck_certificate(published_gram, published_game.weights(), back)
    assert chk.residual <= 1e-8
    bad = DualCertificate(back.c - 1e-3, back.lam, back.nu, back.level, back.residual, dual=back.dual)
    with pytest.raises(ValueError):
        recheck_certificate(published_gram, published_game.weights(), bad)
    with pytest.raises(ValueError):
        recheck_certificate(published_gram, published_game.weights(), DualCertificate(1.0, (0.0, 0.0), back.nu, 2, 0.0))


def test_full_distribution_feasible(published_gram, published_dist, witness_l1, witness_l2):
    assert build_full_dist_sdp(published_gram, published_dist, 2).consistent
    for lvl, wit in ((1, witness_l1), (2, witness_l2)):
        assert wit.residual <= 1e-8
        assert wit.value(published_dist) == pytest.approx(PG_FULL[lvl], abs=STALL_TOL)
        assert abs(wit.value(published_dist) - wit.primal_objective) <= STALL_TOL


def test_witness_bounds_perturbed_distributions(published_gram, published_dist, witness_l1):
    flat = np.full_like(published_dist.table, 0.5)
    for t in (0.1, 0.3, 0.6):
        p = (1 - t) * published_dist.table + t * flat
        sol = full_dist_guessing(published_gram, p, 1)
        assert witness_l1.value(p) >= sol.primal_objective - (1e-6 if sol.optimal else STALL_TOL)


def test_deterministic_device_is_guessable(published_gram):
    p = np.zeros((2, 4, 2))
    p[0] = 1
    assert distribution_witness(published_gram, p, 2).value(p) == pytest.approx(1.0, abs=1e-6)


def test_vacuum_witness():
    g = Constellation.qpsk(0.0).gram()
    p = np.full((2, 4, 2), 0.5)
    assert distribution_witness(g, p, 2).value(p) >= 1 - 1e-6


def test_impossible_statistics_reported_infeasible(published_gram, published_dist):
    # perfect discrimination of two states whose overlap is ~0.97
    p = published_dist.table.copy()
    p[:, 0, 0] = (1, 0)
    p[:, 2, 0] = (0, 1)
    assert full_dist_guessing(published_gram, p, 1).status.value == "infeasible"
    with pytest.raises(SolverError):
        distribution_witness(published_gram, p, 2)


@pytest.mark.parametrize("seed", range(10))
def test_explicit_model_is_feasible_point(seed):
    rng = np.random.default_rng(seed)
    states, bob, eve = random_explicit_model(rng)
    gram = model_gram(states)
    gamma = explicit_moment_matrix(states, bob, eve, 2)
    mp = build_full_dist_sdp(gram, model_statistics(states, bob), 2)
    assert constraint_residual(mp, gamma) <= 1e-10
    assert np.linalg.eigvalsh(realify(gamma)).min() >= -1e-10
    # realified evaluation equals the complex-model guessing probability
    assert objective_value(mp, gamma) == pytest.approx(explicit_guessing_probability(states[0], bob[0], eve),
                                                       abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_guessing_bound_dominates_explicit_model(seed):
    rng = np.random.default_rng(50 + seed)
    states, bob, eve = random_explicit_model(rng)
    p = model_statistics(states, bob)
    q = rng.random((len(states), 2))
    q /= q.sum()
    win = rng.integers(0, 2, q.shape)
    nu = float(sum(q[x, y] * p[win[x, y], x, y] for x in range(len(states)) for y in range(2)))
    cert = guessing_bound(model_gram(states), _weights(q, win), nu, 2)
    assert cert.bound(nu) >= explicit_guessing_probability(states[0], bob[0], eve) - 1e-7


def test_realify_is_multiplicative(rng):
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    b = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    assert np.allclose(realify(a @ b), realify(a) @ realify(b))
    h = a + a.conj().T
    assert np.allclose(np.sort(np.repeat(np.linalg.eigvalsh(h), 2)), np.linalg.eigvalsh(realify(h)))


def test_capacity_and_validation(published_gram):
    w = _weights(np.full((4, 2), 1 / 8), TABLE_WIN)
    with pytest.raises(CapacityError):
        build_guessing_sdp(published_gram, w, 0.5, 4)
    with pytest.raises(CapacityError):
        build_guessing_sdp(published_gram, w, 0.5, 0)
    with pytest.raises(CapacityError):
        build_guessing_sdp(Constellation.qam16(1.0).gram(), w, 0.5, 3)
    with pytest.raises(ValueError):
        build_guessing_sdp(published_gram, w, 1.5, 2)
    with pytest.raises(ValueError):
        build_guessing_sdp(published_gram * 2, w, 0.5, 2)
    with pytest.raises(ValueError):
        build_full_dist_sdp(published_gram, np.full((2, 4, 2), 0.7), 2)
