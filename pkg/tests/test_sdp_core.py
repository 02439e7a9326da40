import numpy as np
import pytest

from oracles import cvx_solve
from sdqre.sdp_core import (SdpProblem, SolverOptions, SparseSym, Status, dump_sdpa, load_sdpa, solve,
                            verify_dual_bound)


def _sym(rng, n):
    a = rng.normal(size=(n, n))
    return (a + a.T) / 2


def random_problem(rng, n_blocks=None):
    """Feasible and bounded: a random PSD point fixes b, a trace row fixes the scale."""
    n_blocks = n_blocks or int(rng.integers(1, 3))
    sizes = [int(rng.integers(1, 9)) for _ in range(n_blocks)]
    x0 = []
    for s in sizes:
        g = rng.normal(size=(s, s))
        x0.append(g @ g.T + 0.1 * np.eye(s))
    m = int(rng.integers(1, 6))
    cons = [[np.eye(s) for s in sizes]] + [[_sym(rng, s) for s in sizes] for _ in range(m)]
    rhs = [sum(float(np.sum(a * x)) for a, x in zip(c, x0)) for c in cons]
    obj = [_sym(rng, s) for s in sizes]
    return sizes, obj, cons, rhs


def test_scalar_problem():
    p = SdpProblem.from_dense([np.array([[1.0]])], [[np.array([[1.0]])]], [0.7])
    s = solve(p)
    assert s.status is Status.OPTIMAL
    assert s.primal_objective == pytest.approx(0.7, abs=1e-7)
    assert s.dual_objective == pytest.approx(0.7, abs=1e-7)


def test_max_eigenvalue():
    p = SdpProblem.from_dense([np.diag([1.0, 3.0])], [[np.eye(2)]], [1.0])
    s = solve(p)
    assert s.optimal
    assert s.primal_objective == pytest.approx(3.0, abs=1e-6)


@pytest.mark.parametrize("seed", range(20))
def test_random_problems_match_oracle(seed):
    rng = np.random.default_rng(seed)
    sizes, obj, cons, rhs = random_problem(rng)
    p = SdpProblem.from_dense(obj, cons, rhs)
    s = solve(p)
    assert s.status is Status.OPTIMAL, s.message
    ref = cvx_solve(sizes, obj, cons, rhs)
    assert s.primal_objective == pytest.approx(ref, abs=1e-5, rel=1e-5)
    # solution invariants
    assert s.primal_infeasibility <= 1e-8 and s.dual_infeasibility <= 1e-8 and s.gap <= 1e-7
    assert s.dual_objective >= s.primal_objective - 1e-7
    for x in s.primal:
        assert np.linalg.eigvalsh(x).min() >= -1e-9


@pytest.mark.parametrize("seed", range(5))
def test_weak_duality_certificate(seed):
    rng = np.random.default_rng(100 + seed)
    p = SdpProblem.from_dense(*random_problem(rng)[1:])
    s = solve(p)
    chk = verify_dual_bound(p, s.dual)
    assert chk.residual <= 1e-7
    assert chk.bound >= s.primal_objective - 1e-7


def test_perturbed_dual_stays_feasible():
    p = SdpProblem.from_dense([np.diag([1.0, 3.0])], [[np.eye(2)]], [1.0])
    s = solve(p)
    base = verify_dual_bound(p, s.dual)
    up = verify_dual_bound(p, s.dual + np.array([10.0]))
    assert up.feasible
    assert up.bound > base.bound


def test_infeasible_dual_detected(rng):
    for _ in range(50):
        n = int(rng.integers(2, 6))
        c = _sym(rng, n)
        a = np.eye(n)
        # y * I - C has min eigenvalue y - lambda_max(C); pick y below it
        lam = np.linalg.eigvalsh(c).max()
        y = lam - rng.uniform(1e-6, 1.0)
        p = SdpProblem.from_dense([c], [[a]], [1.0])
        chk = verify_dual_bound(p, [y])
        assert not chk.feasible
        assert chk.residual == pytest.approx(lam - y, rel=1e-6)


def test_verify_never_accepts_negative_slack(rng):
    # dense eigensolver oracle on random duals
    for _ in range(100):
        sizes, obj, cons, rhs = random_problem(rng)
        p = SdpProblem.from_dense(obj, cons, rhs)
        y = rng.normal(size=len(cons)) * 3
        chk = verify_dual_bound(p, y)
        worst = min(np.linalg.eigvalsh(sum(yi * a[k] for yi, a in zip(y, cons)) - obj[k]).min()
                    for k in range(len(sizes)))
        if worst < -1e-8:
            assert not chk.feasible
        assert chk.residual == pytest.approx(max(0.0, -worst), abs=1e-9)


def test_dual_length_checked():
    p = SdpProblem.from_dense([np.eye(2)], [[np.eye(2)]], [1.0])
    with pytest.raises(ValueError):
        verify_dual_bound(p, [1.0, 2.0])


def test_infeasible_problem_reported():
    # trace(X) = -1 has no PSD solution
    p = SdpProblem.from_dense([np.eye(2)], [[np.eye(2)]], [-1.0])
    assert solve(p).status is Status.INFEASIBLE


def test_unbounded_problem_reported():
    # maximize X_11 subject only to X_22 = 1
    p = SdpProblem.from_dense([np.diag([1.0, 0.0])], [[np.diag([0.0, 1.0])]], [1.0])
    assert solve(p).status in (Status.UNBOUNDED, Status.NUMERICAL_FAILURE)
    assert solve(p).status is not Status.OPTIMAL


def test_iteration_limit_is_explicit():
    p = SdpProblem.from_dense([np.diag([1.0, 3.0])], [[np.eye(2)]], [1.0])
    s = solve(p, SolverOptions(max_iter=2))
    assert s.status is Status.NUMERICAL_FAILURE


def test_dimension_limit():
    p = SdpProblem.from_dense([np.eye(5)], [[np.eye(5)]], [1.0])
    s = solve(p, SolverOptions(max_dim=4))
    assert s.status is Status.NUMERICAL_FAILURE
    assert "exceeds" in s.message


def test_input_validation():
    with pytest.raises(ValueError):
        SdpProblem.from_dense([np.array([[0.0, 1.0], [0.0, 0.0]])], [[np.eye(2)]], [1.0])
    with pytest.raises(ValueError):
        SdpProblem.from_dense([np.eye(2)], [], [])
    with pytest.raises(ValueError):
        SdpProblem((0,), SparseSym.empty(), (SparseSym.empty(),), [0.0])
    with pytest.raises(ValueError):
        SdpProblem.from_dense([np.eye(2)], [[np.eye(2)]], [1.0, 2.0])


def test_deterministic():
    rng = np.random.default_rng(7)
    p = SdpProblem.from_dense(*random_problem(rng)[1:])
    a, b = solve(p), solve(p)
    assert a.primal_objective == b.primal_objective
    assert np.array_equal(a.dual, b.dual)


@pytest.mark.parametrize("scale", [0.01, 3.0, 250.0])
def test_objective_scaling(scale):
    rng = np.random.default_rng(8)
    p = SdpProblem.from_dense(*random_problem(rng)[1:])
    a = solve(p)
    b = solve(p.with_objective_scaled(scale))
    assert b.primal_objective == pytest.approx(scale * a.primal_objective, rel=1e-9, abs=1e-9 * scale)
    assert b.dual_objective == pytest.approx(scale * a.dual_objective, rel=1e-9, abs=1e-9 * scale)


def test_sdpa_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    sizes, obj, cons, rhs = random_problem(rng, n_blocks=2)
    p = SdpProblem.from_dense(obj, cons, rhs)
    path = tmp_path / "p.dat-s"
    dump_sdpa(p, path)
    q = load_sdpa(path)
    assert q.block_sizes == p.block_sizes
    assert np.array_equal(q.rhs, p.rhs)
    for a, b in zip((p.objective, *p.constraints), (q.objective, *q.constraints)):
        for ma, mb in zip(a.to_dense(p.block_sizes), b.to_dense(q.block_sizes)):
            assert np.array_equal(ma, mb)
    assert solve(q).primal_objective == solve(p).primal_objective


def test_sparse_sym_merges_duplicates():
    a = SparseSym.from_entries([(0, 1, 0, 2.0), (0, 0, 1, 1.0)])
    assert a.nnz == 1
    assert a.to_dense([2])[0][0, 1] == 3.0
