"""Independent reference implementations used only by the test suite.

Each oracle is deliberately naive: explicit loops, exact arithmetic or an
external solver, never the package code it is compared against.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def fock_vector(alpha: complex, cutoff: int = 40) -> np.ndarray:
    """Truncated Fock amplitudes ``e^{-|a|^2/2} a^n / sqrt(n!)`` by recurrence."""
    v = np.zeros(cutoff + 1, dtype=complex)
    v[0] = math.exp(-abs(alpha) ** 2 / 2)
    for k in range(1, cutoff + 1):
        v[k] = v[k - 1] * alpha / math.sqrt(k)
    return v


def fock_inner(a: complex, b: complex, cutoff: int = 40) -> complex:
    return complex(np.vdot(fock_vector(a, cutoff), fock_vector(b, cutoff)))


def gf2_hash(seed, bits, m: int, n: int) -> list[int]:
    """Double-loop ``z_i = xor_j s[n - 1 - j + i] b_j`` (0-based seed indexing)."""
    out = []
    for i in range(m):
        acc = 0
        for j in range(n):
            acc ^= int(seed[n - 1 - j + i]) & int(bits[j])
        out.append(acc)
    return out


def binomial_cdf_exact(n: int, p: float, k: int) -> float:
    """``Pr[X <= k]`` by summing log-space terms with ``math.lgamma``."""
    if k < 0:
        return 0.0
    if k >= n:
        return 1.0
    lp, lq = math.log(p), math.log1p(-p)
    logs = [math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1) + i * lp + (n - i) * lq
            for i in range(k + 1)]
    top = max(logs)
    return math.exp(top) * math.fsum(math.exp(t - top) for t in logs)


def cvx_solve(block_sizes, objective, constraints, rhs) -> float:
    """Optimal value of ``max <C,X> s.t. <A_i,X> = b_i, X >= 0`` from cvxpy.

    ``objective`` and each constraint are lists of dense per-block matrices.
    """
    import cvxpy as cp

    xs = [cp.Variable((s, s), symmetric=True) for s in block_sizes]
    cons = [x >> 0 for x in xs]
    for a, b in zip(constraints, rhs):
        cons.append(sum(cp.trace(ab @ x) for ab, x in zip(a, xs)) == b)
    prob = cp.Problem(cp.Maximize(sum(cp.trace(cb @ x) for cb, x in zip(objective, xs))), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return float(prob.value)


def exact_sampler_distribution(make_sampler, cum, n_draws: int, frac_bits: int, max_words: int):
    """Exact law of the first ``n_draws`` outputs of an interval sampler.

    Explores every word sequence depth-first, replaying a fresh sampler on
    each prefix.  Returns ``(probabilities, unresolved_mass)`` where
    ``probabilities`` maps output tuples to the exact :class:`Fraction`
    mass of prefixes that completed within ``max_words`` words.
    """

    class Short(Exception):
        pass

    class Scripted:
        def __init__(self, words):
            self.words, self.pos, self.consumed = words, 0, 0

        def take(self, k):
            if self.pos == len(self.words):
                raise Short
            self.consumed += k
            self.pos += 1
            return self.words[self.pos - 1]

    probs: dict[tuple, Fraction] = {}
    lost = Fraction(0)
    stack = [()]
    base = 1 << frac_bits
    while stack:
        words = stack.pop()
        sampler = make_sampler(Scripted(list(words)))
        try:
            out = tuple(sampler.draw(cum) for _ in range(n_draws))
        except Short:
            if len(words) == max_words:
                lost += Fraction(1, base ** len(words))
            else:
                stack.extend(words + (w,) for w in range(base))
            continue
        probs[out] = probs.get(out, Fraction(0)) + Fraction(1, base ** len(words))
    return probs, lost


def random_explicit_model(rng: np.random.Generator, n_states: int | None = None):
    """Random projective model on C^2 (Bob) x C^2 (adversary).

    Returns ``(states, bob, eve)`` with unit state vectors in C^4, Bob's
    outcome-0 projectors ``P_y (x) 1`` for ``y in {0, 1}`` and the guess-0
    projector ``1 (x) Q``.
    """
    def unit(d):
        v = rng.normal(size=d) + 1j * rng.normal(size=d)
        return v / np.linalg.norm(v)

    def rank_one():
        v = unit(2)
        return np.outer(v, v.conj())

    n_states = n_states or int(rng.integers(2, 5))
    states = [unit(4) for _ in range(n_states)]
    bob = {y: np.kron(rank_one(), np.eye(2)) for y in (0, 1)}
    eve = np.kron(np.eye(2), rank_one())
    return states, bob, eve


def model_statistics(states, bob) -> np.ndarray:
    """``P[b, x, y]`` of an explicit model."""
    p0 = np.array([[np.real(s.conj() @ bob[y] @ s) for y in (0, 1)] for s in states])
    return np.stack([p0, 1 - p0])


def model_gram(states) -> np.ndarray:
    return np.array([[np.vdot(a, b) for b in states] for a in states])
