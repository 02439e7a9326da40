"""Moment-matrix relaxations for prepare-and-measure guessing probabilities.

The relaxation works with the Gram matrix of the vectors ``u |phi_x>`` where
``x`` runs over the prepared states and ``u`` over short operator words in

* ``A_y = M_{0|y}``: Bob's outcome-0 projector for setting ``y``
  (``M_{1|y} = 1 - A_y``), and
* ``E = Pi_0``: the adversary's guess-0 projector (``Pi_1 = 1 - E``),
  which commutes with every ``A_y``.

Projectivity is imposed on both.  Because the Hilbert space is unbounded,
any POVM model dilates to a projective one with the same overlaps and
statistics, so the relaxation still upper-bounds POVM strategies.

Entries of the moment matrix that correspond to the same reduced word are
identified, overlaps ``<phi_x|phi_x'>`` are pinned to the trusted source, and
the complex Hermitian matrix is embedded in a real symmetric one of twice the
size.  The resulting :class:`~sdqre.sdp_core.SdpProblem` is solved by
:func:`sdqre.sdp_core.solve`, and every bound reported here comes from a dual
vector that has been re-checked with :func:`sdqre.sdp_core.verify_dual_bound`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from . import sdp_core
from .sdp_core import SdpProblem, SolverOptions, SparseSym, Status

__all__ = [
    "Word",
    "CapacityError",
    "SolverError",
    "MomentProblem",
    "DualCertificate",
    "DistributionWitness",
    "monomials",
    "build_guessing_sdp",
    "build_full_dist_sdp",
    "guessing_bound",
    "recheck_certificate",
    "distribution_witness",
    "full_dist_guessing",
    "explicit_moment_matrix",
    "realify",
    "score_weights",
]

Word = tuple[tuple[int, ...], int]
IDENTITY: Word = ((), 0)
MAX_LEVEL = 3
MAX_ROWS = 160


class CapacityError(ValueError):
    """The requested relaxation exceeds the supported size."""


class SolverError(RuntimeError):
    """The SDP solve failed; ``solution`` carries the diagnostics."""

    def __init__(self, msg, solution=None):
        super().__init__(msg)
        self.solution = solution


# ---------------------------------------------------------------------------
# operator words


def _reduce(settings: Sequence[int]) -> tuple[int, ...]:
    out: list[int] = []
    for s in settings:
        if not out or out[-1] != s:
            out.append(s)
    return tuple(out)


def adjoint(w: Word) -> Word:
    return tuple(reversed(w[0])), w[1]


def product(u: Word, v: Word) -> Word:
    """Reduced form of ``u^dag v``."""
    return _reduce(tuple(reversed(u[0])) + v[0]), u[1] | v[1]


def monomials(level: int, settings: Sequence[int] = (0, 1)) -> list[Word]:
    """All reduced words of length at most ``level``, shortest first."""
    out: list[Word] = []
    for length in range(level + 1):
        for e in (0, 1):
            k = length - e
            if k < 0:
                continue
            for seq in itertools.product(settings, repeat=k):
                if _reduce(seq) == seq:
                    out.append((seq, e))
    return out


def word_name(w: Word) -> str:
    parts = [f"A{y}" for y in w[0]] + (["E"] if w[1] else [])
    return "*".join(parts) or "1"


# ---------------------------------------------------------------------------
# linear functionals on the realified moment matrix


class _Layout:
    """Rows ``(u, x)`` of the moment matrix and the equivalence classes of its entries."""

    def __init__(self, n_states: int, level: int, settings: Sequence[int]):
        if level < 1 or level > MAX_LEVEL:
            raise CapacityError(f"level {level} outside 1..{MAX_LEVEL}")
        self.n_states = n_states
        self.level = level
        self.settings = tuple(settings)
        self.words = monomials(level, self.settings)
        self.rows = [(u, x) for u in self.words for x in range(n_states)]
        self.n = len(self.rows)
        if self.n > MAX_ROWS:
            raise CapacityError(f"{self.n} moment rows exceed the limit of {MAX_ROWS}")
        self.row_index = {r: i for i, r in enumerate(self.rows)}
        classes: dict[tuple, list[tuple[int, int, int]]] = {}
        for a in range(self.n):
            ua, xa = self.rows[a]
            for b in range(a, self.n):
                ub, xb = self.rows[b]
                w = product(ua, ub)
                key = (xa, w, xb)
                conj = (xb, adjoint(w), xa)
                canon = min(key, conj)
                classes.setdefault(canon, []).append((a, b, 1 if key == canon else -1))
        self.classes = classes

    def first(self, key) -> tuple[int, int, int]:
        return self.classes[key][0]

    def canonical(self, x: int, w: Word, x2: int) -> tuple[tuple, int]:
        key = (x, w, x2)
        conj = (x2, adjoint(w), x)
        return (key, 1) if key <= conj else (conj, -1)

    # functionals are dicts over upper-triangular X entries: value = sum coef * X[p, q]
    def re(self, a: int, b: int, coef: float = 1.0) -> dict:
        n = self.n
        out: dict = {}
        _acc(out, a, b, coef / 2)
        _acc(out, n + a, n + b, coef / 2)
        return out

    def im(self, a: int, b: int, coef: float = 1.0) -> dict:
        n = self.n
        out: dict = {}
        if a == b:
            return out
        _acc(out, n + a, b, coef / 2)
        _acc(out, a, n + b, -coef / 2)
        return out

    def moment_re(self, x: int, w: Word, x2: int, coef: float = 1.0) -> dict:
        key, _ = self.canonical(x, w, x2)
        a, b, _ = self.first(key)
        return self.re(a, b, coef)


def _acc(d: dict, p: int, q: int, c: float) -> None:
    if p > q:
        p, q = q, p
    d[(p, q)] = d.get((p, q), 0.0) + c


def _merge(*fs: dict) -> dict:
    out: dict = {}
    for f in fs:
        for k, v in f.items():
            out[k] = out.get(k, 0.0) + v
    return out


def _to_sparse(f: dict) -> SparseSym:
    # <A, X> = sum coef X[p,q]; an upper entry (p,q,v) with p<q contributes 2 v X[p,q]
    return SparseSym.from_entries((0, p, q, c if p == q else c / 2) for (p, q), c in f.items() if c != 0.0)


def _structural(layout: _Layout) -> list[dict]:
    """Equalities identifying entries of each class, plus reality of self-adjoint classes."""
    rows: list[dict] = []
    for key, members in layout.classes.items():
        x, w, x2 = key
        self_adjoint = key == (x2, adjoint(w), x)
        a0, b0, s0 = members[0]
        for a, b, s in members[1:]:
            rows.append(_merge(layout.re(a, b), layout.re(a0, b0, -1.0)))
        if self_adjoint or any(a == b for a, b, _ in members):
            for a, b, _ in members:
                if a != b:
                    rows.append(layout.im(a, b))
        else:
            for a, b, s in members[1:]:
                rows.append(_merge(layout.im(a, b, s), layout.im(a0, b0, -s0)))
    return rows


def _overlaps(layout: _Layout, gram: np.ndarray):
    rows, rhs, tags = [], [], []
    for x in range(layout.n_states):
        for x2 in range(x, layout.n_states):
            key, s = layout.canonical(x, IDENTITY, x2)
            a, b, s0 = layout.first(key)
            g = complex(gram[x, x2])
            rows.append(layout.re(a, b))
            rhs.append(g.real)
            tags.append(("overlap_re", x, x2))
            if x != x2:
                rows.append(layout.im(a, b, s0 * s))
                rhs.append(g.imag)
                tags.append(("overlap_im", x, x2))
    return rows, rhs, tags


def _objective(layout: _Layout, gen_setting: int, gen_state: int) -> dict:
    # sum_b <M_{b|0} Pi_b> = 1 - <A> - <E> + 2 <A E>, with 1 = <phi|phi>
    y, x = gen_setting, gen_state
    a = ((y,), 0)
    e = ((), 1)
    ae = ((y,), 1)
    return _merge(
        layout.moment_re(x, IDENTITY, x, 1.0),
        layout.moment_re(x, a, x, -1.0),
        layout.moment_re(x, e, x, -1.0),
        layout.moment_re(x, ae, x, 2.0),
    )


def _prune(funcs: list[dict], rhs: list[float], tol: float = 1e-9):
    """Drop rows linearly dependent on earlier ones; report inconsistency."""
    idx: dict = {}
    for f in funcs:
        for k in f:
            idx.setdefault(k, len(idx))
    mat = np.zeros((len(idx), len(funcs)))
    for j, f in enumerate(funcs):
        for k, v in f.items():
            mat[idx[k], j] = v
    r = sla.qr(mat, mode="r", overwrite_a=False)[0]
    diag = np.abs(np.diag(r)) if r.shape[0] >= r.shape[1] else np.abs(
        np.concatenate([np.diag(r), np.zeros(r.shape[1] - r.shape[0])]))
    scale = max(float(diag.max(initial=0.0)), 1.0)
    keep = diag > tol * scale
    # consistency of dropped rows
    kept = np.flatnonzero(keep)
    dropped = np.flatnonzero(~keep)
    consistent = True
    if len(dropped):
        a = mat[:, kept]
        coef, *_ = np.linalg.lstsq(a, mat[:, dropped], rcond=None)
        pred = np.asarray(rhs)[kept] @ coef
        consistent = bool(np.all(np.abs(pred - np.asarray(rhs)[dropped]) <= 1e-7))
    return keep, consistent


# ---------------------------------------------------------------------------
# problem containers


@dataclass
class MomentProblem:
    """A built relaxation together with the bookkeeping needed to read its duals."""

    kind: str
    level: int
    n_states: int
    settings: tuple[int, ...]
    words: list[Word]
    sdp: SdpProblem
    tags: list[tuple]
    gram: np.ndarray
    consistent: bool = True
    dropped: list[tuple] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.words) * self.n_states

    def index_of(self, tag: tuple) -> int | None:
        try:
            return self.tags.index(tag)
        except ValueError:
            return None

    def trace_bound(self) -> float:
        """Upper bound on the trace of any feasible (realified) moment matrix."""
        return 2.0 * self.size


def _assemble(layout: _Layout, obj: dict, labelled: list[tuple[dict, float, tuple]],
              gram: np.ndarray, kind: str, extra: dict) -> MomentProblem:
    funcs = [f for f, _, _ in labelled]
    rhs = [r for _, r, _ in labelled]
    tags = [t for _, _, t in labelled]
    struct = _structural(layout)
    funcs += struct
    rhs += [0.0] * len(struct)
    tags += [("structural",)] * len(struct)
    keep, consistent = _prune(funcs, rhs)
    dropped = [t for t, k in zip(tags, keep) if not k and t[0] != "structural"]
    funcs = [f for f, k in zip(funcs, keep) if k]
    rhs = [r for r, k in zip(rhs, keep) if k]
    tags = [t for t, k in zip(tags, keep) if k]
    sdp = SdpProblem((2 * layout.n,), _to_sparse(obj), tuple(_to_sparse(f) for f in funcs), np.array(rhs))
    return MomentProblem(kind, layout.level, layout.n_states, layout.settings, layout.words, sdp, tags,
                         np.array(gram, dtype=complex), consistent, dropped, extra)


def _check_gram(gram) -> np.ndarray:
    g = np.asarray(gram, dtype=complex)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError("Gram matrix must be square")
    if np.max(np.abs(g - g.conj().T)) > 1e-10 or np.max(np.abs(np.diag(g) - 1)) > 1e-10:
        raise ValueError("Gram matrix must be Hermitian with unit diagonal")
    if np.linalg.eigvalsh(g)[0] < -1e-10:
        raise ValueError("Gram matrix is not positive semidefinite")
    return g


def score_weights(q: Mapping[tuple[int, int], float], winning: Mapping[tuple[int, int], int]) -> dict:
    """Scoring coefficients ``w[b, x, y] = q(x, y) [b == b_xy]``."""
    return {(b, x, y): (qq if winning[(x, y)] == b else 0.0)
            for (x, y), qq in q.items() for b in (0, 1) if qq > 0}


def build_guessing_sdp(gram, weights: Mapping[tuple[int, int, int], float], nu: float, level: int = 2,
                       *, gen_state: int = 0, gen_setting: int = 0,
                       settings: Sequence[int] | None = None) -> MomentProblem:
    """Relaxation maximising the guessing probability at a fixed game score.

    ``weights`` maps ``(b, x, y)`` to scoring coefficients; the single
    statistical constraint is ``sum_{b,x,y} w <phi_x|M_{b|y}|phi_x> = nu``.
    """
    if not 0.0 <= nu <= 1.0:
        raise ValueError("nu must lie in [0, 1]")
    g = _check_gram(gram)
    if settings is None:
        settings = sorted({y for (_, _, y) in weights} | {gen_setting})
    layout = _Layout(len(g), level, settings)
    func: dict = {}
    const = 0.0
    for (b, x, y), w in weights.items():
        if w == 0.0:
            continue
        a = ((y,), 0)
        if b == 0:
            func = _merge(func, layout.moment_re(x, a, x, w))
        else:
            const += w
            func = _merge(func, layout.moment_re(x, a, x, -w))
    if not func:
        raise ValueError("score weights are all zero")
    ov, ov_rhs, ov_tags = _overlaps(layout, g)
    labelled = [(func, nu - const, ("score",))] + list(zip(ov, ov_rhs, ov_tags))
    obj = _objective(layout, gen_setting, gen_state)
    return _assemble(layout, obj, labelled, g, "game",
                     {"nu": nu, "score_const": const, "weights": dict(weights)})


def build_full_dist_sdp(gram, dist, level: int = 2, *, gen_state: int = 0,
                        gen_setting: int = 0) -> MomentProblem:
    """Relaxation constrained by the whole table ``P(b|x,y)``.

    ``dist`` is an array ``P[b, x, y]`` (or a
    :class:`~sdqre.honest_model.ConditionalDistribution`).
    """
    p = np.asarray(getattr(dist, "table", dist), dtype=float)
    if p.ndim != 3 or p.shape[0] != 2:
        raise ValueError("distribution must have shape (2, n_x, n_y)")
    if np.max(np.abs(p.sum(axis=0) - 1)) > 1e-9:
        raise ValueError("distribution rows must sum to one")
    g = _check_gram(gram)
    if p.shape[1] != len(g):
        raise ValueError("distribution and Gram matrix disagree on the number of states")
    settings = tuple(range(p.shape[2]))
    layout = _Layout(len(g), level, settings)
    labelled = []
    for x in range(p.shape[1]):
        for y in settings:
            labelled.append((layout.moment_re(x, ((y,), 0), x), float(p[0, x, y]), ("stat", x, y)))
    ov, ov_rhs, ov_tags = _overlaps(layout, g)
    labelled += list(zip(ov, ov_rhs, ov_tags))
    obj = _objective(layout, gen_setting, gen_state)
    return _assemble(layout, obj, labelled, g, "full", {"dist": p})


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class DualCertificate:
    """Affine bound ``p_guess <= c + lam . (1 - p_win, p_win)`` valid for every score."""

    c: float
    lam: tuple[float, float]
    nu: float
    level: int
    residual: float
    primal_objective: float = float("nan")
    dual: tuple[float, ...] = field(default=(), repr=False, compare=False)

    def bound(self, p) -> float:
        """Evaluate at a score distribution ``(p_lose, p_win)`` or at a win probability."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if p.size == 1:
            p = np.array([1 - p[0], p[0]])
        return float(self.c + self.lam[0] * p[0] + self.lam[1] * p[1])

    @property
    def lam_min(self) -> float:
        return min(self.lam)

    @property
    def lam_max(self) -> float:
        return max(self.lam)

    def to_dict(self) -> dict:
        return {"c": self.c, "lam": list(self.lam), "nu": self.nu, "level": self.level,
                "residual": self.residual, "primal_objective": self.primal_objective,
                "dual": list(self.dual)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DualCertificate":
        return cls(float(d["c"]), tuple(float(v) for v in d["lam"]), float(d["nu"]), int(d["level"]),
                   float(d["residual"]), float(d.get("primal_objective", float("nan"))),
                   tuple(float(v) for v in d.get("dual", ())))


@dataclass(frozen=True)
class DistributionWitness:
    """Linear bound ``p_guess <= xi0 + sum xi[b, x, y] P(b|x,y)``."""

    xi0: float
    xi: np.ndarray
    level: int
    residual: float
    primal_objective: float = float("nan")

    def value(self, dist) -> float:
        p = np.asarray(getattr(dist, "table", dist), dtype=float)
        return float(self.xi0 + np.sum(self.xi * p))


def _solve_checked(mp: MomentProblem, options: SolverOptions | None):
    if not mp.consistent:
        raise SolverError("constraints are inconsistent (statistics incompatible with the overlaps)")
    sol = sdp_core.solve(mp.sdp, options)
    if sol.status is not Status.OPTIMAL:
        if sol.status is Status.NUMERICAL_FAILURE and np.all(np.isfinite(sol.dual)) and len(sol.dual):
            chk = sdp_core.verify_dual_bound(mp.sdp, sol.dual)
            # a near-converged dual is still a valid bound after the residual correction
            if sol.dual_infeasibility < 1e-6 and chk.residual <= 1e-8:
                return sol, chk
        raise SolverError(f"SDP solve ended with status {sol.status.value}: {sol.message}", sol)
    chk = sdp_core.verify_dual_bound(mp.sdp, sol.dual)
    return sol, chk


def _dual_value(mp: MomentProblem, y: np.ndarray, tag: tuple) -> float:
    i = mp.index_of(tag)
    return 0.0 if i is None else float(y[i])


def guessing_bound(gram, weights, nu: float, level: int = 2, *, options: SolverOptions | None = None,
                   **kw) -> DualCertificate:
    """Solve the game-constrained relaxation and return its verified affine certificate.

    A slack-eigenvalue residual ``r`` is absorbed into ``c`` as
    ``r * trace_bound``, so the returned affine function is a valid bound
    even when the dual is only approximately feasible.
    """
    mp = build_guessing_sdp(gram, weights, nu, level, **kw)
    sol, chk = _solve_checked(mp, options)
    y = sol.dual
    ls = _dual_value(mp, y, ("score",))
    const = mp.extra["score_const"]
    # bound = ls * (nu - const) + (rest);  written as c + ls * p_win
    rest = chk.bound - ls * (nu - const)
    c = rest - ls * const + chk.residual * mp.trace_bound()
    return DualCertificate(c=float(c), lam=(0.0, float(ls)), nu=float(nu), level=level,
                           residual=chk.residual, primal_objective=sol.primal_objective,
                           dual=tuple(float(v) for v in y))


def recheck_certificate(gram, weights, cert: DualCertificate, **kw) -> sdp_core.DualCheck:
    """Re-verify a stored certificate against a freshly built relaxation, without solving.

    Raises ``ValueError`` when the stored dual does not fit the rebuilt
    problem or does not reproduce ``(c, lam)``.
    """
    mp = build_guessing_sdp(gram, weights, cert.nu, cert.level, **kw)
    y = np.asarray(cert.dual, dtype=float)
    if y.shape != (mp.sdp.n_constraints,):
        raise ValueError("certificate carries no dual vector for this problem")
    chk = sdp_core.verify_dual_bound(mp.sdp, y)
    ls = _dual_value(mp, y, ("score",))
    c = chk.bound - ls * cert.nu + chk.residual * mp.trace_bound()
    if abs(ls - cert.lam[1]) > 1e-12 * max(1.0, abs(ls)) or abs(c - cert.c) > 1e-9:
        raise ValueError("stored dual does not reproduce the certificate")
    return chk


def distribution_witness(gram, dist, level: int = 2, *, options: SolverOptions | None = None,
                         **kw) -> DistributionWitness:
    """Verified dual of the full-distribution relaxation as a linear witness."""
    mp = build_full_dist_sdp(gram, dist, level, **kw)
    sol, chk = _solve_checked(mp, options)
    y = sol.dual
    p = mp.extra["dist"]
    xi = np.zeros_like(p)
    stat = 0.0
    for x in range(p.shape[1]):
        for yy in range(p.shape[2]):
            v = _dual_value(mp, y, ("stat", x, yy))
            xi[0, x, yy] = v
            stat += v * p[0, x, yy]
    xi0 = chk.bound - stat + chk.residual * mp.trace_bound()
    return DistributionWitness(float(xi0), xi, level, chk.residual, sol.primal_objective)


def full_dist_guessing(gram, dist, level: int = 2, *, options: SolverOptions | None = None, **kw):
    """Primal optimum of the full-distribution relaxation (``sdp_core.SdpSolution``)."""
    mp = build_full_dist_sdp(gram, dist, level, **kw)
    if not mp.consistent:
        return None
    return sdp_core.solve(mp.sdp, options)


# ---------------------------------------------------------------------------
# explicit models


def _word_operator(w: Word, bob: Mapping[int, np.ndarray], eve: np.ndarray) -> np.ndarray:
    d = eve.shape[0]
    op = np.eye(d, dtype=complex)
    for y in w[0]:
        op = op @ bob[y]
    if w[1]:
        op = op @ eve
    return op


def explicit_moment_matrix(states: Sequence[np.ndarray], bob: Mapping[int, np.ndarray], eve: np.ndarray,
                           level: int, settings: Sequence[int] = (0, 1)) -> np.ndarray:
    """Complex moment matrix ``<phi_x| u^dag v |phi_x'>`` of an explicit projective model."""
    layout = _Layout(len(states), level, settings)
    vecs = []
    for u, x in layout.rows:
        vecs.append(_word_operator(u, bob, eve) @ np.asarray(states[x], dtype=complex))
    v = np.array(vecs)
    return v.conj() @ v.T


def realify(gamma: np.ndarray) -> np.ndarray:
    """Real symmetric embedding ``[[Re, -Im], [Im, Re]]`` of a Hermitian matrix."""
    r, i = gamma.real, gamma.imag
    return np.block([[r, -i], [i, r]])


def explicit_guessing_probability(state0: np.ndarray, bob0: np.ndarray, eve: np.ndarray) -> float:
    """``sum_b <phi|M_{b|0} Pi_b|phi>`` for a binary Bob measurement and binary guess."""
    d = len(state0)
    ident = np.eye(d)
    m = [bob0, ident - bob0]
    pi = [eve, ident - eve]
    v = np.asarray(state0, dtype=complex)
    return float(sum(np.real(v.conj() @ m[b] @ pi[b] @ v) for b in (0, 1)))


def constraint_residual(mp: MomentProblem, gamma: np.ndarray) -> float:
    """Max violation of ``mp``'s equality constraints by a complex moment matrix."""
    x = realify(gamma)
    vals = np.array([sum(np.sum(m * x) for m in a.to_dense(mp.sdp.block_sizes)) for a in mp.sdp.constraints])
    return float(np.max(np.abs(vals - mp.sdp.rhs)))


def objective_value(mp: MomentProblem, gamma: np.ndarray) -> float:
    x = realify(gamma)
    return float(sum(np.sum(m * x) for m in mp.sdp.objective.to_dense(mp.sdp.block_sizes))) \
        + mp.sdp.objective_offset


def certificate_slack_check(mp: MomentProblem, y: np.ndarray):
    return sdp_core.verify_dual_bound(mp.sdp, y)
