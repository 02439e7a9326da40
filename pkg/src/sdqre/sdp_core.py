"""Dense primal-dual interior-point solver for small block-diagonal SDPs.

Problems are in the form::

    maximize    <C, X>
    subject to  <A_i, X> = b_i,   i = 1..m
                X = diag(X_1, ..., X_k) >= 0

with dual::

    minimize    b . y
    subject to  Z = sum_i y_i A_i - C >= 0

Any dual-feasible ``y`` certifies ``<C, X> <= b . y`` for every primal
feasible ``X``; downstream code only ever relies on such verified duals.

The iteration is a Mehrotra predictor-corrector path-following method with the
HKM search direction and an infeasible start at scaled identities.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)

__all__ = [
    "SparseSym",
    "SdpProblem",
    "SdpSolution",
    "SolverOptions",
    "Status",
    "solve",
    "verify_dual_bound",
    "DualCheck",
    "dump_sdpa",
    "load_sdpa",
]


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True)
class SparseSym:
    """Symmetric block-diagonal matrix stored as upper-triangle triplets.

    Entry ``(blk, i, j, v)`` with ``i <= j`` sets ``A[blk][i, j] = A[blk][j, i] = v``.
    Duplicate entries are summed.
    """

    block: np.ndarray
    row: np.ndarray
    col: np.ndarray
    val: np.ndarray

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[int, int, int, float]]) -> "SparseSym":
        acc: dict[tuple[int, int, int], float] = {}
        for blk, i, j, v in entries:
            if i > j:
                i, j = j, i
            key = (int(blk), int(i), int(j))
            acc[key] = acc.get(key, 0.0) + float(v)
        keys = sorted(k for k, v in acc.items() if v != 0.0)
        if not keys:
            return cls.empty()
        arr = np.array(keys, dtype=np.int64)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], np.array([acc[k] for k in keys]))

    @classmethod
    def empty(cls) -> "SparseSym":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, np.zeros(0))

    @classmethod
    def from_dense(cls, mats: Sequence[np.ndarray], tol: float = 0.0) -> "SparseSym":
        entries = []
        for b, m in enumerate(mats):
            m = np.asarray(m, dtype=float)
            iu, ju = np.triu_indices(m.shape[0])
            for i, j in zip(iu, ju):
                if abs(m[i, j]) > tol:
                    entries.append((b, i, j, m[i, j]))
        return cls.from_entries(entries)

    @property
    def nnz(self) -> int:
        return len(self.val)

    def to_dense(self, block_sizes: Sequence[int]) -> list[np.ndarray]:
        mats = [np.zeros((s, s)) for s in block_sizes]
        for b, i, j, v in zip(self.block, self.row, self.col, self.val):
            mats[b][i, j] += v
            if i != j:
                mats[b][j, i] += v
        return mats

    def scaled(self, s: float) -> "SparseSym":
        return SparseSym(self.block, self.row, self.col, self.val * s)


@dataclass(frozen=True)
class SdpProblem:
    """``max <C, X>  s.t.  <A_i, X> = b_i, X >= 0`` over block-diagonal ``X``."""

    block_sizes: tuple[int, ...]
    objective: SparseSym
    constraints: tuple[SparseSym, ...]
    rhs: np.ndarray
    objective_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "block_sizes", tuple(int(s) for s in self.block_sizes))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "rhs", np.asarray(self.rhs, dtype=float).reshape(-1))
        if not self.constraints:
            raise ValueError("at least one constraint is required")
        if any(s < 1 for s in self.block_sizes):
            raise ValueError("block sizes must be positive")
        if len(self.rhs) != len(self.constraints):
            raise ValueError("rhs length does not match constraint count")
        for a in (self.objective, *self.constraints):
            if a.nnz and (a.block.max() >= len(self.block_sizes) or a.block.min() < 0):
                raise ValueError("entry refers to a missing block")
            if a.nnz:
                sizes = np.asarray(self.block_sizes)[a.block]
                if np.any(a.col >= sizes) or np.any(a.row < 0):
                    raise ValueError("entry outside its block")

    @classmethod
    def from_dense(cls, objective, constraints, rhs, *, tol: float = 1e-12) -> "SdpProblem":
        """Build from dense per-block matrices, checking symmetry to ``tol``."""
        def blocks(m):
            return [np.atleast_2d(np.asarray(b, dtype=float)) for b in (m if isinstance(m, (list, tuple)) else [m])]

        cb = blocks(objective)
        sizes = tuple(b.shape[0] for b in cb)
        mats = [cb] + [blocks(a) for a in constraints]
        for ms in mats:
            if tuple(b.shape[0] for b in ms) != sizes:
                raise ValueError("inconsistent block sizes")
            for b in ms:
                if b.shape[0] != b.shape[1] or np.max(np.abs(b - b.T), initial=0.0) > tol:
                    raise ValueError("coefficient matrices must be symmetric")
        return cls(
            sizes,
            SparseSym.from_dense(cb),
            tuple(SparseSym.from_dense(a) for a in mats[1:]),
            np.asarray(rhs, dtype=float),
        )

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    @property
    def dimension(self) -> int:
        return int(sum(self.block_sizes))

    def with_objective_scaled(self, s: float) -> "SdpProblem":
        return replace(self, objective=self.objective.scaled(s), objective_offset=self.objective_offset * s)


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-7
    max_iter: int = 200
    max_dim: int = 600
    step_fraction: float = 0.98
    infeas_tol: float = 1e-8


@dataclass
class SdpSolution:
    """Final iterates.  Infeasibilities and gap are measured after scaling the
    objective and every constraint row to unit Frobenius norm."""

    status: Status
    primal: list[np.ndarray]
    dual: np.ndarray
    slack: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    primal_infeasibility: float
    dual_infeasibility: float
    gap: float
    iterations: int
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclass(frozen=True)
class DualCheck:
    feasible: bool
    bound: float
    residual: float
    min_eigenvalues: tuple[float, ...] = field(default=())


# ---------------------------------------------------------------------------
# operator helpers on the assembled (single dense block-diagonal) matrix


class _Operator:
    """The linear map X -> (<A_i, X>)_i and its adjoint on an assembled matrix."""

    def __init__(self, p: SdpProblem):
        offs = np.concatenate([[0], np.cumsum(p.block_sizes)])
        self.n = int(offs[-1])
        self.m = p.n_constraints
        self.offsets = offs
        # full (both-triangle) entry lists per constraint, padded for batching
        rows, cols, vals, owners = [], [], [], []
        for k, a in enumerate(p.constraints):
            r, c, v = self._full(a)
            rows.append(r), cols.append(c), vals.append(v), owners.append(np.full(len(v), k))
        self.rows = np.concatenate(rows)
        self.cols = np.concatenate(cols)
        self.vals = np.concatenate(vals)
        self.owner = np.concatenate(owners)
        counts = np.bincount(self.owner, minlength=self.m)
        self.width = max(int(counts.max(initial=1)), 1)
        self.slot = np.zeros(len(self.vals), dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        order = np.argsort(self.owner, kind="stable")
        self.rows, self.cols, self.vals, self.owner = (
            self.rows[order], self.cols[order], self.vals[order], self.owner[order])
        self.slot = np.arange(len(self.vals)) - starts[self.owner]
        # padded arrays (m, width); pad value zero at (0, 0)
        self.prow = np.zeros((self.m, self.width), dtype=np.int64)
        self.pcol = np.zeros((self.m, self.width), dtype=np.int64)
        self.pval = np.zeros((self.m, self.width))
        self.prow[self.owner, self.slot] = self.rows
        self.pcol[self.owner, self.slot] = self.cols
        self.pval[self.owner, self.slot] = self.vals
        self.flat = self.rows * self.n + self.cols
        self.incidence = sp.csr_matrix((self.vals, (self.owner, np.arange(len(self.vals)))),
                                       shape=(self.m, len(self.vals)))

    def _full(self, a: SparseSym):
        gr = self.offsets[a.block] + a.row
        gc = self.offsets[a.block] + a.col
        off = gr != gc
        r = np.concatenate([gr, gc[off]])
        c = np.concatenate([gc, gr[off]])
        v = np.concatenate([a.val, a.val[off]])
        return r, c, v

    def dense(self, a: SparseSym) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        r, c, v = self._full(a)
        np.add.at(out, (r, c), v)
        return out

    def apply(self, x: np.ndarray) -> np.ndarray:
        """(<A_i, X>)_i"""
        return np.bincount(self.owner, weights=self.vals * x[self.rows, self.cols], minlength=self.m)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """sum_i y_i A_i"""
        flat = np.bincount(self.flat, weights=self.vals * y[self.owner], minlength=self.n * self.n)
        return flat.reshape(self.n, self.n)

    def schur(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        """M_ij = tr(A_i X A_j W)."""
        # (X A_j W)[p, q] = sum_f v_f X[p, r_f] W[s_f, q]
        xs = x[:, self.prow].transpose(1, 0, 2) * self.pval[:, None, :]  # (m, n, w)
        ws = w[self.pcol]  # (m, w, n)
        b = np.matmul(xs, ws)  # (m, n, n)
        # M_ij = sum_e u_e B_j[p_e, q_e] with e ranging over A_i; B_j[p,q] gathered
        g = b[:, self.rows, self.cols]  # (m_j, nnz)
        mij = np.asarray(self.incidence @ g.T)
        return 0.5 * (mij + mij.T)


def _assemble(mats: Sequence[np.ndarray]) -> np.ndarray:
    return sla.block_diag(*mats) if len(mats) > 1 else np.array(mats[0], dtype=float)


def _split(x: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    out, k = [], 0
    for s in sizes:
        out.append(x[k:k + s, k:k + s].copy())
        k += s
    return out


def _max_step(x_chol: np.ndarray, dx: np.ndarray) -> float:
    """Largest alpha with X + alpha dX >= 0 given the Cholesky factor of X."""
    li = sla.solve_triangular(x_chol, np.eye(len(dx)), lower=True)
    s = li @ dx @ li.T
    lam = np.linalg.eigvalsh(0.5 * (s + s.T))[0]
    return math.inf if lam >= 0 else -1.0 / lam


def _schur_solver(mat: np.ndarray):
    """Factor the Schur complement; fall back to LU and then an eigen-pseudo-inverse."""
    try:
        cf = sla.cho_factor(mat)
        return lambda r: sla.cho_solve(cf, r)
    except (np.linalg.LinAlgError, ValueError):
        pass
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu = sla.lu_factor(mat, check_finite=True)
        if np.all(np.isfinite(lu[0])) and np.min(np.abs(np.diag(lu[0]))) > 1e-14 * np.abs(lu[0]).max():
            return lambda r: sla.lu_solve(lu, r)
    except (np.linalg.LinAlgError, ValueError):
        pass
    try:
        lam, vec = np.linalg.eigh(mat)
    except np.linalg.LinAlgError:
        return None
    keep = lam > 1e-13 * max(lam.max(), 1e-300)
    if not keep.any():
        return None
    inv = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
    return lambda r: vec @ (inv * (vec.T @ r))


def _fro(a: SparseSym) -> float:
    """Frobenius norm of a symmetric matrix stored as upper-triangle triplets."""
    return float(np.sqrt(np.sum(a.val ** 2 * np.where(a.row == a.col, 1.0, 2.0))))


def _chol(x: np.ndarray):
    try:
        return np.linalg.cholesky(0.5 * (x + x.T))
    except np.linalg.LinAlgError:
        return None


def solve(p: SdpProblem, options: SolverOptions | None = None) -> SdpSolution:
    """Solve ``p`` and report a status together with primal and dual iterates.

    The status is ``optimal`` only when the relative primal and dual
    infeasibilities are below ``feas_tol`` and the relative duality gap is
    below ``gap_tol``.  Infeasibility and unboundedness are detected from
    approximate Farkas certificates; anything else that fails to converge is
    reported as ``numerical-failure``.
    """
    opt = options or SolverOptions()
    n = p.dimension
    if n > opt.max_dim:
        return _failure(p, f"dimension {n} exceeds limit {opt.max_dim}")
    for a in (p.objective, *p.constraints):
        if not np.all(np.isfinite(a.val)):
            return _failure(p, "non-finite coefficient")

    # equilibrate: unit-norm objective and constraint rows; duals are mapped back at the end
    anorms = np.array([_fro(a) for a in p.constraints])
    if np.any(anorms == 0):
        return _failure(p, "empty constraint row")
    c_scale = _fro(p.objective) or 1.0
    work = SdpProblem(p.block_sizes, p.objective.scaled(1 / c_scale),
                      tuple(a.scaled(1 / s) for a, s in zip(p.constraints, anorms)), p.rhs / anorms)
    op = _Operator(work)
    c = op.dense(work.objective)
    b = work.rhs
    m = op.m
    norm_b = float(np.linalg.norm(b))
    norm_c = float(np.linalg.norm(c))

    xi = max(10.0, math.sqrt(n), float(np.max(n * (1 + np.abs(b)) / 2)))
    eta = max(10.0, math.sqrt(n))
    x = xi * np.eye(n)
    z = eta * np.eye(n)
    y = np.zeros(m)

    status = Status.NUMERICAL_FAILURE
    msg = "iteration limit reached"
    it = 0
    rel_p = rel_d = gap = math.inf
    history: list[float] = []
    for it in range(1, opt.max_iter + 1):
        rp = b - op.apply(x)
        rd = op.adjoint(y) - z - c
        pobj = float(np.sum(c * x))
        dobj = float(b @ y)
        rel_p = float(np.linalg.norm(rp)) / (1 + norm_b)
        rel_d = float(np.linalg.norm(rd)) / (1 + norm_c)
        gap = abs(dobj - pobj) / (1 + abs(pobj) + abs(dobj))
        if rel_p <= opt.feas_tol and rel_d <= opt.feas_tol and gap <= opt.gap_tol:
            status, msg = Status.OPTIMAL, "converged"
            break
        # degenerate faces: the dual often converges while the primal residual stalls
        history.append(dobj)
        if (rel_d <= opt.feas_tol and len(history) > 6
                and abs(history[-6] - dobj) <= 1e-10 * (1 + abs(dobj)) and gap <= 1e-4):
            msg = "stalled with a converged dual"
            break
        # Farkas checks
        if dobj < 0 and _primal_infeasible(op, y, dobj, opt):
            status, msg = Status.INFEASIBLE, "dual ray found"
            break
        if pobj > 0 and _dual_infeasible(op, x, pobj, norm_b, opt):
            status, msg = Status.UNBOUNDED, "primal ray found"
            break

        lz = _chol(z)
        lx = _chol(x)
        if lz is None or lx is None:
            msg = "iterate lost positive definiteness"
            break
        lzi = sla.solve_triangular(lz, np.eye(n), lower=True)
        w = lzi.T @ lzi
        mu = float(np.sum(x * z)) / n

        schur = op.schur(x, w)
        solve_schur = _schur_solver(schur)
        if solve_schur is None:
            msg = "Schur complement is singular"
            break

        xrw = x @ rd @ w
        base = op.apply(xrw)

        def direction(sigma_mu, corr):
            rhs = op.apply(sigma_mu * w - corr) - base - b
            dy = solve_schur(rhs)
            dz = op.adjoint(dy) + rd
            dx = sigma_mu * w - x - x @ dz @ w - corr
            dx = 0.5 * (dx + dx.T)
            return dx, dy, dz

        dxp, dyp, dzp = direction(0.0, np.zeros_like(x))
        ap = min(1.0, _max_step(lx, dxp))
        ad = min(1.0, _max_step(lz, dzp))
        mu_aff = float(np.sum((x + ap * dxp) * (z + ad * dzp))) / n
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
        corr = dxp @ dzp @ w
        dx, dy, dz = direction(sigma * mu, corr)
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))):
            msg = "non-finite search direction"
            break
        ap = min(1.0, opt.step_fraction * _max_step(lx, dx))
        ad = min(1.0, opt.step_fraction * _max_step(lz, dz))
        x = x + ap * dx
        y = y + ad * dy
        z = z + ad * dz
        z = 0.5 * (z + z.T)
        x = 0.5 * (x + x.T)
        log.debug("it %d pobj %.10g dobj %.10g rp %.2e rd %.2e mu %.2e", it, pobj, dobj, rel_p, rel_d, mu)
    else:
        it = opt.max_iter

    rp = b - op.apply(x)
    rd = op.adjoint(y) - z - c
    pobj = float(np.sum(c * x))
    dobj = float(b @ y)
    return SdpSolution(
        status=status,
        primal=_split(x, p.block_sizes),
        dual=y * c_scale / anorms,
        slack=_split(z * c_scale, p.block_sizes),
        primal_objective=c_scale * pobj + p.objective_offset,
        dual_objective=c_scale * dobj + p.objective_offset,
        primal_infeasibility=float(np.linalg.norm(rp)) / (1 + norm_b),
        dual_infeasibility=float(np.linalg.norm(rd)) / (1 + norm_c),
        gap=abs(dobj - pobj) / (1 + abs(pobj) + abs(dobj)),
        iterations=it,
        message=msg,
    )


def _primal_infeasible(op: _Operator, y, dobj, opt) -> bool:
    # y / |b.y| with A^T y >= 0 certifies that no X >= 0 meets A(X) = b
    yh = y / abs(dobj)
    s = op.adjoint(yh)
    lam = np.linalg.eigvalsh(0.5 * (s + s.T))[0]
    return lam >= -opt.infeas_tol * max(1.0, float(np.linalg.norm(s)))


def _dual_infeasible(op: _Operator, x, pobj, norm_b, opt) -> bool:
    xh = x / pobj
    return float(np.linalg.norm(op.apply(xh))) <= opt.infeas_tol * (1 + norm_b) and pobj > 1e8


def _failure(p: SdpProblem, msg: str) -> SdpSolution:
    nan = float("nan")
    return SdpSolution(Status.NUMERICAL_FAILURE, [], np.full(p.n_constraints, nan), [],
                       nan, nan, nan, nan, nan, 0, msg)


def verify_dual_bound(p: SdpProblem, duals: Sequence[float], tol: float = 1e-9) -> DualCheck:
    """Check that ``sum_i y_i A_i - C`` is PSD in every block.

    Returns the dual objective as a bound on the primal maximum together with
    the most negative slack eigenvalue (``residual = max(0, -lambda_min)``).
    ``feasible`` holds when ``lambda_min >= -tol``.
    """
    y = np.asarray(duals, dtype=float)
    if y.shape != (p.n_constraints,):
        raise ValueError("dual vector length must equal the constraint count")
    mats = [np.zeros((s, s)) for s in p.block_sizes]
    for yi, a in zip(y, p.constraints):
        for bk, mat in enumerate(a.scaled(yi).to_dense(p.block_sizes)):
            mats[bk] += mat
    cm = p.objective.to_dense(p.block_sizes)
    lams = []
    for zm, cb in zip(mats, cm):
        s = zm - cb
        lams.append(float(np.linalg.eigvalsh(0.5 * (s + s.T))[0]))
    lam = min(lams)
    return DualCheck(
        feasible=bool(lam >= -tol and np.all(np.isfinite(y))),
        bound=float(p.rhs @ y) + p.objective_offset,
        residual=max(0.0, -lam),
        min_eigenvalues=tuple(lams),
    )


# ---------------------------------------------------------------------------
# SDPA sparse text format (1-based); our primal is SDPA's dual problem


def dump_sdpa(p: SdpProblem, path: str | Path) -> None:
    lines = [f"{p.n_constraints}", f"{len(p.block_sizes)}", " ".join(str(s) for s in p.block_sizes),
             " ".join(repr(float(v)) for v in p.rhs)]

    def emit(k, a: SparseSym):
        for bk, i, j, v in zip(a.block, a.row, a.col, a.val):
            lines.append(f"{k} {bk + 1} {i + 1} {j + 1} {float(v)!r}")

    emit(0, p.objective)
    for k, a in enumerate(p.constraints, 1):
        emit(k, a)
    Path(path).write_text("\n".join(lines) + "\n")


def load_sdpa(path: str | Path) -> SdpProblem:
    raw = [ln.split("*")[0].split('"')[0].strip() for ln in Path(path).read_text().splitlines()]
    raw = [ln.replace(",", " ").replace("{", " ").replace("}", " ").replace("(", " ").replace(")", " ")
           for ln in raw if ln]
    m = int(raw[0].split()[0])
    nb = int(raw[1].split()[0])
    sizes = [abs(int(t)) for t in raw[2].split()[:nb]]
    rhs = [float(t) for t in raw[3].split()[:m]]
    entries: list[list[tuple[int, int, int, float]]] = [[] for _ in range(m + 1)]
    for ln in raw[4:]:
        k, bk, i, j, v = ln.split()[:5]
        entries[int(k)].append((int(bk) - 1, int(i) - 1, int(j) - 1, float(v)))
    return SdpProblem(tuple(sizes), SparseSym.from_entries(entries[0]),
                      tuple(SparseSym.from_entries(e) for e in entries[1:]), np.array(rhs))
