"""Finite-size entropy accounting for spot-checking randomness expansion.

All entropies are in bits except the binomial divergence, which is kept in
nats because the normal-approximation bound is stated that way.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from .pm_hierarchy import DualCertificate, SolverError
from .sdp_core import Status

__all__ = [
    "CertificationParams",
    "CertificationReport",
    "binary_entropy",
    "shannon_entropy",
    "kl_divergence",
    "binomial_cdf_bound",
    "single_round_entropy_bound",
    "min_tradeoff_value",
    "tradeoff_extrema",
    "correction_V",
    "correction_K",
    "eat_entropy_bound",
    "optimal_beta",
    "completeness_error",
    "abort_threshold",
    "output_length",
    "input_randomness",
    "optimize_rate",
]

LN2 = math.log(2)


# -- elementary entropies ------------------------------------------------

def binary_entropy(p: float) -> float:
    """``h2(p)`` in bits, with ``h2(0) = h2(1) = 0``."""
    if p <= 0 or p >= 1:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def shannon_entropy(probs) -> float:
    p = np.asarray(probs, dtype=float).ravel()
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def kl_divergence(a: float, p: float) -> float:
    """Binary relative entropy ``D(a || p)`` in nats."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    out = 0.0
    if a > 0:
        out += a * math.log(a / p)
    if a < 1:
        out += (1 - a) * math.log((1 - a) / (1 - p))
    return out


def binomial_cdf_bound(n: int, p: float, k: int) -> float:
    """Normal-approximation value ``Phi(sign(k/n - p) sqrt(2 n D(k/n, p)))``.

    For ``0 <= k < n`` and ``X ~ Binomial(n, p)`` it brackets the CDF:
    ``F(n, p, k) <= Pr[X <= k] <= F(n, p, k + 1)``.
    """
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if not 0 <= k < n:
        raise ValueError("need 0 <= k < n")
    a = k / n
    z = math.copysign(math.sqrt(max(0.0, 2 * n * kl_divergence(a, p))), a - p)
    return float(ndtr(z))


# -- min-tradeoff function and EAT ---------------------------------------

def single_round_entropy_bound(cert: DualCertificate, p) -> float:
    """``2 [1 - c - lam . p]`` for a score distribution ``p = (p_lose, p_win)``."""
    p = np.asarray(p, dtype=float)
    return 2.0 * (1.0 - cert.c - float(np.dot(cert.lam, p)))


def _adjusted_score(omega: float, delta: float) -> np.ndarray:
    return np.array([1 - omega + delta, omega - delta])


def min_tradeoff_value(cert: DualCertificate, gamma: float, omega: float, delta: float) -> float:
    """Min-tradeoff value at the worst accepted frequency, ``2(1-gamma)[1 - c - lam . w~]``."""
    if not delta < omega:
        raise ValueError("delta must be smaller than omega")
    return 2 * (1 - gamma) * (1 - cert.c - float(np.dot(cert.lam, _adjusted_score(omega, delta))))


def tradeoff_extrema(cert: DualCertificate, gamma: float) -> tuple[float, float]:
    """``(Max[g], Min[g])`` of the test-round affine function over the two scores."""
    return (2 * (1 - gamma) * (1 - cert.c - cert.lam_min),
            2 * (1 - gamma) * (1 - cert.c - cert.lam_max))


def correction_V(gamma: float, lam_min: float, lam_max: float) -> float:
    """Second-order EAT correction."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if lam_max < lam_min:
        raise ValueError("lam_max < lam_min")
    spread = lam_max - lam_min
    return LN2 / 2 * (math.log2(9) + math.sqrt(4 * (1 - gamma) ** 2 * spread ** 2 / gamma + 2)) ** 2


def correction_K(beta: float, gamma: float, lam_min: float, lam_max: float) -> float:
    """Third-order EAT correction."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    e = 1 + 2 * (1 - gamma) * (lam_max - lam_min)
    return 2 ** (beta * e) / (6 * (1 - beta) ** 3 * LN2) * math.log(2 ** e + math.e ** 2) ** 3


@dataclass(frozen=True)
class CertificationParams:
    """Round count, test rate and error budget of one protocol run.

    ``eps_sou`` is derived as ``max(eps_ea, 2 (eps_s + kappa))`` and cannot be
    passed in.
    """

    n: float
    gamma: float
    eps_com: float
    eps_ea: float
    eps_s: float
    beta: float
    kappa: float
    eps_sou: float = field(init=False)

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        for name in ("eps_com", "eps_ea", "eps_s"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        object.__setattr__(self, "eps_sou", max(self.eps_ea, 2 * (self.eps_s + self.kappa)))
        if not self.eps_sou < 1:
            raise ValueError("soundness error must be below 1")


def _eat_penalty(n: float, gamma: float, beta: float, eps_ea: float, eps_s: float,
                 lam_min: float, lam_max: float) -> float:
    return ((1 - 2 * math.log2(eps_ea * eps_s)) / beta
            + n * (beta * correction_V(gamma, lam_min, lam_max)
                   + beta ** 2 * correction_K(beta, gamma, lam_min, lam_max)))


def eat_entropy_bound(params: CertificationParams, cert: DualCertificate, omega: float, delta: float) -> float:
    """Smooth min-entropy lower bound (bits) from entropy accumulation.

    ``n f - (1/beta)[1 - 2 log2(eps_ea eps_s)] - n (beta V + beta^2 K)``.
    Not clamped: small ``n`` yields a negative value.
    """
    f = min_tradeoff_value(cert, params.gamma, omega, delta)
    return params.n * f - _eat_penalty(params.n, params.gamma, params.beta, params.eps_ea, params.eps_s,
                                       cert.lam_min, cert.lam_max)


def optimal_beta(n: float, gamma: float, eps_ea: float, eps_s: float, lam_min: float, lam_max: float,
                 grid: int = 50) -> float:
    """Minimize the EAT penalty over ``beta``: log grid on ``[1e-8, 1e-1]`` plus golden-section refinement."""
    def pen(lb):
        return _eat_penalty(n, gamma, 10 ** lb, eps_ea, eps_s, lam_min, lam_max)

    lbs = np.linspace(-8, -1, grid)
    lb0 = math.log10(min(max(1 / math.sqrt(max(n, 1)), 1e-8), 1e-1))
    vals = [pen(lb) for lb in lbs]
    i = int(np.argmin(vals))
    if pen(lb0) < vals[i]:
        centre = lb0
    else:
        centre = lbs[i]
    step = lbs[1] - lbs[0]
    lo, hi = max(-8.0, centre - step), min(-1.0, centre + step)
    res = minimize_scalar(pen, bounds=(lo, hi), method="bounded", options={"xatol": 1e-6})
    best = min([(res.fun, res.x), (pen(centre), centre)])
    return float(10 ** best[1])


# -- completeness, privacy amplification, input cost ---------------------

def abort_threshold(n: float, gamma: float, omega: float, delta: float) -> int:
    """Largest accepted number of lost test rounds, ``floor(n gamma (1 - omega + delta))``."""
    return int(math.floor(n * gamma * (1 - omega + delta)))


def completeness_error(n: float, gamma: float, omega: float, delta: float) -> float:
    """Honest abort probability bound ``1 - F(n, gamma(1-omega), floor(n gamma (1-omega+delta)))``."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    k = abort_threshold(n, gamma, omega, delta)
    n = int(round(n))
    return 1.0 - binomial_cdf_bound(n, gamma * (1 - omega), k)


def output_length(h_bound: float, eps_s: float, kappa: float) -> int:
    """Leftover-hash output length ``floor(H + 4 log2 kappa - 2)`` clamped at zero."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    return max(0, int(math.floor(h_bound + 4 * math.log2(kappa) - 2)))


def input_randomness(n: float, gamma: float, q) -> float:
    """Bits spent on inputs, ``n [h2(gamma) + gamma H(q)] + 3``."""
    return n * (binary_entropy(gamma) + gamma * shannon_entropy(q)) + 3


# -- reports -------------------------------------------------------------

@dataclass
class CertificationReport:
    """Everything needed to audit one certified output length."""

    params: CertificationParams
    omega: float
    delta: float
    certificate: DualCertificate
    h_min: float
    length: int
    input_bits: float
    f_value: float
    V: float
    K: float
    penalty: float
    game: dict | None = None

    @property
    def nu(self) -> float:
        return self.certificate.nu

    @property
    def gross_rate(self) -> float:
        return self.length / self.params.n

    @property
    def net_rate(self) -> float:
        return (self.length - self.input_bits) / self.params.n

    def to_dict(self) -> dict:
        p = asdict(self.params)
        return {
            "params": p,
            "omega": self.omega,
            "delta": self.delta,
            "nu": self.nu,
            "certificate": self.certificate.to_dict(),
            "h_min": self.h_min,
            "length": self.length,
            "input_bits": self.input_bits,
            "gross_rate": self.gross_rate,
            "net_rate": self.net_rate,
            "f_value": self.f_value,
            "V": self.V,
            "K": self.K,
            "penalty": self.penalty,
            "game": self.game,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        d = self.to_dict()
        lines = [f"{k}: {d['params'][k]!r}" for k in sorted(d["params"])]
        for k in ("omega", "delta", "nu", "h_min", "length", "input_bits", "gross_rate", "net_rate",
                  "f_value", "V", "K", "penalty"):
            lines.append(f"{k}: {d[k]!r}")
        cert = d["certificate"]
        # the full dual vector lives in the JSON report
        lines += [f"certificate.{k}: {cert[k]!r}" for k in sorted(cert) if k != "dual"]
        if cert.get("dual") is not None:
            lines.append(f"certificate.dual: {len(cert['dual'])} multipliers (see JSON)")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CertificationReport":
        d = json.loads(text)
        p = {k: v for k, v in d["params"].items() if k != "eps_sou"}
        return cls(CertificationParams(**p), d["omega"], d["delta"], DualCertificate.from_dict(d["certificate"]),
                   d["h_min"], d["length"], d["input_bits"], d["f_value"], d["V"], d["K"], d["penalty"],
                   d.get("game"))


def _evaluate(n, gamma, eps_com, eps_total, cert, omega, delta, q, kappa) -> CertificationReport:
    eps_s = eps_total / 2 - kappa
    beta = optimal_beta(n, gamma, eps_total, eps_s, cert.lam_min, cert.lam_max)
    params = CertificationParams(n, gamma, eps_com, eps_total, eps_s, beta, kappa)
    f = min_tradeoff_value(cert, gamma, omega, delta)
    V = correction_V(gamma, cert.lam_min, cert.lam_max)
    K = correction_K(beta, gamma, cert.lam_min, cert.lam_max)
    pen = _eat_penalty(n, gamma, beta, params.eps_ea, eps_s, cert.lam_min, cert.lam_max)
    h = n * f - pen
    return CertificationReport(params, omega, delta, cert, h, output_length(h, eps_s, kappa),
                               input_randomness(n, gamma, q), f, V, K, pen)


def optimize_rate(n: float, gamma: float, omega: float, delta: float, q,
                  certificate_for: Callable[[float], DualCertificate], *, eps_sou: float = 1e-6,
                  eps_com: float = 1e-3, nu_points: int = 21, kappa_points: int = 40,
                  game: Mapping | None = None) -> CertificationReport:
    """Search ``nu``, ``kappa`` and ``beta`` for the longest certified output.

    Parameters
    ----------
    certificate_for : callable
        Maps a constraint winning probability ``nu`` to a verified
        :class:`DualCertificate`.  Results are cached per ``nu``; points
        reported infeasible are skipped.
    eps_sou : float
        Total soundness budget, split as ``eps_ea = 2 (eps_s + kappa) = eps_sou``.

    Returns
    -------
    CertificationReport
        The best report.  When nothing positive is certified the report has
        ``length == 0`` and a negative net rate.
    """
    cache: dict[float, DualCertificate | None] = {}
    lo, hi = max(1e-6, omega - 5 * delta), min(1 - 1e-6, omega + 5 * delta)
    best: CertificationReport | None = None
    kappas = np.geomspace(eps_sou * 1e-4, eps_sou / 2 * 0.999, kappa_points)
    for nu in np.linspace(lo, hi, nu_points):
        nu = float(nu)
        if nu not in cache:
            try:
                cache[nu] = certificate_for(nu)
            except SolverError as exc:
                # winning probabilities outside the quantum set certify nothing
                if exc.solution is None or exc.solution.status is not Status.INFEASIBLE:
                    raise
                cache[nu] = None
        cert = cache[nu]
        if cert is None:
            continue
        for kappa in kappas:
            rep = _evaluate(n, gamma, eps_com, eps_sou, cert, omega, delta, q, float(kappa))
            key = (rep.length, rep.h_min + 4 * math.log2(kappa))
            if best is None or key > (best.length, best.h_min + 4 * math.log2(best.params.kappa)):
                best = rep
    if best is None:
        raise SolverError("no feasible constraint point on the nu grid")
    best.game = dict(game) if game is not None else None
    return best
