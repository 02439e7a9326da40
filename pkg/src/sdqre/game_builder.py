"""Prepare-and-measure games derived from linear witnesses on the guessing probability."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .entropy_account import completeness_error
from .honest_model import ConditionalDistribution, winning_probability
from .pm_hierarchy import DistributionWitness, score_weights

__all__ = ["GameSpec", "DegenerateWitnessError", "construct_game", "expected_omega", "choose_delta"]


class DegenerateWitnessError(ValueError):
    """The witness does not distinguish any outcome, so no game can be formed."""


@dataclass(frozen=True, eq=False)
class GameSpec:
    """Input distribution ``q[x, y]`` and winning outcome ``winning[x, y]``.

    ``omega`` and ``delta`` are optional until the game is used by the
    protocol; when both are present ``0 < delta < min(omega, 1 - omega)``.
    """

    q: np.ndarray
    winning: np.ndarray
    omega: float | None = None
    delta: float | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        win = np.array(self.winning, dtype=np.int64)
        if q.ndim != 2 or q.shape != win.shape:
            raise ValueError("q and winning must be 2-d arrays of equal shape")
        if np.any(q < 0) or abs(q.sum() - 1) > 1e-12:
            raise ValueError("q must be a probability table")
        if np.any((win != 0) & (win != 1)):
            raise ValueError("winning outcomes must be 0 or 1")
        if self.omega is not None and self.delta is not None:
            if not 0 < self.delta < min(self.omega, 1 - self.omega):
                raise ValueError("need 0 < delta < min(omega, 1 - omega)")
        q.setflags(write=False)
        win.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "winning", win)

    def __eq__(self, other):
        if not isinstance(other, GameSpec):
            return NotImplemented
        return (np.array_equal(self.q, other.q) and np.array_equal(self.winning, other.winning)
                and self.omega == other.omega and self.delta == other.delta)

    __hash__ = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.q.shape

    def weights(self) -> dict:
        """Scoring coefficients ``w[b, x, y] = q(x, y) [b == b_xy]``."""
        nx, ny = self.shape
        return score_weights({(x, y): self.q[x, y] for x in range(nx) for y in range(ny)},
                             {(x, y): int(self.winning[x, y]) for x in range(nx) for y in range(ny)})

    def with_params(self, omega: float | None = None, delta: float | None = None) -> "GameSpec":
        return GameSpec(self.q, self.winning, self.omega if omega is None else omega,
                        self.delta if delta is None else delta, dict(self.meta))

    def complement(self) -> "GameSpec":
        """Same inputs with every winning outcome flipped; ``omega -> 1 - omega``."""
        om = None if self.omega is None else 1 - self.omega
        delta = self.delta
        if om is not None and delta is not None and not delta < min(om, 1 - om):
            delta = None
        return GameSpec(self.q, 1 - self.winning, om, delta, dict(self.meta))

    def pair_flat(self) -> np.ndarray:
        """``q`` flattened in ``(x, y)`` row-major order."""
        return self.q.ravel()

    # -- serialization ---------------------------------------------------

    def to_config(self) -> dict:
        nx, ny = self.shape
        d = {
            "q": [[float(v) for v in row] for row in self.q],
            "winning": [[int(v) for v in row] for row in self.winning],
        }
        if self.omega is not None:
            d["omega"] = float(self.omega)
        if self.delta is not None:
            d["delta"] = float(self.delta)
        return d

    @classmethod
    def from_config(cls, d) -> "GameSpec":
        q = np.asarray(d["q"], dtype=float)
        return cls(q / q.sum(), np.asarray(d["winning"]), d.get("omega"), d.get("delta"))

    def to_table(self, labels=None, decimals: int = 3) -> str:
        """Text table with the q row and one score row per outcome."""
        nx, ny = self.shape
        labels = list(labels) if labels is not None else list(range(nx))
        cols = [(x, y) for x in range(nx) for y in range(ny)]
        rows = [["x"] + [str(labels[x]) for x, _ in cols],
                ["y"] + [str(y) for _, y in cols],
                ["q(x,y)"] + [f"{self.q[x, y]:.{decimals}f}" for x, y in cols]]
        for b in (0, 1):
            rows.append([f"score b={b}"] + [str(int(self.winning[x, y] == b)) for x, y in cols])
        out = "\n".join("\t".join(r) for r in rows) + "\n"
        if self.omega is not None:
            out += f"omega\t{self.omega:.5f}\n"
        if self.delta is not None:
            out += f"delta\t{self.delta:.5f}\n"
        return out


def construct_game(w: DistributionWitness, tol: float = 0.0) -> GameSpec:
    """Game whose winning outcome is the one that lowers the witness.

    The losing outcome ``b'`` maximizes ``xi(b, x, y)`` and the winning
    outcome ``b''`` minimizes it.  ``q`` is proportional to the gap
    ``xi(b') - xi(b'')``; pairs with gap ``<= tol`` get probability zero.
    """
    xi = np.asarray(w.xi, dtype=float)
    if xi.ndim != 3 or xi.shape[0] != 2:
        raise ValueError("witness table must have shape (2, nx, ny)")
    gap = np.abs(xi[0] - xi[1])
    gap = np.where(gap > tol, gap, 0.0)
    total = gap.sum()
    if not total > 0:
        raise DegenerateWitnessError("witness assigns equal weight to both outcomes everywhere")
    # ties go to outcome 0 being the winner
    winning = np.where(xi[1] < xi[0], 1, 0)
    return GameSpec(gap / total, winning, meta={"level": w.level})


def expected_omega(g: GameSpec, dist: ConditionalDistribution) -> float:
    return winning_probability(dist, g)


def choose_delta(n: float, gamma: float, omega: float, eps_com_target: float,
                 per_decade: int = 64, lo: float = 1e-7) -> float:
    """Smallest ``delta`` on a geometric grid whose completeness bound meets the target."""
    if not 0 < eps_com_target < 1:
        raise ValueError("target must lie in (0, 1)")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1); tests are required")
    hi = min(omega, 1 - omega)
    if not hi > lo:
        raise ValueError("omega too close to 0 or 1")
    k0 = math.floor(per_decade * math.log10(lo))
    k1 = math.ceil(per_decade * math.log10(hi))
    for k in range(k0, k1 + 1):
        delta = 10 ** (k / per_decade)
        if delta >= hi:
            break
        if n * gamma * (1 - omega + delta) >= n:
            break
        if completeness_error(n, gamma, omega, delta) <= eps_com_target:
            return float(delta)
    raise ValueError("completeness target unreachable for these n and gamma")
