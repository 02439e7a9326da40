"""Honest homodyne device: detector efficiency budget and outcome statistics.

The detector outputs ``b = 0`` when the measured quadrature is positive and
``b = 1`` otherwise.  Electronic noise is folded into an equivalent loss, so
the whole detector is summarised by one effective efficiency ``eta_eff``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import ndtr

from .constellation import Constellation

__all__ = [
    "HonestDeviceModel",
    "ConditionalDistribution",
    "equivalent_electronic_efficiency",
    "effective_efficiency",
    "fit_extra_loss_db",
    "expected_distribution",
    "sample_round",
    "sample_rounds",
    "winning_probability",
]

DEFAULT_LO_PHASES = {0: math.pi / 2, 1: 0.0}


def _db_to_transmission(db: float) -> float:
    return 10.0 ** (-db / 10.0)


def equivalent_electronic_efficiency(clearance_db: float) -> float:
    """Efficiency equivalent to electronic noise at a given clearance.

    Parameters
    ----------
    clearance_db : float
        Shot-noise to electronic-noise ratio in dB.

    Returns
    -------
    float
        ``1 - 10**(-clearance_db / 10)``.
    """
    if not clearance_db > 0:
        raise ValueError("clearance must be positive")
    return 1.0 - _db_to_transmission(clearance_db)


def effective_efficiency(pd_eff_avg: float, bs_loss_db: float, clearance_db: float,
                         extra_loss_db: float = 0.0) -> float:
    """Product of photodiode efficiency, splitter loss, electronic noise and extra loss."""
    if not 0 < pd_eff_avg <= 1:
        raise ValueError("photodiode efficiency must lie in (0, 1]")
    if bs_loss_db < 0 or extra_loss_db < 0:
        raise ValueError("losses must be non-negative")
    return (pd_eff_avg * _db_to_transmission(bs_loss_db) * equivalent_electronic_efficiency(clearance_db)
            * _db_to_transmission(extra_loss_db))


def fit_extra_loss_db(target_eta: float, pd_eff_avg: float, bs_loss_db: float, clearance_db: float) -> float:
    """Extra loss (dB) that closes the gap between the component budget and ``target_eta``."""
    base = effective_efficiency(pd_eff_avg, bs_loss_db, clearance_db)
    if not 0 < target_eta <= base:
        raise ValueError("target efficiency must lie in (0, component budget]")
    return -10.0 * math.log10(target_eta / base)


@dataclass(frozen=True)
class HonestDeviceModel:
    """Honest prepare-and-measure device.

    Parameters
    ----------
    constellation : Constellation
        States prepared by the source.
    eta_eff : float
        Effective homodyne efficiency in (0, 1].
    lo_phases : mapping
        Local-oscillator phase for each measurement setting ``y``.
    """

    constellation: Constellation
    eta_eff: float
    lo_phases: Mapping[int, float] = field(default_factory=lambda: dict(DEFAULT_LO_PHASES))

    def __post_init__(self):
        if not 0 < self.eta_eff <= 1:
            raise ValueError("eta_eff must lie in (0, 1]")
        if not self.lo_phases:
            raise ValueError("at least one measurement setting is required")
        object.__setattr__(self, "lo_phases", dict(self.lo_phases))

    @property
    def settings(self) -> list[int]:
        return sorted(self.lo_phases)

    def quadrature_means(self) -> np.ndarray:
        """Mean quadrature ``2 sqrt(eta) Re(alpha_x e^{-i phi_y})`` as an ``(nx, ny)`` array."""
        amps = np.asarray(self.constellation.amplitudes)
        phases = np.array([self.lo_phases[y] for y in self.settings])
        return 2 * math.sqrt(self.eta_eff) * np.real(amps[:, None] * np.exp(-1j * phases[None, :]))


@dataclass(frozen=True)
class ConditionalDistribution:
    """Table ``P[b, x, y]`` of binary outcome probabilities."""

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim != 3 or t.shape[0] != 2:
            raise ValueError("table must have shape (2, nx, ny)")
        if np.any(t < -1e-15) or np.any(t > 1 + 1e-15):
            raise ValueError("probabilities must lie in [0, 1]")
        if np.max(np.abs(t.sum(axis=0) - 1)) > 1e-12:
            raise ValueError("outcome probabilities must sum to 1")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def n_inputs(self) -> tuple[int, int]:
        return self.table.shape[1], self.table.shape[2]

    def __call__(self, b: int, x: int, y: int) -> float:
        return float(self.table[b, x, y])

    def to_text(self, labels=None, decimals: int = 4) -> str:
        """Plain-text table with one column per ``(x, y)`` pair, rows ``b = 0`` and ``b = 1``."""
        nx, ny = self.n_inputs
        labels = list(labels) if labels is not None else list(range(nx))
        cols = [(x, y) for x in range(nx) for y in range(ny)]
        head = ["x"] + [str(labels[x]) for x, _ in cols]
        sub = ["y"] + [str(y) for _, y in cols]
        rows = [head, sub]
        for b in (0, 1):
            rows.append([f"P(b={b})"] + [f"{self.table[b, x, y]:.{decimals}f}" for x, y in cols])
        return "\n".join("\t".join(r) for r in rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ConditionalDistribution":
        lines = [ln.split("\t") for ln in text.strip().splitlines()]
        xs = [int(v) for v in lines[0][1:]]
        ys = [int(v) for v in lines[1][1:]]
        nx, ny = max(xs) + 1, max(ys) + 1
        t = np.zeros((2, nx, ny))
        for b in (0, 1):
            for x, y, v in zip(xs, ys, lines[2 + b][1:]):
                t[b, x, y] = float(v)
        # printed values are rounded; renormalize
        t[1] = 1 - t[0]
        return cls(t)


def expected_distribution(m: HonestDeviceModel) -> ConditionalDistribution:
    """Outcome probabilities ``P(b=0|x,y) = Phi(mean quadrature)`` with unit shot-noise variance."""
    p0 = ndtr(m.quadrature_means())
    return ConditionalDistribution(np.stack([p0, 1 - p0]))


def sample_round(m: HonestDeviceModel, x: int, y: int, rng: np.random.Generator) -> int:
    """Simulate one homodyne shot.  Exact zeros count as ``b = 1``."""
    mean = m.quadrature_means()[x, m.settings.index(y)]
    return 0 if mean + rng.standard_normal() > 0 else 1


def sample_rounds(m: HonestDeviceModel, x: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized :func:`sample_round` over arrays of setting indices."""
    means = m.quadrature_means()
    q = means[np.asarray(x), np.asarray(y)] + rng.standard_normal(np.shape(x))
    return np.where(q > 0, 0, 1).astype(np.uint8)


def winning_probability(dist: ConditionalDistribution, game) -> float:
    """``sum_{x,y} q(x,y) P(b_xy|x,y)`` for any object with ``q`` and ``winning`` arrays."""
    q = np.asarray(game.q, dtype=float)
    win = np.asarray(game.winning, dtype=int)
    p = dist.table if isinstance(dist, ConditionalDistribution) else np.asarray(dist)
    xs, ys = np.indices(q.shape)
    return float(np.sum(q * p[win, xs, ys]))
