"""Coherent-state constellations and their overlaps.

Amplitudes are in shot-noise units: a coherent state ``|alpha>`` measured at
local-oscillator phase ``theta`` has quadrature mean ``2 Re(alpha e^{-i theta})``
and unit variance.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Constellation",
    "LabelError",
    "coherent_overlap",
    "overlap",
    "gram_matrix",
    "two_mode_combine",
    "two_mode_quadrature",
    "fock_overlap",
]


class LabelError(KeyError):
    """Raised when a symbol is not part of a constellation."""


@dataclass(frozen=True)
class Constellation:
    """An ordered set of coherent-state amplitudes indexed by input symbols.

    Parameters
    ----------
    amplitudes : sequence of complex
        Field amplitude ``alpha_x`` of each state.
    labels : sequence of hashable, optional
        Input symbols, defaults to ``0 .. len(amplitudes) - 1``.
    """

    amplitudes: tuple[complex, ...]
    labels: tuple[Hashable, ...] = field(default=())

    def __post_init__(self):
        amps = tuple(complex(a) for a in self.amplitudes)
        if not amps:
            raise ValueError("constellation must contain at least one state")
        labels = tuple(self.labels) if self.labels else tuple(range(len(amps)))
        if len(labels) != len(amps):
            raise ValueError("labels and amplitudes differ in length")
        if len(set(labels)) != len(labels):
            raise ValueError("constellation labels must be distinct")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def qpsk(cls, amplitude: complex, order: Sequence[int] = (0, 1, 2, 3)) -> "Constellation":
        """QPSK states ``alpha e^{i k pi/2}``.

        ``order[x]`` is the phase multiple ``k`` used for symbol ``x``; the
        default gives the canonical ``alpha e^{i x pi/2}``.  The phase order
        used for the published test-round table is ``(0, 2, 3, 1)``.
        """
        if sorted(order) != [0, 1, 2, 3]:
            raise ValueError("order must be a permutation of 0..3")
        amps = [complex(amplitude) * cmath.exp(1j * k * math.pi / 2) for k in order]
        return cls(tuple(amps))

    @classmethod
    def qpsk_from_photon_number(cls, mean_photons: float, order: Sequence[int] = (0, 1, 2, 3)):
        return cls.qpsk(math.sqrt(mean_photons), order)

    @classmethod
    def qam16(cls, corner_amplitude: float) -> "Constellation":
        """Square 16-point constellation scaled so the corners have modulus ``corner_amplitude``.

        Grid coordinates are ``{-3, -1, 1, 3} * s`` on each axis with
        ``s = corner_amplitude / (3 sqrt 2)``.  Symbols run row-major from the
        top-left corner.
        """
        s = corner_amplitude / (3 * math.sqrt(2))
        levels = (-3, -1, 1, 3)
        amps = [complex(re * s, im * s) for im in reversed(levels) for re in levels]
        return cls(tuple(amps))

    def __len__(self):
        return len(self.amplitudes)

    def index(self, label: Hashable) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LabelError(label) from None

    def amplitude(self, label: Hashable) -> complex:
        return self.amplitudes[self.index(label)]

    def mean_photon_numbers(self) -> np.ndarray:
        return np.abs(np.asarray(self.amplitudes)) ** 2

    def gram(self) -> np.ndarray:
        return gram_matrix(self)

    # -- serialization ---------------------------------------------------

    def to_config(self) -> dict:
        """Key-value block ``{label: [re, im]}``."""
        return {str(lab): [a.real, a.imag] for lab, a in zip(self.labels, self.amplitudes)}

    @classmethod
    def from_config(cls, block: Mapping) -> "Constellation":
        """Inverse of :meth:`to_config`.  Integer-like labels are restored as ints."""
        labels, amps = [], []
        for key, value in block.items():
            lab = int(key) if isinstance(key, str) and key.lstrip("-").isdigit() else key
            re, im = value
            labels.append(lab)
            amps.append(complex(float(re), float(im)))
        return cls(tuple(amps), tuple(labels))


def coherent_overlap(a: complex, b: complex) -> complex:
    """Inner product ``<a|b>`` of two coherent states."""
    a, b = complex(a), complex(b)
    return cmath.exp(-(abs(a) ** 2 + abs(b) ** 2) / 2 + a.conjugate() * b)


def overlap(x: Hashable, x2: Hashable, c: Constellation) -> complex:
    """``<psi_x|psi_x2>`` for two symbols of ``c``."""
    return coherent_overlap(c.amplitude(x), c.amplitude(x2))


def gram_matrix(c: Constellation | Iterable[complex]) -> np.ndarray:
    """Matrix of pairwise coherent-state overlaps, ``G[i, j] = <psi_i|psi_j>``."""
    amps = np.asarray(c.amplitudes if isinstance(c, Constellation) else list(c), dtype=complex)
    sq = np.abs(amps) ** 2
    g = np.exp(-(sq[:, None] + sq[None, :]) / 2 + np.conj(amps)[:, None] * amps[None, :])
    np.fill_diagonal(g, 1.0)
    return g


def fock_overlap(a: complex, b: complex, cutoff: int = 40) -> complex:
    """Coherent-state overlap from explicit Fock amplitudes truncated at ``cutoff`` photons."""
    n = np.arange(cutoff + 1)
    log_fact = np.array([math.lgamma(k + 1) for k in n]) / 2
    norm = np.exp(-(abs(a) ** 2 + abs(b) ** 2) / 2)

    def coeffs(z):
        z = complex(z)
        if z == 0:
            out = np.zeros(cutoff + 1, dtype=complex)
            out[0] = 1.0
            return out
        return np.exp(n * np.log(z) - log_fact)

    return complex(norm * np.sum(np.conj(coeffs(a)) * coeffs(b)))


def two_mode_combine(alpha_e: complex, alpha_l: complex) -> tuple[complex, tuple[complex, complex]]:
    """Collapse ``|alpha_e>|alpha_l>`` into a single effective mode.

    Returns ``(alpha_t, (c_e, c_l))`` where ``alpha_t`` is real and
    non-negative, ``|alpha_t|^2 = |alpha_e|^2 + |alpha_l|^2``, and the
    effective creation operator is ``c_e a_e^dag + c_l a_l^dag``.  For the
    vacuum the mode coefficients default to the anti-phase pair
    ``(1, -1)/sqrt 2``.
    """
    alpha_e, alpha_l = complex(alpha_e), complex(alpha_l)
    mag = math.hypot(abs(alpha_e), abs(alpha_l))
    if mag == 0.0:
        r = 1 / math.sqrt(2)
        return 0j, (complex(r), complex(-r))
    return complex(mag), (alpha_e / mag, alpha_l / mag)


def two_mode_quadrature(q_e, q_l):
    """Quadrature of the anti-phase two-mode state, ``(q_e - q_l) / sqrt 2``."""
    return (q_e - q_l) / math.sqrt(2)
