"""Spot-checking protocol execution: input sampling, scoring, abort decision, transcripts.

Round inputs come from an interval-algorithm sampler that turns an unbiased
bit stream into exactly distributed symbols while recycling unused
randomness, so the metered seed consumption tracks the input entropy.
"""

from __future__ import annotations

import math
import struct
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .entropy_account import abort_threshold
from .game_builder import GameSpec
from .honest_model import HonestDeviceModel

__all__ = [
    "BitSource",
    "SeedExhausted",
    "IntervalSampler",
    "fixed_point_table",
    "input_table",
    "sample_inputs",
    "RoundRecord",
    "Transcript",
    "ReplayDevice",
    "ReplayUnderrun",
    "run",
    "simulate_fast",
    "accept",
    "raw_bits",
    "TranscriptFormatError",
]

FRAC_BITS = 64
MAGIC = b"SDQT"
VERSION = 1


class SeedExhausted(RuntimeError):
    """The trusted seed ran out of bits."""


class ReplayUnderrun(RuntimeError):
    """A replayed device has fewer outcomes than requested rounds."""


class TranscriptFormatError(ValueError):
    pass


class BitSource:
    """Unbiased bit stream read in 64-bit words, metering every bit handed out.

    Parameters
    ----------
    rng : numpy Generator, optional
        Deterministic test source.
    data : bytes, optional
        Raw seed bytes (e.g. the content of a seed file); bits are used
        most-significant first and exhaustion raises :class:`SeedExhausted`.
    """

    def __init__(self, rng: np.random.Generator | None = None, data: bytes | None = None):
        if (rng is None) == (data is None):
            raise ValueError("give exactly one of rng or data")
        self._rng = rng
        self._data = data
        self._pos = 0  # bit offset into data
        self.consumed = 0

    @classmethod
    def from_seed(cls, seed: int) -> "BitSource":
        return cls(rng=np.random.default_rng(seed))

    @classmethod
    def from_file(cls, path: str | Path) -> "BitSource":
        return cls(data=Path(path).read_bytes())

    def take(self, k: int) -> int:
        """Return ``k <= 64`` fresh bits as an integer."""
        if not 0 < k <= 64:
            raise ValueError("k must be in 1..64")
        self.consumed += k
        if self._rng is not None:
            return int(self._rng.integers(0, 1 << k, dtype=np.uint64))
        end = self._pos + k
        if end > 8 * len(self._data):
            raise SeedExhausted(f"seed exhausted after {self._pos} bits")
        first, last = self._pos // 8, (end - 1) // 8
        chunk = int.from_bytes(self._data[first:last + 1], "big")
        shift = 8 * (last + 1) - end
        self._pos = end
        return (chunk >> shift) & ((1 << k) - 1)


def fixed_point_table(probs: Sequence[float], frac_bits: int = FRAC_BITS) -> list[int]:
    """Cumulative table in units of ``2**-frac_bits``; zero-probability entries get zero width.

    Rounding error is pushed onto the largest entry so the table ends at
    exactly ``2**frac_bits``.
    """
    p = np.asarray(probs, dtype=float)
    if np.any(p < 0) or not np.isclose(p.sum(), 1.0, atol=1e-12):
        raise ValueError("probabilities must be non-negative and sum to 1")
    one = 1 << frac_bits
    widths = [int(round(v * one)) for v in p / p.sum()]
    widths[int(np.argmax(p))] += one - sum(widths)
    cum = [0]
    for w in widths:
        cum.append(cum[-1] + w)
    return cum


class IntervalSampler:
    """Exact sampler over a fixed-point distribution with randomness recycling.

    The state is an integer ``v`` uniformly distributed on ``[0, r)`` given
    everything emitted so far.  A draw tops the state up to
    ``r >= 2**(2 f)`` with ``f``-bit words, splits ``v`` into a uniform
    ``f``-bit fraction and a uniform quotient, picks the cell containing the
    fraction, and keeps the position inside the cell as the new state.  Rare
    leftovers that do not fill a whole ``2**f`` period are rejected and
    reused.

    Parameters
    ----------
    source : BitSource
    frac_bits : int
        Fixed-point precision ``f`` of the tables passed to :meth:`draw`
        (at most 64).
    """

    def __init__(self, source: BitSource, frac_bits: int = FRAC_BITS):
        if not 1 <= frac_bits <= 64:
            raise ValueError("frac_bits must be in 1..64")
        self.source = source
        self.frac_bits = frac_bits
        self.v = 0
        self.r = 1

    @property
    def net_consumed(self) -> float:
        """Bits taken from the source minus the entropy still held in the state."""
        return self.source.consumed - math.log2(self.r)

    def _refill(self):
        f = self.frac_bits
        while self.r < (1 << 2 * f):
            self.v = (self.v << f) | self.source.take(f)
            self.r <<= f

    def draw(self, cum: Sequence[int]) -> int:
        f = self.frac_bits
        while True:
            self._refill()
            m = self.r >> f
            if self.v < m << f:
                q, t = self.v >> f, self.v & ((1 << f) - 1)
                i = bisect_right(cum, t) - 1
                width = cum[i + 1] - cum[i]
                self.v = q * width + (t - cum[i])
                self.r = m * width
                return i
            self.v -= m << f
            self.r -= m << f


def input_table(gamma: float, q: np.ndarray) -> list[int]:
    """Joint table over symbol 0 (generation round) and ``1 + x*ny + y`` (test with inputs x, y)."""
    q = np.asarray(q, dtype=float)
    return fixed_point_table(np.concatenate([[1 - gamma], gamma * q.ravel()]))


def sample_inputs(gamma: float, q: np.ndarray, sampler: IntervalSampler,
                  table: list[int] | None = None) -> tuple[int, int, int]:
    """One round's ``(T, X, Y)``; generation rounds return ``(0, 0, 0)``."""
    q = np.asarray(q, dtype=float)
    if gamma == 0:
        return 0, 0, 0
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    s = sampler.draw(table if table is not None else input_table(gamma, q))
    if s == 0:
        return 0, 0, 0
    x, y = divmod(s - 1, q.shape[1])
    return 1, x, y


@dataclass(frozen=True)
class RoundRecord:
    T: int
    X: int
    Y: int
    B: int
    C: int | None

    def __post_init__(self):
        if self.T == 0 and (self.X, self.Y, self.C) != (0, 0, None):
            raise ValueError("generation rounds use inputs (0, 0) and no score")
        if self.T == 1 and self.C not in (0, 1):
            raise ValueError("test rounds carry a score")


@dataclass
class Transcript:
    """Packed record of one protocol run.

    ``T`` and ``B`` are per-round bit arrays; test rounds are kept sparsely as
    parallel arrays ``test_index``, ``test_x``, ``test_y``, ``test_c``.
    """

    n: int
    gamma: float
    T: np.ndarray
    B: np.ndarray
    test_index: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    test_c: np.ndarray
    seed_id: str = ""
    accepted: bool | None = None
    seed_bits: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def n_test(self) -> int:
        return int(self.test_index.size)

    @property
    def n_win(self) -> int:
        return int(np.count_nonzero(self.test_c))

    @property
    def n_lost(self) -> int:
        return self.n_test - self.n_win

    def record(self, i: int) -> RoundRecord:
        j = np.searchsorted(self.test_index, i)
        if j < self.n_test and self.test_index[j] == i:
            return RoundRecord(1, int(self.test_x[j]), int(self.test_y[j]), int(self.B[i]), int(self.test_c[j]))
        return RoundRecord(0, 0, 0, int(self.B[i]), None)

    def records(self):
        for i in range(self.n):
            yield self.record(i)

    def check(self, game: GameSpec | None = None) -> None:
        """Verify counts and score consistency; raises ``ValueError`` on mismatch."""
        if not np.array_equal(np.flatnonzero(self.T), self.test_index):
            raise ValueError("test flags disagree with the sparse test list")
        if game is not None:
            expect = (self.B[self.test_index] == game.winning[self.test_x, self.test_y]).astype(np.uint8)
            if not np.array_equal(expect, self.test_c):
                raise ValueError("scores disagree with the game")

    # -- persistence ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        flag = {None: 0, True: 1, False: 2}[self.accepted]
        sid = self.seed_id.encode()
        head = MAGIC + struct.pack("<HBBqd", VERSION, flag, 0, self.n, self.gamma)
        body = [head, np.packbits(self.T).tobytes(), np.packbits(self.B).tobytes(),
                struct.pack("<qqH", self.n_test, self.seed_bits, len(sid)), sid]
        tests = np.zeros(self.n_test, dtype=[("i", "<i8"), ("x", "u1"), ("y", "u1"), ("c", "u1")])
        tests["i"], tests["x"], tests["y"], tests["c"] = self.test_index, self.test_x, self.test_y, self.test_c
        body.append(tests.tobytes())
        return b"".join(body)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Transcript":
        hsize = 4 + struct.calcsize("<HBBqd")
        if len(data) < hsize or data[:4] != MAGIC:
            raise TranscriptFormatError("not a transcript file")
        version, flag, _, n, gamma = struct.unpack_from("<HBBqd", data, 4)
        if version != VERSION:
            raise TranscriptFormatError(f"unsupported transcript version {version}")
        nb = (n + 7) // 8
        off = hsize
        try:
            T = np.unpackbits(np.frombuffer(data, np.uint8, nb, off), count=n)
            B = np.unpackbits(np.frombuffer(data, np.uint8, nb, off + nb), count=n)
            off += 2 * nb
            n_test, seed_bits, slen = struct.unpack_from("<qqH", data, off)
            off += struct.calcsize("<qqH")
            sid = data[off:off + slen].decode()
            off += slen
            tests = np.frombuffer(data, dtype=[("i", "<i8"), ("x", "u1"), ("y", "u1"), ("c", "u1")],
                                  count=n_test, offset=off)
        except (ValueError, struct.error) as exc:
            raise TranscriptFormatError(f"truncated transcript: {exc}") from None
        return cls(n, gamma, T, B, tests["i"].copy(), tests["x"].copy(), tests["y"].copy(), tests["c"].copy(),
                   sid, {0: None, 1: True, 2: False}[flag], seed_bits)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Transcript":
        return cls.from_bytes(Path(path).read_bytes())


class ReplayDevice:
    """Device that returns pre-recorded outcome bits in order."""

    def __init__(self, bits: np.ndarray):
        self.bits = np.asarray(bits, dtype=np.uint8)
        self.pos = 0

    @classmethod
    def from_file(cls, path: str | Path, n: int | None = None) -> "ReplayDevice":
        bits = np.unpackbits(np.frombuffer(Path(path).read_bytes(), np.uint8))
        return cls(bits if n is None else bits[:n])

    def outcome(self, x: int, y: int) -> int:
        if self.pos >= self.bits.size:
            raise ReplayUnderrun(f"replay exhausted after {self.pos} rounds")
        b = int(self.bits[self.pos])
        self.pos += 1
        return b


def _empty(n: int, gamma: float) -> Transcript:
    z = np.zeros(0, dtype=np.int64)
    return Transcript(n, gamma, np.zeros(n, np.uint8), np.zeros(n, np.uint8), z, z.astype(np.uint8),
                      z.astype(np.uint8), z.astype(np.uint8))


def run(n: int, gamma: float, game: GameSpec, device, source: BitSource,
        noise_rng: np.random.Generator | None = None, seed_id: str = "") -> Transcript:
    """Execute ``n`` rounds sequentially.

    Each round draws its inputs from ``source`` only after the previous round
    is committed.  ``device`` is a :class:`HonestDeviceModel` (simulated with
    ``noise_rng``) or anything with an ``outcome(x, y)`` method.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    tr = _empty(n, gamma)
    if n == 0:
        return tr
    sampler = IntervalSampler(source)
    table = input_table(gamma, game.q) if gamma > 0 else None
    if isinstance(device, HonestDeviceModel):
        if noise_rng is None:
            raise ValueError("simulated device needs a noise generator")
        means = device.quadrature_means()
        noise = noise_rng.standard_normal(n)  # device noise may be precomputed; inputs may not

        def outcome(i, x, y):
            return 0 if means[x, y] + noise[i] > 0 else 1
    else:
        def outcome(i, x, y):
            return device.outcome(x, y)

    start = source.consumed
    idx, xs, ys, cs = [], [], [], []
    T, B = tr.T, tr.B
    win = game.winning
    for i in range(n):
        t, x, y = sample_inputs(gamma, game.q, sampler, table) if gamma > 0 else (0, 0, 0)
        b = outcome(i, x, y)
        B[i] = b
        if t:
            T[i] = 1
            idx.append(i)
            xs.append(x)
            ys.append(y)
            cs.append(1 if b == win[x, y] else 0)
    tr.test_index = np.asarray(idx, dtype=np.int64)
    tr.test_x = np.asarray(xs, dtype=np.uint8)
    tr.test_y = np.asarray(ys, dtype=np.uint8)
    tr.test_c = np.asarray(cs, dtype=np.uint8)
    tr.seed_bits = source.consumed - start
    tr.extra["net_seed_bits"] = sampler.net_consumed - start
    tr.seed_id = seed_id
    return tr


def simulate_fast(n: int, gamma: float, game: GameSpec, device: HonestDeviceModel,
                  rng: np.random.Generator) -> Transcript:
    """Vectorized honest-device simulation for large desk runs.

    Inputs come from ``rng`` directly rather than the metered interval
    sampler, so ``seed_bits`` is left at zero.  Statistically identical to
    :func:`run` with a simulated device.
    """
    tr = _empty(n, gamma)
    if n == 0:
        return tr
    nx, ny = game.shape
    test = rng.random(n) < gamma
    idx = np.flatnonzero(test)
    pairs = rng.choice(nx * ny, size=idx.size, p=game.q.ravel())
    x = np.zeros(n, dtype=np.int64)
    y = np.zeros(n, dtype=np.int64)
    x[idx], y[idx] = np.divmod(pairs, ny)
    means = device.quadrature_means()
    B = np.where(means[x, y] + rng.standard_normal(n) > 0, 0, 1).astype(np.uint8)
    tr.T = test.astype(np.uint8)
    tr.B = B
    tr.test_index = idx.astype(np.int64)
    tr.test_x = x[idx].astype(np.uint8)
    tr.test_y = y[idx].astype(np.uint8)
    tr.test_c = (B[idx] == game.winning[x[idx], y[idx]]).astype(np.uint8)
    return tr


def accept(tr: Transcript, omega: float, delta: float) -> bool:
    """Accept iff the lost test rounds do not exceed ``floor(n gamma (1 - omega + delta))``."""
    ok = tr.n_lost <= abort_threshold(tr.n, tr.gamma, omega, delta)
    tr.accepted = ok
    return ok


def raw_bits(tr: Transcript) -> bytes:
    """All outcome bits in round order, packed most-significant-bit first."""
    if tr.accepted is not True:
        raise PermissionError("raw output is only released for accepted transcripts")
    return np.packbits(tr.B).tobytes()

