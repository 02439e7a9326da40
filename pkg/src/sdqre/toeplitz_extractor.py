"""Toeplitz hashing over GF(2) with word-parallel kernels.

Layout: with a seed ``s_1 .. s_{n+m-1}`` the matrix entry is
``H[i][j] = s_{n-j+i}`` (1-based), so the first row is the reversed seed
prefix.  Bits are packed most-significant-bit first in every byte.  Output
bit ``i`` is row ``i`` of ``H b``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

__all__ = [
    "ToeplitzSpec",
    "toeplitz_matrix",
    "hash_block",
    "hash_block_split",
    "hash_blocks",
    "extract_stream",
    "extract_file",
    "plan_geometry",
    "read_seed_file",
    "write_seed_file",
    "measure_throughput",
]


def _as_bits(a) -> np.ndarray:
    b = np.asarray(a, dtype=np.uint8).ravel()
    if b.size and b.max() > 1:
        raise ValueError("bit arrays must contain only 0 and 1")
    return b


def _pack_words(bits: np.ndarray) -> np.ndarray:
    """Pack trailing-axis bits MSB-first into uint64 words (zero padded)."""
    bits = np.asarray(bits, dtype=np.uint8)
    n = bits.shape[-1]
    pad = (-n) % 64
    if pad:
        bits = np.concatenate([bits, np.zeros(bits.shape[:-1] + (pad,), np.uint8)], axis=-1)
    packed = np.packbits(bits, axis=-1)
    return np.ascontiguousarray(packed).view(np.uint64)


@dataclass(frozen=True)
class ToeplitzSpec:
    """Geometry and seed of one Toeplitz hash.

    Parameters
    ----------
    m : int
        Output bits per block.
    n_blk : int
        Input bits per block.
    seed : array of bits
        Exactly ``n_blk + m - 1`` bits.
    width : int
        Default sub-block width for :func:`hash_block_split`.
    """

    m: int
    n_blk: int
    seed: np.ndarray
    width: int = 1000
    _windows: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 1 <= self.m <= self.n_blk:
            raise ValueError("need 1 <= m <= n_blk")
        seed = _as_bits(self.seed)
        if seed.size != self.n_blk + self.m - 1:
            raise ValueError(f"seed must have n_blk + m - 1 = {self.n_blk + self.m - 1} bits, got {seed.size}")
        seed.setflags(write=False)
        object.__setattr__(self, "seed", seed)
        # row i of H is seed[i : i + n_blk] reversed
        rows = np.lib.stride_tricks.sliding_window_view(seed, self.n_blk)[: self.m, ::-1]
        object.__setattr__(self, "_windows", _pack_words(rows))

    @classmethod
    def random(cls, m: int, n_blk: int, rng: np.random.Generator, width: int = 1000) -> "ToeplitzSpec":
        return cls(m, n_blk, rng.integers(0, 2, n_blk + m - 1, dtype=np.uint8), width)

    @property
    def seed_bits(self) -> int:
        return self.n_blk + self.m - 1


def toeplitz_matrix(spec: ToeplitzSpec) -> np.ndarray:
    """Dense ``m x n_blk`` 0/1 matrix, mainly for checks."""
    i = np.arange(spec.m)[:, None]
    j = np.arange(spec.n_blk)[None, :]
    return spec.seed[spec.n_blk - 1 - j + i]


def hash_blocks(spec: ToeplitzSpec, blocks: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Hash a ``(k, n_blk)`` array of bit blocks into ``(k, m)`` output bits."""
    blocks = np.asarray(blocks, dtype=np.uint8)
    if blocks.ndim != 2 or blocks.shape[1] != spec.n_blk:
        raise ValueError(f"blocks must have shape (k, {spec.n_blk})")
    out = np.empty((blocks.shape[0], spec.m), dtype=np.uint8)
    win = spec._windows
    for s in range(0, blocks.shape[0], chunk):
        words = _pack_words(blocks[s:s + chunk])
        counts = np.bitwise_count(words[:, None, :] & win[None, :, :]).sum(axis=2, dtype=np.int64)
        out[s:s + chunk] = counts & 1
    return out


def hash_block(spec: ToeplitzSpec, bits) -> np.ndarray:
    """``z = H b`` over GF(2) for one block of ``n_blk`` bits."""
    b = _as_bits(bits)
    if b.size != spec.n_blk:
        raise ValueError(f"input must have {spec.n_blk} bits, got {b.size}")
    return hash_blocks(spec, b[None, :])[0]


def hash_block_split(spec: ToeplitzSpec, bits, width: int | None = None) -> np.ndarray:
    """Same as :func:`hash_block`, accumulated over column sub-blocks of ``width`` bits."""
    width = spec.width if width is None else width
    b = _as_bits(bits)
    if b.size != spec.n_blk:
        raise ValueError(f"input must have {spec.n_blk} bits, got {b.size}")
    if width < 1 or spec.n_blk % width:
        raise ValueError("width must divide n_blk")
    acc = np.zeros(spec.m, dtype=np.uint8)
    i = np.arange(spec.m)[:, None]
    for j0 in range(0, spec.n_blk, width):
        j = np.arange(j0, j0 + width)[None, :]
        sub = _pack_words(spec.seed[spec.n_blk - 1 - j + i])
        part = np.bitwise_count(sub & _pack_words(b[j0:j0 + width])[None, :]).sum(axis=1)
        acc ^= (part & 1).astype(np.uint8)
    return acc


def extract_stream(spec: ToeplitzSpec, raw, reuse_matrix: bool = True,
                   seed_stream=None) -> np.ndarray:
    """Hash consecutive ``n_blk``-bit blocks; a trailing partial block is dropped.

    With ``reuse_matrix=False`` every block uses a fresh seed of
    ``n_blk + m - 1`` bits taken in order from ``seed_stream``.
    """
    raw = _as_bits(raw)
    nb = raw.size // spec.n_blk
    if nb == 0:
        raise ValueError("stream shorter than one block")
    blocks = raw[: nb * spec.n_blk].reshape(nb, spec.n_blk)
    if reuse_matrix:
        return hash_blocks(spec, blocks).ravel()
    if seed_stream is None:
        raise ValueError("fresh matrices need a seed stream")
    seeds = _as_bits(seed_stream)
    if seeds.size < nb * spec.seed_bits:
        raise ValueError(f"seed stream too short: need {nb * spec.seed_bits} bits")
    out = [hash_block(ToeplitzSpec(spec.m, spec.n_blk, seeds[k * spec.seed_bits:(k + 1) * spec.seed_bits],
                                   spec.width), blocks[k]) for k in range(nb)]
    return np.concatenate(out)


def _iter_blocks(path: Path, n_blk: int, blocks_per_chunk: int) -> Iterator[np.ndarray]:
    carry = np.zeros(0, dtype=np.uint8)
    step = max(1, (n_blk * blocks_per_chunk) // 8)
    with open(path, "rb") as fh:
        while True:
            data = fh.read(step)
            if not data:
                break
            bits = np.concatenate([carry, np.unpackbits(np.frombuffer(data, np.uint8))])
            nb = bits.size // n_blk
            if nb:
                yield bits[: nb * n_blk].reshape(nb, n_blk)
            carry = bits[nb * n_blk:]


def extract_file(spec: ToeplitzSpec, in_path: str | Path, out_path: str | Path,
                 blocks_per_chunk: int = 512) -> tuple[int, int]:
    """Stream a packed raw-bit file through the extractor.

    Returns ``(raw_bits_used, output_bits)``.  Output is packed MSB-first;
    the final byte is zero padded when the output length is not a multiple
    of 8.
    """
    used = 0
    pending = np.zeros(0, dtype=np.uint8)
    with open(out_path, "wb") as out:
        for blocks in _iter_blocks(Path(in_path), spec.n_blk, blocks_per_chunk):
            z = np.concatenate([pending, hash_blocks(spec, blocks).ravel()])
            whole = z.size - z.size % 8
            out.write(np.packbits(z[:whole]).tobytes())
            pending = z[whole:]
            used += blocks.size
        if pending.size:
            out.write(np.packbits(pending).tobytes())
    return used, used // spec.n_blk * spec.m


def plan_geometry(gross_rate: float, n_blk: int) -> tuple[int, bool]:
    """Output bits per block ``floor(gross_rate * n_blk)``; the flag is ``False`` when that is 0."""
    if not 0 < gross_rate < 1:
        raise ValueError("gross rate must lie in (0, 1)")
    m = int(math.floor(gross_rate * n_blk))
    return m, m > 0


def read_seed_file(path: str | Path, n_bits: int) -> np.ndarray:
    """Read exactly ``ceil(n_bits / 8)`` bytes and return the first ``n_bits`` bits."""
    data = Path(path).read_bytes()
    need = (n_bits + 7) // 8
    if len(data) != need:
        raise ValueError(f"seed file must have exactly {need} bytes, found {len(data)}")
    return np.unpackbits(np.frombuffer(data, np.uint8), count=n_bits)


def write_seed_file(path: str | Path, bits) -> None:
    Path(path).write_bytes(np.packbits(_as_bits(bits)).tobytes())


def measure_throughput(spec: ToeplitzSpec, n_blocks: int = 2000, rng: np.random.Generator | None = None) -> float:
    """Raw input bits hashed per second on random data."""
    rng = rng or np.random.default_rng(0)
    blocks = rng.integers(0, 2, (n_blocks, spec.n_blk), dtype=np.uint8)
    t = time.perf_counter()
    hash_blocks(spec, blocks)
    return blocks.size / (time.perf_counter() - t)
