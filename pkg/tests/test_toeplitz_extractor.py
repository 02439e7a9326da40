import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import gf2_hash
from sdqre.toeplitz_extractor import (ToeplitzSpec, extract_file, extract_stream, hash_block, hash_block_split,
                                      hash_blocks, measure_throughput, plan_geometry, read_seed_file,
                                      toeplitz_matrix, write_seed_file)


def test_one_by_one():
    spec = ToeplitzSpec(1, 1, [1])
    assert hash_block(spec, [1]).tolist() == [1]
    assert hash_block(spec, [0]).tolist() == [0]


def test_matches_naive_oracle(rng):
    for _ in range(500):
        n = int(rng.integers(1, 65))
        m = int(rng.integers(1, n + 1))
        spec = ToeplitzSpec.random(m, n, rng)
        b = rng.integers(0, 2, n, dtype=np.uint8)
        assert hash_block(spec, b).tolist() == gf2_hash(spec.seed, b, m, n)


def test_matrix_is_toeplitz(rng):
    spec = ToeplitzSpec.random(7, 20, rng)
    h = toeplitz_matrix(spec)
    assert np.all(h[1:, 1:] == h[:-1, :-1])
    # first row is the reversed seed prefix
    assert np.array_equal(h[0], spec.seed[:20][::-1])
    b = rng.integers(0, 2, 20, dtype=np.uint8)
    assert np.array_equal(hash_block(spec, b), (h.astype(int) @ b) % 2)


def test_split_published_geometry(rng):
    spec = ToeplitzSpec.random(45, 10000, rng)
    blocks = rng.integers(0, 2, (100, 10000), dtype=np.uint8)
    full = hash_blocks(spec, blocks)
    for k in range(100):
        assert np.array_equal(hash_block_split(spec, blocks[k], 1000), full[k])


def test_split_every_divisor(rng):
    spec = ToeplitzSpec.random(9, 60, rng)
    b = rng.integers(0, 2, 60, dtype=np.uint8)
    ref = hash_block(spec, b)
    for w in (d for d in range(1, 61) if 60 % d == 0):
        assert np.array_equal(hash_block_split(spec, b, w), ref)
    with pytest.raises(ValueError):
        hash_block_split(spec, b, 7)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2 ** 32 - 1))
def test_linear_over_gf2(n, s):
    r = np.random.default_rng(s)
    m = int(r.integers(1, n + 1))
    spec = ToeplitzSpec.random(m, n, r)
    a, b = r.integers(0, 2, (2, n), dtype=np.uint8)
    assert np.array_equal(hash_block(spec, a ^ b), hash_block(spec, a) ^ hash_block(spec, b))
    assert not hash_block(spec, np.zeros(n, np.uint8)).any()


def test_seed_sensitivity(rng):
    spec = ToeplitzSpec.random(5, 30, rng)
    b = np.zeros(30, np.uint8)
    b[0] = 1
    # the first input bit reads the column s_{n..n+m-1}
    for k in range(spec.seed_bits):
        seed = spec.seed.copy()
        seed[k] ^= 1
        diff = hash_block(ToeplitzSpec(5, 30, seed), b) ^ hash_block(spec, b)
        assert diff.any() == (k >= 29)


def test_validation():
    with pytest.raises(ValueError):
        ToeplitzSpec(3, 2, np.zeros(4))
    with pytest.raises(ValueError):
        ToeplitzSpec(2, 5, np.zeros(5))
    with pytest.raises(ValueError):
        ToeplitzSpec(1, 2, [0, 2])
    spec = ToeplitzSpec(2, 5, np.zeros(6))
    with pytest.raises(ValueError):
        hash_block(spec, np.zeros(4))
    with pytest.raises(ValueError):
        extract_stream(spec, np.zeros(4))


def test_stream_concatenates_blocks(rng):
    spec = ToeplitzSpec.random(3, 16, rng)
    raw = rng.integers(0, 2, 16 * 7 + 5, dtype=np.uint8)
    out = extract_stream(spec, raw)
    assert out.size == 7 * 3
    assert np.array_equal(out, np.concatenate([hash_block(spec, raw[16 * k:16 * (k + 1)]) for k in range(7)]))
    assert extract_stream(spec, raw[:16]).size == 3


def test_stream_fresh_matrices(rng):
    spec = ToeplitzSpec.random(3, 16, rng)
    raw = rng.integers(0, 2, 48, dtype=np.uint8)
    seeds = rng.integers(0, 2, 3 * spec.seed_bits, dtype=np.uint8)
    out = extract_stream(spec, raw, reuse_matrix=False, seed_stream=seeds)
    second = ToeplitzSpec(3, 16, seeds[spec.seed_bits:2 * spec.seed_bits])
    assert np.array_equal(out[3:6], hash_block(second, raw[16:32]))
    with pytest.raises(ValueError):
        extract_stream(spec, raw, reuse_matrix=False, seed_stream=seeds[:-1])
    with pytest.raises(ValueError):
        extract_stream(spec, raw, reuse_matrix=False)


def test_published_scale_arithmetic():
    m, ok = plan_geometry(0.00455, 10000)
    assert (m, ok) == (45, True)
    raw = 10.622e9
    out = int(raw) // 10000 * m
    assert abs(out - 47.8e6) <= 0.01e6 + m
    assert plan_geometry(1e-5, 10000) == (0, False)
    with pytest.raises(ValueError):
        plan_geometry(0.0, 100)


def test_seed_file(tmp_path, rng):
    bits = rng.integers(0, 2, 10044, dtype=np.uint8)
    path = tmp_path / "seed.bin"
    write_seed_file(path, bits)
    assert path.stat().st_size == 1256
    assert np.array_equal(read_seed_file(path, 10044), bits)
    with pytest.raises(ValueError):
        read_seed_file(path, 10060)


def test_extract_file(tmp_path, rng):
    spec = ToeplitzSpec.random(45, 10000, rng)
    raw = rng.integers(0, 2, 10000 * 37 + 123, dtype=np.uint8)
    src = tmp_path / "raw.bin"
    src.write_bytes(np.packbits(raw).tobytes())
    dst = tmp_path / "out.bin"
    used, produced = extract_file(spec, src, dst, blocks_per_chunk=5)
    assert (used, produced) == (370000, 37 * 45)
    got = np.unpackbits(np.frombuffer(dst.read_bytes(), np.uint8), count=produced)
    assert np.array_equal(got, extract_stream(spec, raw))


def test_throughput(rng):
    spec = ToeplitzSpec.random(45, 10000, rng)
    rate = max(measure_throughput(spec, 2000, rng) for _ in range(3))
    assert rate >= 100e6
