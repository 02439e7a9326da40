#! /usr/bin/env python3
"""A desk-scale protocol run, from seed bits to extracted output.

Rounds are either generation rounds with fixed inputs or, with probability
gamma, test rounds with inputs drawn from the game weights.  The seed needed to
choose them is metered bit by bit.  After the run the lost test rounds are
counted; if the count is below the threshold, the raw outcome string is hashed
down with a Toeplitz matrix.
"""

import numpy as np

from sdqre import entropy_account as ea
from sdqre.constellation import Constellation
from sdqre.game_builder import GameSpec, choose_delta, expected_omega
from sdqre.honest_model import HonestDeviceModel, expected_distribution
from sdqre.protocol_engine import BitSource, IntervalSampler, accept, input_table, raw_bits, run, simulate_fast
from sdqre.toeplitz_extractor import ToeplitzSpec, extract_stream, measure_throughput

dev = HonestDeviceModel(Constellation.qpsk_from_photon_number(1.638e-2, order=(0, 2, 3, 1)), 0.917)
dist = expected_distribution(dev)

# The spot-check game: input weights and the outcome that wins for each pair.

q = np.array([[0.0, 0.256], [0.0, 0.232], [0.244, 0.012], [0.244, 0.012]])
win = np.array([[0, 0], [0, 1], [1, 1], [0, 1]])
game = GameSpec(q / q.sum(), win)
omega = expected_omega(game, dist)


# =============================================================================
# Seed cost.  Each round's (T, X, Y) is one draw from a table with nine
# symbols.  The interval sampler reads seed bits only as needed, so the cost
# per round approaches the entropy of that table, h2(gamma) + gamma H(q).
# With only about 160 test rounds in 1e6 the realised cost fluctuates around it.

gamma = 1.587e-4
sampler = IntervalSampler(BitSource.from_seed(0))
table = input_table(gamma, game.q)
for _ in range(10 ** 6):
    sampler.draw(table)
print(f"seed bits per round: {sampler.net_consumed / 1e6:.5f} "
      f"(estimate {ea.input_randomness(1e6, gamma, game.q) / 1e6:.5f})")


# =============================================================================
# A run of 1e6 rounds with gamma = 0.05, with delta set so an honest device
# aborts with probability at most 1e-3.

n, gamma = 10 ** 6, 0.05
delta = choose_delta(n, gamma, omega, 1e-3)
game = game.with_params(omega, delta)
tr = run(n, gamma, game, dev, BitSource.from_seed(7), np.random.default_rng(7), seed_id="demo")
threshold = ea.abort_threshold(n, gamma, omega, delta)
print(f"{tr.n_test} test rounds, {tr.n_lost} lost, threshold {threshold}: accepted = {accept(tr, omega, delta)}")

# Repeating the run many times with the vectorized simulator shows how rarely
# an honest device fails the check.

rates = [accept(simulate_fast(n, gamma, game, dev, np.random.default_rng(s)), omega, delta) for s in range(50)]
print(f"honest acceptance over 50 runs: {np.mean(rates):.2f}")


# =============================================================================
# Extraction.  Nothing is certified at this size, so the 45 x 10000 geometry
# of a large run is used only to show the mechanics.

spec = ToeplitzSpec.random(45, 10000, np.random.default_rng(2))
bits = np.unpackbits(np.frombuffer(raw_bits(tr), np.uint8), count=tr.n)
out = extract_stream(spec, bits)
print(f"{bits.size} raw bits -> {out.size} output bits, ones fraction {out.mean():.3f}")
print(f"hash throughput: {measure_throughput(spec) / 1e6:.0f} Mbit/s")
