#! /usr/bin/env python3
"""From observed statistics to certified bits.

An adversary may hold a copy of every state sent to the detector and may have
built the detector.  The only assumption is an upper bound on the state
overlaps.  A moment-matrix relaxation then bounds how well the adversary can
guess the output bit.  This script walks from the honest statistics to a
single-round entropy and then to a finite-size certified length.
"""

import numpy as np

from sdqre import entropy_account as ea
from sdqre.constellation import Constellation
from sdqre.game_builder import choose_delta, construct_game, expected_omega
from sdqre.honest_model import HonestDeviceModel, expected_distribution
from sdqre.pm_hierarchy import distribution_witness, guessing_bound, recheck_certificate

c = Constellation.qpsk_from_photon_number(1.638e-2, order=(0, 2, 3, 1))
gram = c.gram()
dist = expected_distribution(HonestDeviceModel(c, 0.917))


# =============================================================================
# Step 1: bound the guessing probability for the full table of statistics.
# The dual of that relaxation is a linear functional on P(b|x,y), a witness.
# Its value at the honest table is the bound itself.

w = distribution_witness(gram, dist, level=2)
print(f"guessing probability bound at the honest table: {w.value(dist):.6f}")

# Step 2: turn the witness into a spot-check game.  Each input pair gets a
# weight, and the outcome that lowers the witness counts as a win.

game = construct_game(w)
omega = expected_omega(game, dist)
print(game.to_table(), end="")
print(f"honest winning probability: {omega:.5f}")


# =============================================================================
# Step 3: a certificate for the game.  The relaxation is solved with only the
# winning probability fixed.  Its dual gives an affine bound
# p_guess <= c + lam * p_win that holds for every winning rate, not just the
# honest one.  Anyone can re-check it from the stored dual without solving.

gamma, n = 1.587e-4, 1e10
delta = 0.00189
cert = guessing_bound(gram, game.weights(), omega - delta, level=1)
print(f"certificate: c = {cert.c:.5f}, lambda = {cert.lam[1]:.5f}, "
      f"bound at the adjusted score = {cert.bound(omega - delta):.6f}")
print("re-verified residual:", recheck_certificate(gram, game.weights(), cert).residual)

# The entropy per round is lower bounded by 2 (1 - p_guess), a linear stand-in
# for -log2(p_guess).  It is tiny because the states overlap so much.

p = (1 - omega + delta, omega - delta)
print(f"single-round entropy bound: {ea.single_round_entropy_bound(cert, p):.5f} bits")


# =============================================================================
# Step 4: finite-size accounting.  Spot checking with test probability gamma
# keeps the seed cost low, but the correction terms grow like 1/gamma.  At
# 1e10 rounds nothing survives; the rate approaches the single-round value only
# at much larger n.

print(f"abort threshold: {ea.abort_threshold(n, gamma, omega, delta)} lost test rounds")
print(f"completeness error: {ea.completeness_error(n, gamma, omega, delta):.4e}")
print(f"delta for completeness 1e-3: {choose_delta(n, gamma, omega, 1e-3):.5f}")

cache = {}


def factory(nu):
    if nu not in cache:
        cache[nu] = guessing_bound(gram, game.weights(), nu, level=1)
    return cache[nu]


for rounds in (1e10, 1e12, 1e14):
    rep = ea.optimize_rate(rounds, gamma, omega, delta, game.q, factory, nu_points=11)
    print(f"n = {rounds:.0e}: gross {rep.gross_rate:.5f}  seed {rep.input_bits / rounds:.5f}  "
          f"net {rep.net_rate:+.5f} bits/round")
