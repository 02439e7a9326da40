import sys
import zlib
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sdqre.constellation import Constellation
from sdqre.game_builder import GameSpec
from sdqre.honest_model import HonestDeviceModel, expected_distribution

from reference import DELTA_TABLE, ETA_EFF, MEAN_PHOTONS, PHASE_ORDER, WITNESS_Q, WITNESS_WIN


@pytest.fixture(scope="session")
def published_constellation():
    return Constellation.qpsk_from_photon_number(MEAN_PHOTONS, PHASE_ORDER)


@pytest.fixture(scope="session")
def published_gram(published_constellation):
    return published_constellation.gram()


@pytest.fixture(scope="session")
def published_device(published_constellation):
    return HonestDeviceModel(published_constellation, ETA_EFF)


@pytest.fixture(scope="session")
def published_dist(published_device):
    return expected_distribution(published_device)


@pytest.fixture(scope="session")
def published_game(published_dist):
    """Frozen witness game with the honest winning probability."""
    q = WITNESS_Q / WITNESS_Q.sum()
    g = GameSpec(q, WITNESS_WIN)
    from sdqre.game_builder import expected_omega
    return g.with_params(expected_omega(g, published_dist), DELTA_TABLE)


@pytest.fixture(scope="session")
def witness_l1(published_gram, published_dist):
    from sdqre.pm_hierarchy import distribution_witness
    return distribution_witness(published_gram, published_dist, 1)


@pytest.fixture(scope="session")
def witness_l2(published_gram, published_dist):
    from sdqre.pm_hierarchy import distribution_witness
    return distribution_witness(published_gram, published_dist, 2)


@pytest.fixture(scope="session")
def cert_l2(published_gram, published_game):
    """Level-2 certificate at the accepted score ``omega - delta``."""
    from sdqre.pm_hierarchy import guessing_bound
    return guessing_bound(published_gram, published_game.weights(), published_game.omega - 0.0019, 2)


@pytest.fixture(scope="session")
def cert_l1(published_gram, published_game):
    from sdqre.pm_hierarchy import guessing_bound
    return guessing_bound(published_gram, published_game.weights(), published_game.omega - 0.0019, 1)


@pytest.fixture
def rng(request):
    # stable per-test seed
    return np.random.default_rng(zlib.crc32(request.node.nodeid.encode()))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
