"""Certification and simulation tools for semi-device-independent randomness
expansion with homodyne detection.

Modules
-------
constellation
    Coherent-state constellations and overlaps.
honest_model
    Detector efficiency budget and honest outcome statistics.
sdp_core
    Dense primal-dual interior-point SDP solver.
pm_hierarchy
    Moment relaxations for prepare-and-measure guessing probabilities.
game_builder
    Games from linear witnesses, completeness-driven tolerance choice.
entropy_account
    Entropy accumulation, completeness and output-length arithmetic.
protocol_engine
    Spot-checking protocol runs and transcripts.
toeplitz_extractor
    Toeplitz hashing over GF(2).
cli
    Config-driven pipeline and command-line entry point.
"""

from .constellation import Constellation, gram_matrix, overlap
from .entropy_account import CertificationParams, CertificationReport, optimize_rate
from .game_builder import GameSpec, choose_delta, construct_game
from .honest_model import ConditionalDistribution, HonestDeviceModel, expected_distribution
from .pm_hierarchy import DistributionWitness, DualCertificate, distribution_witness, guessing_bound
from .sdp_core import SdpProblem, SdpSolution, Status, solve
from .toeplitz_extractor import ToeplitzSpec, extract_stream, hash_block

__version__ = "0.1.0"

__all__ = [
    "Constellation", "gram_matrix", "overlap",
    "CertificationParams", "CertificationReport", "optimize_rate",
    "GameSpec", "choose_delta", "construct_game",
    "ConditionalDistribution", "HonestDeviceModel", "expected_distribution",
    "DistributionWitness", "DualCertificate", "distribution_witness", "guessing_bound",
    "SdpProblem", "SdpSolution", "Status", "solve",
    "ToeplitzSpec", "extract_stream", "hash_block",
]
