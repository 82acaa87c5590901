"""Decoy-state BB84 network simulator with a trusted relay.

Modules cover the link model and photon-level channel simulation, sifting,
decoy-state bounds, Cascade and Toeplitz post-processing, per-link key pools
with hop-by-hop forwarding, one-time-pad messaging, randomness tests and
scenario reports.
"""

from .cascade import CascadeResult, cascade_correct
from .channel import RawBlock, simulate_block, single_photon_truth, tally
from .decoy import (
    DecoyEstimate,
    DecoyStateEstimator,
    analyze,
    analyze_measured,
    binary_entropy,
    confidence_from_sigma,
    key_rate,
)
from .errors import (
    AbortBlockError,
    BoundUnavailableError,
    DegenerateStatisticsError,
    FrameError,
    InsufficientDataError,
    KeyExhaustedError,
    ParameterDomainError,
    QKDError,
    StarvationError,
)
from .keynet import Network, RelayRoute, accounting_required, relay_forward
from .linkmodel import LINK_ENDPOINTS, PRESETS, LinkParams, PulseClass, PulseClassStats, predict_statistics, preset
from .otp import OtpSession, broadcast_send, duplex_send, otp_decrypt, otp_encrypt
from .pipeline import BlockOutcome, process_block
from .postproc import KeyBlock, Stage, compute_final_length, privacy_amplify
from .randtest import RandomnessBattery, TestReport, battery, block_frequency_test, monobit_test, runs_test
from .scenario import Scenario, ScenarioReport, emit_report, run_scenario
from .sifting import SiftedKey, estimate_qber, sift
from .toeplitz import ToeplitzHasher, ToeplitzSeed, toeplitz_hash

__version__ = "0.1.0"

__all__ = [
    "AbortBlockError",
    "BlockOutcome",
    "BoundUnavailableError",
    "CascadeResult",
    "DecoyEstimate",
    "DecoyStateEstimator",
    "DegenerateStatisticsError",
    "FrameError",
    "InsufficientDataError",
    "KeyBlock",
    "KeyExhaustedError",
    "LINK_ENDPOINTS",
    "LinkParams",
    "Network",
    "OtpSession",
    "PRESETS",
    "ParameterDomainError",
    "PulseClass",
    "PulseClassStats",
    "QKDError",
    "RandomnessBattery",
    "RawBlock",
    "RelayRoute",
    "Scenario",
    "ScenarioReport",
    "SiftedKey",
    "Stage",
    "StarvationError",
    "TestReport",
    "ToeplitzHasher",
    "ToeplitzSeed",
    "accounting_required",
    "analyze",
    "analyze_measured",
    "battery",
    "binary_entropy",
    "block_frequency_test",
    "broadcast_send",
    "cascade_correct",
    "compute_final_length",
    "confidence_from_sigma",
    "duplex_send",
    "emit_report",
    "estimate_qber",
    "key_rate",
    "monobit_test",
    "otp_decrypt",
    "otp_encrypt",
    "predict_statistics",
    "preset",
    "privacy_amplify",
    "process_block",
    "relay_forward",
    "run_scenario",
    "runs_test",
    "sift",
    "simulate_block",
    "single_photon_truth",
    "tally",
    "toeplitz_hash",
]
