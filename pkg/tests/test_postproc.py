import math

import numpy as np
import pytest

from qkdnet.decoy import analyze_measured, binary_entropy
from qkdnet.linkmodel import preset
from qkdnet.pipeline import process_block
from qkdnet.postproc import KeyBlock, Stage, compute_final_length, privacy_amplify
from qkdnet.scenario import REFERENCE_MEASURED
from qkdnet.toeplitz import SeedRegistry, SeedReuseError, ToeplitzSeed, toeplitz_hash


def test_key_block_stage_forward_only():
    b = KeyBlock("l", Stage.SIFTED, np.zeros(10, np.uint8))
    c = b.advance(Stage.CORRECTED, np.ones(10, np.uint8), leaked_bits=5)
    assert c.stage == Stage.CORRECTED and c.leaked_bits == 5
    with pytest.raises(ValueError):
        c.advance(Stage.SIFTED, c.bits)
    with pytest.raises(ValueError):
        KeyBlock("l", Stage.SIFTED, np.zeros(4, np.uint8), leaked_bits=1)


def test_final_length_formula_and_clamps():
    est = analyze_measured(**REFERENCE_MEASURED)
    n = 10_000
    info = n * est.q1_lower / est.q_mu * (1 - binary_entropy(est.e1_upper))
    assert compute_final_length(n, est, 100, 128) == math.floor(info) - 228
    assert compute_final_length(n, est, 10**6) == 0
    bad = analyze_measured(**{**REFERENCE_MEASURED, "q_nu": 1e-4})
    assert not bad.valid and compute_final_length(n, bad, 0) == 0


def test_final_rate_at_reference_values():
    # reference bounds with f = 1.66 leakage over a 120 s block of 9540 bps sifted key
    est = analyze_measured(**REFERENCE_MEASURED)
    est = type(est)(**{**est.__dict__, "q1_lower": 2.72e-3, "e1_upper": 2.23e-2})
    n = 120 * 9540
    leaked = math.ceil(1.66 * n * binary_entropy(1.44e-2))
    kbps = compute_final_length(n, est, leaked) / 120 / 1e3
    assert 1.65 * 0.85 <= kbps <= 1.65 * 1.15


def test_privacy_amplify_claims_seed():
    rng = np.random.default_rng(0)
    bits = rng.integers(0, 2, 500, dtype=np.uint8)
    blk = KeyBlock("l", Stage.CORRECTED, bits, 10)
    seed = ToeplitzSeed.generate(500, 100, rng)
    reg = SeedRegistry()
    out = privacy_amplify(blk, 100, seed, reg)
    assert out.stage == Stage.FINAL and len(out) == 100
    assert np.array_equal(out.bits, toeplitz_hash(bits, seed, 100))
    with pytest.raises(SeedReuseError):
        privacy_amplify(blk, 100, seed, reg)
    with pytest.raises(ValueError):
        privacy_amplify(KeyBlock("l", Stage.SIFTED, bits), 100, seed)


def test_process_block_end_to_end():
    p = preset("ustc-xinglin")
    out = process_block(p, "ustc-xinglin", seed=1, pulse_count=40_000_000)
    assert out.error == ""
    assert out.ec_verified
    assert out.final_length > 0
    assert np.array_equal(out.final_alice.bits, out.final_bob.bits)
    assert out.estimate.q1_lower <= out.truth_q1
    assert out.estimate.e1_upper >= out.truth_e1
    assert 1.0 <= out.estimate.f <= 1.35


def test_process_block_records_failure_instead_of_raising():
    p = preset("ustc-xinglin")
    out = process_block(p, "x", seed=2, pulse_count=100_000)
    assert out.final_length == 0 and out.error
