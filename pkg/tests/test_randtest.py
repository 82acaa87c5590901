import math

import numpy as np
import pytest
from scipy.special import gammaincc

from qkdnet.errors import InsufficientDataError
from qkdnet.randtest import (
    RandomnessBattery,
    TestReport,
    battery,
    block_frequency_test,
    monobit_test,
    runs_test,
)


def _prng(n, seed=0):
    return np.random.default_rng(seed).integers(0, 2, n, dtype=np.uint8)


def test_monobit_examples():
    alt = np.tile([0, 1], 500)
    assert monobit_test(alt).p_value == pytest.approx(1.0)
    r = monobit_test(np.ones(1000, np.uint8))
    assert r.p_value < 1e-10 and not r.passed
    with pytest.raises(InsufficientDataError):
        monobit_test(np.ones(99, np.uint8))


def test_runs_alternating_fails():
    r = runs_test(np.tile([0, 1], 500))
    assert r.statistic == 1000
    # hand evaluation of the normal approximation: pi = 1/2
    assert r.p_value == pytest.approx(math.erfc(abs(1000 - 500) / (2 * math.sqrt(2000) * 0.25)))
    assert r.p_value < 1e-10 and not r.passed


def test_runs_prerequisite():
    r = runs_test(np.ones(1000, np.uint8))
    assert not r.applicable and not r.passed


def test_block_frequency_balanced_and_one_bad_block():
    M = 10
    balanced = np.tile([0, 1], 50 * M)
    r = block_frequency_test(balanced, M)
    assert r.statistic == 0 and r.p_value == 1.0
    bad = balanced.copy()
    bad[:M] = 1
    r = block_frequency_test(bad, M)
    assert r.statistic == pytest.approx(4 * M * 0.25)
    assert r.p_value == pytest.approx(gammaincc(100 / 2, 4 * M * 0.25 / 2))
    with pytest.raises(InsufficientDataError):
        block_frequency_test(balanced[:-1], M)


def test_p_value_range_and_pass_rule():
    with pytest.raises(ValueError):
        TestReport("x", 10, 0.0, 1.5, True)
    r = monobit_test(_prng(1000), alpha=0.01)
    assert r.passed == (r.p_value >= 0.01)


def test_counter_bits_fail():
    counter = np.unpackbits(np.arange(20_000, dtype=">u2").view(np.uint8))
    s = battery(counter, block_bits=20_000)
    assert s.pass_rate("runs") < 0.95 or s.pass_rate("block_frequency") < 0.95


def test_all_zero_input_fails_everything():
    s = battery(np.zeros(20_000, np.uint8))
    assert all(r.pass_rate == 0 for r in s.rows)


def test_prng_fixture_passes():
    s = battery(_prng(2_000_000, 1), block_bits=20_000)
    assert s.all_pass(0.95)
    assert "pass-rate" in s.table()


def test_p_values_uniform_under_null():
    reports = battery(_prng(1000 * 20_000, 2), block_bits=20_000).reports
    for j in range(3):
        frac = np.mean([rep[j].p_value < 0.01 for rep in reports])
        assert abs(frac - 0.01) <= 3 * math.sqrt(0.01 * 0.99 / 1000)


def test_deterministic():
    bits = _prng(50_000, 3)
    assert battery(bits).to_dict() == battery(bits).to_dict()


def test_estimator_wrapper():
    X = _prng(40 * 20_000, 4).reshape(40, 20_000)
    est = RandomnessBattery(alpha=0.008).fit(X)
    assert est.passed_ and set(est.pass_rates_) == {"monobit", "block_frequency", "runs"}
    assert 0.9 <= est.score(X) <= 1.0
