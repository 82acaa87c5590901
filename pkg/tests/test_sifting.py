import numpy as np
import pytest

from qkdnet.channel import simulate_block
from qkdnet.errors import InsufficientDataError
from qkdnet.linkmodel import LinkParams, PulseClass, PulseClassStats, predict_statistics, preset
from qkdnet.sifting import SiftedKey, concat_sifted, estimate_qber, sift, sifted_rate


def _key(a, b):
    return SiftedKey("l", PulseClass.SIGNAL, np.asarray(a, np.uint8), np.asarray(b, np.uint8))


def test_all_bases_equal_keeps_everything():
    p = preset("ustc-xinglin")
    blk = simulate_block(p, 1_000_000, seed=1)
    blk.bob_bases_packed[:] = blk.alice_bases_packed
    keys = sift(blk)
    assert sum(len(k) for k in keys.values()) == blk.n_detections


def test_retained_fraction_near_half():
    blk = simulate_block(preset("ustc-xinglin"), 10_000_000, seed=2)
    kept = sum(len(k) for k in sift(blk).values())
    n = blk.n_detections
    assert abs(kept - n / 2) < 3 * np.sqrt(n / 4)


def test_sifting_preserves_values_and_order():
    blk = simulate_block(preset("ustc-xinglin"), 1_000_000, seed=3)
    keys = sift(blk)
    match = blk.det_basis_match() & (blk.det_classes() == PulseClass.SIGNAL)
    assert np.array_equal(keys[PulseClass.SIGNAL].bits_bob, blk.det_bit[match])
    assert np.array_equal(keys[PulseClass.SIGNAL].bits_alice, blk.det_alice_bits()[match])


def test_error_free_channel_gives_identical_keys():
    p = preset("ustc-xinglin", e_det=0.0, y0=0.0, afterpulse_prob=0.0)
    keys = sift(simulate_block(p, 1_000_000, seed=4))
    for k in keys.values():
        assert np.array_equal(k.bits_alice, k.bits_bob)


def test_zero_detections_give_empty_keys():
    p = LinkParams(det_efficiency=0.0, y0=0.0)
    keys = sift(simulate_block(p, 10_000, seed=5))
    assert all(len(k) == 0 for k in keys.values())


def test_estimate_identical_and_complement():
    a = np.random.default_rng(0).integers(0, 2, 1000, dtype=np.uint8)
    q, rest = estimate_qber(_key(a, a), 0.1, seed=1)
    assert q == 0.0 and len(rest) == 900
    q, _ = estimate_qber(_key(a, 1 - a), 0.1, seed=1)
    assert q == 1.0


def test_estimate_discards_sample():
    a = np.arange(1000) % 2
    _, rest = estimate_qber(_key(a, a), 0.25, seed=2)
    assert len(rest) == 750 and rest.sample_qber[1] == 250


def test_estimate_rejects_short_and_bad_fraction():
    with pytest.raises(InsufficientDataError):
        estimate_qber(_key([0] * 99, [0] * 99))
    with pytest.raises(ValueError):
        estimate_qber(_key([0] * 200, [0] * 200), sample_fraction=1.0)


def test_estimate_unbiased():
    rng = np.random.default_rng(3)
    n, e = 5000, 0.03
    a = rng.integers(0, 2, n, dtype=np.uint8)
    b = a ^ (rng.random(n) < e).astype(np.uint8)
    key = _key(a, b)
    true_e = key.true_qber
    ests = [estimate_qber(key, 0.1, seed=s)[0] for s in range(1000)]
    sd = np.sqrt(true_e * (1 - true_e) / 500)
    assert abs(np.mean(ests) - true_e) < 3 * sd / np.sqrt(1000)


def test_estimate_on_simulated_link():
    p = preset("ustc-xinglin")
    key = sift(simulate_block(p, 40_000_000, seed=6))[PulseClass.SIGNAL]
    q, _ = estimate_qber(key, 0.5, seed=7)
    e = predict_statistics(p, detector_effects=True).e_signal
    n = round(0.5 * len(key))
    assert abs(q - e) < 3 * np.sqrt(e * (1 - e) / n)
    assert e == pytest.approx(0.0144, abs=0.001)


def test_sifted_rate_examples():
    p = LinkParams()
    s = PulseClassStats(PulseClass.SIGNAL, 1_000_000, 6360)
    assert sifted_rate(s, p) == pytest.approx(4e6 * 6.36e-3 * 0.75 * 0.5)
    assert sifted_rate(s, p) == pytest.approx(9540)
    assert sifted_rate(PulseClassStats(PulseClass.SIGNAL, 10, 0), p) == 0
    p3 = LinkParams(state_mix=(1, 1, 1))
    assert sifted_rate(s, p3) == pytest.approx(4e6 * 6.36e-3 / 3 / 2)


def test_concat():
    k = concat_sifted([_key([0, 1], [0, 1]), _key([1], [0])])
    assert len(k) == 3 and k.true_qber == pytest.approx(1 / 3)
