import math

import numpy as np
import pytest
from scipy import stats as sps

from qkdnet.channel import (
    RawBlock,
    dumps_raw_block,
    loads_raw_block,
    merge_stats,
    read_raw_block,
    simulate_block,
    simulate_subblocks,
    single_photon_truth,
    tally,
    write_raw_block,
)
from qkdnet.linkmodel import LinkParams, PulseClass, predict_statistics, preset, total_transmittance


def _manual_block(alice_bits, alice_bases, bob_bases, classes, det_index, det_bit):
    n = len(alice_bits)
    pk = lambda x: np.packbits(np.asarray(x, dtype=np.uint8))
    k = len(det_index)
    return RawBlock(
        n,
        pk(alice_bits),
        pk(alice_bases),
        pk(bob_bases),
        np.asarray(classes, dtype=np.uint8),
        np.asarray(det_index, dtype=np.int64),
        np.asarray(det_bit, dtype=np.uint8),
        np.ones(k, dtype=np.uint8),
        np.zeros(k, dtype=bool),
    )


def test_rejects_zero_pulses():
    with pytest.raises(ValueError):
        simulate_block(LinkParams(), 0, seed=1)


def test_total_loss_no_dark_counts_gives_nothing():
    p = LinkParams(det_efficiency=0.0, y0=0.0)
    assert simulate_block(p, 200_000, seed=1).n_detections == 0


def test_reproducible_and_seed_sensitive():
    p = preset("ustc-xinglin")
    a = simulate_block(p, 500_000, seed=7)
    b = simulate_block(p, 500_000, seed=7)
    c = simulate_block(p, 500_000, seed=8)
    assert a == b
    assert a != c


def test_block_invariants():
    p = preset("ustc-xinglin")
    blk = simulate_block(p, 1_000_000, seed=2)
    assert np.all(np.diff(blk.det_index) > 0)
    assert blk.det_index[-1] < blk.pulse_count
    assert blk.alice_bits.size == blk.pulse_count
    assert set(np.unique(blk.pulse_classes)) <= {0, 1, 2}


def test_dead_time_gap_between_genuine_detections():
    # 20 us at 4 MHz blinds the next 80 gates, so consecutive clicks are at
    # least 81 indices apart (80 pulses strictly between them).
    p = preset("ustc-xinglin", afterpulse_prob=0.0, y0=1e-3)
    blk = simulate_block(p, 4_000_000, seed=3)
    assert np.diff(blk.det_index).min() >= 81
    p2 = preset("ustc-xinglin")
    blk2 = simulate_block(p2, 4_000_000, seed=4)
    genuine = blk2.det_index[~blk2.det_afterpulse]
    assert np.diff(genuine).min() >= 81


def test_gap_distribution_geometric_without_detector_effects():
    p = preset("ustc-xinglin", dead_time_s=0.0, afterpulse_prob=0.0, state_mix=(1, 1, 1), mu=0.65, nu=0.64999)
    blk = simulate_block(p, 8_000_000, seed=11)
    gaps = np.diff(blk.det_index)
    q = blk.n_detections / blk.pulse_count
    # bin gaps into quantile bins of the geometric law
    qs = np.linspace(0, 1, 21)[1:-1]
    cuts = sps.geom.ppf(qs, q)
    cuts = np.unique(cuts)
    obs = np.histogram(gaps, bins=np.concatenate([[0.5], cuts + 0.5, [np.inf]]))[0]
    cdf = np.concatenate([[0.0], sps.geom.cdf(cuts, q), [1.0]])
    exp = np.diff(cdf) * gaps.size
    chi2 = ((obs - exp) ** 2 / exp).sum()
    pval = sps.chi2.sf(chi2, obs.size - 1)
    assert pval > 0.001


def _z(k, n, p):
    return (k - n * p) / np.sqrt(n * p * (1 - p))


def test_class_gains_match_prediction():
    p = preset("ustc-xinglin")
    pred = predict_statistics(p, detector_effects=True)
    st = tally(simulate_block(p, 10_000_000, seed=5))
    for c, g in zip(PulseClass, pred.gains):
        assert abs(_z(st[c].detected, st[c].sent, g)) < 3


def test_vacuum_gain_is_y0_without_detector_effects():
    p = preset("ustc-xinglin", afterpulse_prob=0.0, dead_time_s=0.0)
    st = tally(simulate_block(p, 10_000_000, seed=6))[PulseClass.VACUUM]
    assert abs(_z(st.detected, st.sent, p.y0)) < 3


def test_vacuum_gain_with_detector_effects():
    # dead time after signal clicks blinds vacuum gates too; afterpulses add clicks
    p = preset("ustc-xinglin")
    st = tally(simulate_block(p, 10_000_000, seed=6))[PulseClass.VACUUM]
    pred = predict_statistics(p, detector_effects=True).q_vacuum
    assert abs(_z(st.detected, st.sent, pred)) < 3


def test_tally_empty_detections():
    blk = _manual_block([0, 1, 0, 1], [0, 0, 1, 1], [0, 0, 1, 1], [0, 1, 2, 0], [], [])
    st = tally(blk)
    assert all(st[c].detected == 0 and st[c].errored == 0 for c in PulseClass)
    assert st[PulseClass.SIGNAL].sent == 2


def test_tally_one_flipped_matching_detection():
    blk = _manual_block([1, 0, 0], [0, 1, 1], [0, 0, 1], [0, 0, 0], [0], [0])
    st = tally(blk)[PulseClass.SIGNAL]
    assert (st.detected, st.sifted, st.errored) == (1, 1, 1)


def test_tally_mismatched_basis_not_counted_as_error():
    blk = _manual_block([1, 0, 0], [0, 1, 1], [1, 0, 1], [0, 0, 0], [0], [0])
    st = tally(blk)[PulseClass.SIGNAL]
    assert (st.detected, st.sifted, st.errored) == (1, 0, 0)


def test_raw_block_rejects_bad_indices():
    with pytest.raises(ValueError):
        _manual_block([0] * 4, [0] * 4, [0] * 4, [0] * 4, [2, 1], [0, 0])


def test_binary_record_round_trip(tmp_path):
    p = preset("binhu-ustc")
    blk = simulate_block(p, 300_001, seed=[1, 2])
    again = loads_raw_block(dumps_raw_block(blk), params=p)
    assert again == blk and again.rng_seed == blk.rng_seed
    path = tmp_path / "b.qkdraw"
    write_raw_block(path, blk)
    assert read_raw_block(path) == blk
    with pytest.raises(ValueError):
        loads_raw_block(dumps_raw_block(blk), params=preset("ustc-xinglin"))
    with pytest.raises(ValueError):
        loads_raw_block(b"NOTRAW" + dumps_raw_block(blk)[6:])


def test_subblocks_and_merge():
    p = preset("ustc-xinglin")
    parts = simulate_subblocks(p, 2_500_000, seed=9, max_pulses=1_000_000)
    assert [b.pulse_count for b in parts] == [1_000_000, 1_000_000, 500_000]
    merged = merge_stats(tally(b) for b in parts)
    assert sum(merged[c].sent for c in PulseClass) == 2_500_000


def test_single_photon_truth_near_model():
    p = preset("ustc-xinglin")
    truth = single_photon_truth(simulate_block(p, 10_000_000, seed=10))
    eta = total_transmittance(p)
    ideal_q1 = p.mu * math.exp(-p.mu) * (p.y0 + eta)
    # genuine clicks are thinned by the dead-time renewal cycle
    w = p.class_fractions
    p_bar = sum(wi * (p.y0 - math.expm1(-eta * m)) for wi, m in zip(w, p.intensities))
    a = p.afterpulse_prob / (1 - p.afterpulse_prob)
    d = p.dead_time_pulses
    thin = (1 / p_bar) / (1 / p_bar + d + a * (1 + d))
    assert truth.gain == pytest.approx(ideal_q1 * thin, rel=0.03)
    assert 0 < truth.error_rate < 0.05
