"""One processing block of one link: photons in, final key out."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cascade import cascade_correct
from .channel import SinglePhotonTruth, merge_stats, simulate_block, single_photon_truth, tally
from .decoy import DEFAULT_EC_EFFICIENCY, DecoyEstimate, analyze, binary_entropy
from .errors import QKDError
from .linkmodel import LinkParams, PulseClass, PulseClassStats
from .postproc import DEFAULT_SAFETY_MARGIN, KeyBlock, Stage, compute_final_length, privacy_amplify
from .sifting import concat_sifted, estimate_qber, sift
from .toeplitz import SeedRegistry, ToeplitzSeed

log = logging.getLogger(__name__)

# Floor on the QBER handed to Cascade so a lucky zero-error sample still
# yields a usable block size.
MIN_CASCADE_QBER = 1e-3


@dataclass
class BlockOutcome:
    link_id: str
    index: int
    pulses: int
    stats: dict
    estimate: DecoyEstimate | None = None
    n_sifted_signal: int = 0
    qber_sample: float | None = None
    n_key_after_sample: int = 0
    leaked_bits: int = 0
    ec_efficiency: float | None = None
    ec_verified: bool | None = None
    final_length: int = 0
    final_alice: KeyBlock | None = None
    final_bob: KeyBlock | None = None
    truth_q1: float | None = None
    truth_e1: float | None = None
    error: str = ""

    @property
    def final_bits(self):
        return self.final_alice.bits if self.final_alice is not None else np.zeros(0, dtype=np.uint8)


def _iter_subblocks(p, pulse_count, ss, max_pulses):
    pieces = -(-pulse_count // max_pulses)
    sizes = [max_pulses] * (pieces - 1) + [pulse_count - max_pulses * (pieces - 1)]
    for size, child in zip(sizes, ss.spawn(pieces)):
        yield simulate_block(p, size, child)


def process_block(
    p: LinkParams,
    link_id="link",
    seed=None,
    *,
    index=0,
    pulse_count=None,
    q=None,
    f_default=DEFAULT_EC_EFFICIENCY,
    sample_fraction=0.1,
    safety_margin=DEFAULT_SAFETY_MARGIN,
    registry: SeedRegistry | None = None,
    max_subblock=1 << 24,
    created_at=0.0,
):
    """Simulate, sift, analyse, correct and amplify one block.

    Failures of any stage are recorded in ``BlockOutcome.error`` and leave
    the block with zero final key rather than raising.
    """
    pulse_count = p.pulses_per_block if pulse_count is None else int(pulse_count)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sim_ss, proc_ss = ss.spawn(2)
    rng = np.random.default_rng(proc_ss)

    stats_parts = []
    signal_keys = []
    truth = SinglePhotonTruth()
    for raw in _iter_subblocks(p, pulse_count, sim_ss, max_subblock):
        stats_parts.append(tally(raw))
        signal_keys.append(sift(raw, link_id)[PulseClass.SIGNAL])
        truth = truth + single_photon_truth(raw)
        del raw
    stats = merge_stats(stats_parts)
    out = BlockOutcome(link_id, index, pulse_count, stats, truth_q1=truth.gain, truth_e1=truth.error_rate)

    try:
        est = analyze(stats, p, q=q, f=f_default)
        out.estimate = est
        key = concat_sifted(signal_keys)
        out.n_sifted_signal = len(key)
        qber, key = estimate_qber(key, sample_fraction, rng)
        out.qber_sample = qber
        out.n_key_after_sample = len(key)
        if not est.valid:
            out.error = f"decoy bound unavailable: {est.error}"
            return out
        res = cascade_correct(
            key.bits_alice,
            key.bits_bob,
            max(qber, MIN_CASCADE_QBER),
            seed=int(rng.integers(0, 1 << 63)),
        )
        out.leaked_bits = res.leaked_bits
        out.ec_verified = res.verified
        h = binary_entropy(est.e_mu)
        if h > 0:
            out.ec_efficiency = res.leaked_bits / (len(key) * h)
            out.estimate = est.with_ec_efficiency(max(1.0, out.ec_efficiency))
        if not res.verified:
            out.error = "error-correction verification failed; block discarded"
            return out
        m = compute_final_length(len(key), out.estimate, res.leaked_bits, safety_margin)
        out.final_length = m
        if m == 0:
            return out
        a_blk = KeyBlock(link_id, Stage.CORRECTED, key.bits_alice, res.leaked_bits, out.estimate, created_at)
        b_blk = KeyBlock(link_id, Stage.CORRECTED, res.corrected, res.leaked_bits, out.estimate, created_at)
        pa_seed = ToeplitzSeed.generate(len(key), m, rng)
        out.final_alice = privacy_amplify(a_blk, m, pa_seed, registry)
        out.final_bob = privacy_amplify(b_blk, m, pa_seed)
        if not np.array_equal(out.final_alice.bits, out.final_bob.bits):
            raise QKDError("final keys differ after privacy amplification")
    except QKDError as exc:
        log.warning("link %s block %d: %s", link_id, index, exc)
        out.error = str(exc)
        out.final_alice = out.final_bob = None
        out.final_length = 0
    return out
