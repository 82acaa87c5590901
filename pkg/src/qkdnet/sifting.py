"""Basis reconciliation and QBER sampling."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._validation import check_fraction
from .errors import InsufficientDataError
from .linkmodel import PulseClass


@dataclass(frozen=True)
class SiftedKey:
    link_id: str
    pulse_class: PulseClass
    bits_alice: np.ndarray
    bits_bob: np.ndarray
    source_block: object = None
    # (estimate, sample size) once estimate_qber has disclosed a sample
    sample_qber: tuple | None = None

    def __post_init__(self):
        if self.bits_alice.shape != self.bits_bob.shape:
            raise ValueError("Alice and Bob sifted keys must have equal length")

    def __len__(self):
        return int(self.bits_alice.size)

    @property
    def true_qber(self):
        """Actual disagreement rate (simulator privilege)."""
        if not len(self):
            return 0.0
        return float(np.count_nonzero(self.bits_alice != self.bits_bob)) / len(self)


def sift(block, link_id="link"):
    """Keep the detections where Alice's and Bob's bases agree, split by class."""
    match = block.det_basis_match()
    cls = block.det_classes()
    alice = block.det_alice_bits()
    keys = {}
    for c in PulseClass:
        keep = match & (cls == c)
        keys[c] = SiftedKey(
            link_id,
            c,
            alice[keep].astype(np.uint8),
            block.det_bit[keep].astype(np.uint8),
            source_block=block.rng_seed,
        )
    return keys


def concat_sifted(keys):
    keys = list(keys)
    if not keys:
        raise ValueError("nothing to concatenate")
    first = keys[0]
    return SiftedKey(
        first.link_id,
        first.pulse_class,
        np.concatenate([k.bits_alice for k in keys]),
        np.concatenate([k.bits_bob for k in keys]),
        source_block=[k.source_block for k in keys],
    )


def estimate_qber(key, sample_fraction=0.1, seed=None, min_length=100):
    """Disclose a random sample of positions, return its error rate and the rest.

    The disclosed positions are dropped from the returned key.
    """
    check_fraction(sample_fraction, "sample_fraction", open_low=True, open_high=True)
    n = len(key)
    if n < min_length:
        raise InsufficientDataError(f"need at least {min_length} sifted bits to estimate QBER, got {n}")
    rng = np.random.default_rng(seed)
    n_sample = max(1, int(round(sample_fraction * n)))
    chosen = np.zeros(n, dtype=bool)
    chosen[rng.choice(n, size=n_sample, replace=False)] = True
    errors = int(np.count_nonzero(key.bits_alice[chosen] != key.bits_bob[chosen]))
    qber = errors / n_sample
    rest = replace(
        key,
        bits_alice=key.bits_alice[~chosen],
        bits_bob=key.bits_bob[~chosen],
        sample_qber=(qber, n_sample),
    )
    return qber, rest


def sifted_rate(stats, p):
    """Expected signal-class sifted key rate in bits per second."""
    return p.clock_hz * stats.gain * p.signal_fraction * 0.5
