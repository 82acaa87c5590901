"""Key blocks through their lifecycle, and final-length accounting."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from ._validation import check_bits, check_count
from .decoy import DecoyEstimate, binary_entropy
from .toeplitz import SeedRegistry, ToeplitzSeed, toeplitz_hash

DEFAULT_SAFETY_MARGIN = 128


class Stage(enum.IntEnum):
    SIFTED = 0
    CORRECTED = 1
    FINAL = 2


@dataclass(frozen=True)
class KeyBlock:
    link_id: str
    stage: Stage
    bits: np.ndarray
    leaked_bits: int = 0
    origin: DecoyEstimate | None = None
    created_at: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "stage", Stage(self.stage))
        object.__setattr__(self, "bits", check_bits(self.bits))
        if self.leaked_bits and self.stage < Stage.CORRECTED:
            raise ValueError("a sifted block cannot carry error-correction leakage")

    def __len__(self):
        return int(self.bits.size)

    def advance(self, stage, bits, **changes):
        stage = Stage(stage)
        if stage <= self.stage:
            raise ValueError(f"cannot move key block from {self.stage.name} back to {stage.name}")
        return replace(self, stage=stage, bits=bits, **changes)


def compute_final_length(n_sifted_signal, est, leaked_bits, safety_margin=DEFAULT_SAFETY_MARGIN):
    """Final key length for one block.

    Block-level form of the rate formula: the single-photon share of the sifted
    signal bits, minus their phase-error entropy, minus the bits actually
    disclosed during error correction and a fixed safety margin.
    """
    n = check_count(n_sifted_signal, "n_sifted_signal")
    leaked_bits = check_count(leaked_bits, "leaked_bits")
    if est is None or not est.valid or not est.q1_lower > 0 or not est.q_mu > 0:
        return 0
    if not 0 <= est.e1_upper <= 1:
        return 0
    info = n * (est.q1_lower / est.q_mu) * (1.0 - binary_entropy(est.e1_upper))
    return max(0, math.floor(info) - leaked_bits - int(safety_margin))


def privacy_amplify(block: KeyBlock, out_len, seed: ToeplitzSeed, registry: SeedRegistry | None = None):
    """Hash a corrected block down to ``out_len`` bits; the seed is claimed once."""
    if block.stage != Stage.CORRECTED:
        raise ValueError(f"privacy amplification expects a corrected block, got {block.stage.name}")
    if registry is not None:
        registry.claim(seed)
    out = toeplitz_hash(block.bits, seed, out_len) if out_len else np.zeros(0, dtype=np.uint8)
    return block.advance(Stage.FINAL, out)
