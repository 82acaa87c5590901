"""Frequency, block-frequency and runs tests for key bits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc
from sklearn.base import BaseEstimator

from ._validation import check_bits, check_count, check_fraction
from .errors import InsufficientDataError

DEFAULT_ALPHA = 0.01
DEFAULT_BLOCK_LEN = 128


@dataclass(frozen=True)
class TestReport:
    name: str
    n_bits: int
    statistic: float
    p_value: float
    passed: bool
    applicable: bool = True

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p_value {self.p_value} outside [0, 1]")


def _report(name, n, stat, p, alpha):
    p = min(max(float(p), 0.0), 1.0)
    return TestReport(name, n, float(stat), p, p >= alpha)


def monobit_test(bits, alpha=DEFAULT_ALPHA):
    """Frequency test: ``s = |#1 - #0| / sqrt(n)``, ``p = erfc(s / sqrt(2))``."""
    bits = check_bits(bits)
    n = bits.size
    if n < 100:
        raise InsufficientDataError(f"monobit test needs at least 100 bits, got {n}")
    s = abs(2 * int(bits.sum()) - n) / math.sqrt(n)
    return _report("monobit", n, s, math.erfc(s / math.sqrt(2)), alpha)


def runs_test(bits, alpha=DEFAULT_ALPHA):
    """Runs test; not applicable when the ones fraction is too far from 1/2."""
    bits = check_bits(bits)
    n = bits.size
    if n < 100:
        raise InsufficientDataError(f"runs test needs at least 100 bits, got {n}")
    pi = bits.mean()
    if abs(pi - 0.5) >= 2 / math.sqrt(n):
        return TestReport("runs", n, float("nan"), 0.0, False, applicable=False)
    v = 1 + int(np.count_nonzero(bits[1:] != bits[:-1]))
    spread = 2 * math.sqrt(2 * n) * pi * (1 - pi)
    p = math.erfc(abs(v - 2 * n * pi * (1 - pi)) / spread)
    return _report("runs", n, v, p, alpha)


def block_frequency_test(bits, block_len=DEFAULT_BLOCK_LEN, alpha=DEFAULT_ALPHA):
    """Chi-square of per-block ones fractions against 1/2."""
    bits = check_bits(bits)
    block_len = check_count(block_len, "block_len", minimum=1)
    n = bits.size
    if n < 100 * block_len:
        raise InsufficientDataError(f"block frequency test with M={block_len} needs {100 * block_len} bits, got {n}")
    n_blocks = n // block_len
    pis = bits[: n_blocks * block_len].reshape(n_blocks, block_len).mean(axis=1)
    chi2 = 4.0 * block_len * float(np.sum((pis - 0.5) ** 2))
    return _report("block_frequency", n, chi2, gammaincc(n_blocks / 2.0, chi2 / 2.0), alpha)


TESTS = ("monobit", "block_frequency", "runs")


def run_tests(bits, alpha=DEFAULT_ALPHA, block_len=DEFAULT_BLOCK_LEN):
    return [
        monobit_test(bits, alpha),
        block_frequency_test(bits, block_len, alpha),
        runs_test(bits, alpha),
    ]


@dataclass
class BatteryRow:
    test: str
    blocks: int
    passed: int
    min_p: float
    max_p: float

    @property
    def pass_rate(self):
        return self.passed / self.blocks if self.blocks else 0.0


@dataclass
class BatterySummary:
    alpha: float
    rows: list
    reports: list  # one list of TestReport per block

    def pass_rate(self, test):
        return self.row(test).pass_rate

    def row(self, test):
        for r in self.rows:
            if r.test == test:
                return r
        raise KeyError(test)

    def all_pass(self, min_rate=0.95):
        return all(r.pass_rate >= min_rate for r in self.rows)

    def table(self):
        lines = [f"{'test':<16} {'blocks':>6} {'pass-rate':>9} {'min p':>10} {'max p':>10}"]
        for r in self.rows:
            lines.append(f"{r.test:<16} {r.blocks:>6d} {r.pass_rate:>9.3f} {r.min_p:>10.4g} {r.max_p:>10.4g}")
        return "\n".join(lines)

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "tests": [
                {"test": r.test, "blocks": r.blocks, "pass_rate": r.pass_rate, "min_p": r.min_p, "max_p": r.max_p}
                for r in self.rows
            ],
        }


def battery(bits, alpha=DEFAULT_ALPHA, block_bits=None, block_len=DEFAULT_BLOCK_LEN):
    """Run every test on each block of ``block_bits`` bits (default: one block).

    ``bits`` may also be a list of separate bit arrays, each treated as a block.
    """
    alpha = check_fraction(alpha, "alpha", open_low=True, open_high=True)
    if isinstance(bits, (list, tuple)) and bits and not np.isscalar(bits[0]):
        blocks = [check_bits(b) for b in bits]
    else:
        arr = check_bits(bits)
        size = arr.size if block_bits is None else check_count(block_bits, "block_bits", minimum=1)
        blocks = [arr[i : i + size] for i in range(0, arr.size - size + 1, size)] if size else []
    if not blocks:
        raise InsufficientDataError("no complete block to test")
    reports = [run_tests(b, alpha, block_len) for b in blocks]
    rows = []
    for j, name in enumerate(TESTS):
        ps = [rep[j].p_value for rep in reports]
        rows.append(BatteryRow(name, len(reports), sum(rep[j].passed for rep in reports), min(ps), max(ps)))
    return BatterySummary(alpha, rows, reports)


class RandomnessBattery(BaseEstimator):
    """Estimator wrapper: ``fit`` runs the battery over the rows of ``X``.

    Parameters
    ----------
    alpha : float
        Significance level; 0.008 is a common alternative to the default.
    block_len : int
        Block length of the block-frequency test.
    min_pass_rate : float
        Rate every test must reach for ``passed_`` to be true.
    """

    def __init__(self, alpha=DEFAULT_ALPHA, block_len=DEFAULT_BLOCK_LEN, min_pass_rate=0.95):
        self.alpha = alpha
        self.block_len = block_len
        self.min_pass_rate = min_pass_rate

    def fit(self, X, y=None):
        rows = [check_bits(r) for r in X]
        self.summary_ = battery(rows, self.alpha, block_len=self.block_len)
        self.pass_rates_ = {r.test: r.pass_rate for r in self.summary_.rows}
        self.passed_ = self.summary_.all_pass(self.min_pass_rate)
        return self

    def score(self, X, y=None):
        """Lowest per-test pass rate."""
        return min(self.fit(X).pass_rates_.values())
