"""Toeplitz-matrix universal hashing over GF(2)."""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_bit_matrix, check_bits, check_count

# Above this many matrix entries the FFT path is cheaper than a dense product.
_DENSE_LIMIT = 1 << 22
# Keep each FFT convolution short enough that float64 rounding stays exact.
_FFT_CHUNK = 1 << 20


@dataclass(frozen=True)
class ToeplitzSeed:
    bits: np.ndarray
    source: str = "numpy.default_rng"

    def __post_init__(self):
        object.__setattr__(self, "bits", check_bits(self.bits, "seed bits"))

    def __len__(self):
        return int(self.bits.size)

    def digest(self):
        return hashlib.sha256(np.packbits(self.bits).tobytes() + len(self).to_bytes(8, "big")).digest()

    @classmethod
    def generate(cls, n_in, n_out, rng=None, source="numpy.default_rng"):
        rng = np.random.default_rng(rng)
        return cls(rng.integers(0, 2, size=n_in + n_out - 1, dtype=np.uint8), source)


class SeedReuseError(RuntimeError):
    pass


class SeedRegistry:
    """Remembers every seed handed out so none is ever used for two blocks."""

    def __init__(self):
        self._seen = set()
        self._lock = threading.Lock()

    def claim(self, seed: ToeplitzSeed):
        key = seed.digest()
        with self._lock:
            if key in self._seen:
                raise SeedReuseError("Toeplitz seed already used for another block")
            self._seen.add(key)
        return seed

    def __len__(self):
        return len(self._seen)


def toeplitz_matrix(seed_bits, n_in, n_out):
    """Explicit ``n_out x n_in`` matrix with ``T[i, j] = seed[i - j + n_in - 1]``."""
    s = check_bits(seed_bits, "seed")
    if s.size != n_in + n_out - 1:
        raise ValueError(f"seed must have {n_in + n_out - 1} bits, got {s.size}")
    i = np.arange(n_out)[:, None]
    j = np.arange(n_in)[None, :]
    return s[i - j + n_in - 1]


def _hash_dense(X, s, out_len):
    T = toeplitz_matrix(s, X.shape[1], out_len).astype(np.int64)
    return ((X.astype(np.int64) @ T.T) & 1).astype(np.uint8)


def _hash_fft(x, s, out_len):
    # y_i = sum_j s[i - j + n - 1] x_j = (s * x)[i + n - 1]
    n = x.size
    acc = np.zeros(out_len, dtype=np.int64)
    sf = s.astype(np.float64)
    for start in range(0, n, _FFT_CHUNK):
        xc = x[start : start + _FFT_CHUNK].astype(np.float64)
        # columns start..start+len(xc) only touch seed[start - ... ]: shift the seed window
        lo = n - 1 - start - (xc.size - 1)
        hi = lo + xc.size - 1 + out_len
        conv = fftconvolve(sf[lo:hi], xc)
        acc += np.rint(conv[xc.size - 1 : xc.size - 1 + out_len]).astype(np.int64)
    return (acc & 1).astype(np.uint8)


def toeplitz_hash(bits, seed, out_len):
    """Compress ``bits`` to ``out_len`` bits with the Toeplitz matrix given by ``seed``.

    Output bit ``i`` is the GF(2) inner product of the input with matrix row
    ``i``, whose column ``j`` entry is seed bit ``i - j + n - 1``.
    """
    x = check_bits(bits)
    s = seed.bits if isinstance(seed, ToeplitzSeed) else check_bits(seed, "seed")
    n = x.size
    m = check_count(out_len, "out_len")
    if m > n:
        raise ValueError(f"out_len ({m}) cannot exceed input length ({n})")
    if s.size != n + m - 1:
        raise ValueError(f"seed length must be n + m - 1 = {n + m - 1}, got {s.size}")
    if m == 0:
        return np.zeros(0, dtype=np.uint8)
    if n * m <= _DENSE_LIMIT:
        return _hash_dense(x[None, :], s, m)[0]
    return _hash_fft(x, s, m)


class ToeplitzHasher(TransformerMixin, BaseEstimator):
    """Privacy-amplification hash as a transformer.

    ``fit`` sizes and draws a seed for the input width; ``transform`` hashes
    each row.  Passing ``seed`` fixes the matrix instead of drawing one.
    """

    def __init__(self, out_len=64, random_state=None, seed=None, registry=None):
        self.out_len = out_len
        self.random_state = random_state
        self.seed = seed
        self.registry = registry

    def fit(self, X, y=None):
        X = check_bit_matrix(X)
        n = X.shape[1]
        if self.out_len > n:
            raise ValueError(f"out_len ({self.out_len}) exceeds input width ({n})")
        if self.seed is not None:
            seed = self.seed if isinstance(self.seed, ToeplitzSeed) else ToeplitzSeed(self.seed)
            if len(seed) != n + self.out_len - 1:
                raise ValueError("fixed seed does not match input width and out_len")
        else:
            seed = ToeplitzSeed.generate(n, self.out_len, self.random_state)
        if self.registry is not None:
            self.registry.claim(seed)
        self.seed_ = seed
        self.n_features_in_ = n
        return self

    def transform(self, X):
        check_is_fitted(self, "seed_")
        X = check_bit_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} bits per row, got {X.shape[1]}")
        if X.shape[1] * self.out_len <= _DENSE_LIMIT:
            return _hash_dense(X, self.seed_.bits, self.out_len)
        return np.stack([_hash_fft(row, self.seed_.bits, self.out_len) for row in X])
