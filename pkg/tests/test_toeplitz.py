import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdnet.toeplitz import (
    SeedRegistry,
    SeedReuseError,
    ToeplitzHasher,
    ToeplitzSeed,
    _hash_fft,
    toeplitz_hash,
    toeplitz_matrix,
)


def brute_force(x, s, m):
    n = len(x)
    out = []
    for i in range(m):
        acc = 0
        for j in range(n):
            acc ^= s[i - j + n - 1] & x[j]
        out.append(acc)
    return np.array(out, dtype=np.uint8)


def test_zero_input_gives_zero_output():
    rng = np.random.default_rng(0)
    s = rng.integers(0, 2, 40 + 8 - 1)
    assert not toeplitz_hash(np.zeros(40, np.uint8), s, 8).any()


def test_small_example_follows_indexing_rule():
    # T[i, j] = s[i - j + n - 1]
    assert toeplitz_matrix("1011", 3, 2).tolist() == [[1, 0, 1], [1, 1, 0]]
    assert toeplitz_hash("110", "1011", 2).tolist() == [1, 0]
    # the rows [1,1,0] / [0,1,1] belong to seed 0110, which maps 110 to 01
    assert toeplitz_matrix("0110", 3, 2).tolist() == [[1, 1, 0], [0, 1, 1]]
    assert toeplitz_hash("110", "0110", 2).tolist() == [0, 1]


def test_exhaustive_small_sizes_against_brute_force():
    rng = np.random.default_rng(1)
    for n in range(1, 17):
        xs = np.array(list(itertools.product([0, 1], repeat=n)), dtype=np.uint8) if n <= 10 else rng.integers(
            0, 2, (1024, n), dtype=np.uint8
        )
        for m in range(1, min(n, 8) + 1):
            s = rng.integers(0, 2, n + m - 1, dtype=np.uint8)
            T = toeplitz_matrix(s, n, m)
            fast = (xs.astype(int) @ T.T.astype(int)) % 2
            for x, y in zip(xs[:64], fast[:64]):
                assert np.array_equal(toeplitz_hash(x, s, m), brute_force(x, s, m))
                assert np.array_equal(y, brute_force(x, s, m))


@settings(max_examples=50, deadline=None)
@given(st.integers(8, 300), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_linearity(n, m, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, n, dtype=np.uint8)
    y = rng.integers(0, 2, n, dtype=np.uint8)
    s = rng.integers(0, 2, n + m - 1, dtype=np.uint8)
    assert np.array_equal(toeplitz_hash(x ^ y, s, m), toeplitz_hash(x, s, m) ^ toeplitz_hash(y, s, m))


def test_fft_path_matches_dense():
    rng = np.random.default_rng(2)
    n, m = 3000, 700
    x = rng.integers(0, 2, n, dtype=np.uint8)
    s = rng.integers(0, 2, n + m - 1, dtype=np.uint8)
    dense = (toeplitz_matrix(s, n, m).astype(np.int64) @ x) % 2
    assert np.array_equal(_hash_fft(x, s, m), dense)


def test_fft_path_chunked_large():
    import qkdnet.toeplitz as tz

    rng = np.random.default_rng(3)
    n, m = 5000, 300
    x = rng.integers(0, 2, n, dtype=np.uint8)
    s = rng.integers(0, 2, n + m - 1, dtype=np.uint8)
    old = tz._FFT_CHUNK
    tz._FFT_CHUNK = 1024
    try:
        got = _hash_fft(x, s, m)
    finally:
        tz._FFT_CHUNK = old
    assert np.array_equal(got, (toeplitz_matrix(s, n, m).astype(np.int64) @ x) % 2)


def test_errors():
    with pytest.raises(ValueError):
        toeplitz_hash("110", "101", 2)
    with pytest.raises(ValueError):
        toeplitz_hash("110", "101101", 4)


def test_seed_registry_refuses_reuse():
    reg = SeedRegistry()
    s = ToeplitzSeed.generate(100, 10, 0)
    reg.claim(s)
    with pytest.raises(SeedReuseError):
        reg.claim(ToeplitzSeed(s.bits.copy()))
    reg.claim(ToeplitzSeed.generate(100, 10, 1))
    assert len(reg) == 2


def test_hasher_estimator():
    X = np.random.default_rng(4).integers(0, 2, (5, 64), dtype=np.uint8)
    h = ToeplitzHasher(out_len=16, random_state=0).fit(X)
    Y = h.transform(X)
    assert Y.shape == (5, 16)
    assert np.array_equal(Y[2], toeplitz_hash(X[2], h.seed_, 16))
    assert np.array_equal(ToeplitzHasher(out_len=16, seed=h.seed_).fit_transform(X), Y)
