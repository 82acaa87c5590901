"""Input validation helpers shared across the package."""

import math

import numpy as np


def check_bits(bits, name="bits", min_length=0):
    """Return ``bits`` as a contiguous 1-D ``uint8`` array of zeros and ones.

    Accepts lists, tuples, bool arrays and strings such as ``"0110"``.
    """
    if isinstance(bits, str):
        if set(bits) - {"0", "1"}:
            raise ValueError(f"{name} string may only contain '0' and '1'")
        arr = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
    else:
        arr = np.asarray(bits)
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > 1):
        raise ValueError(f"{name} must contain only 0 and 1")
    if arr.size < min_length:
        raise ValueError(f"{name} needs at least {min_length} bits, got {arr.size}")
    return np.ascontiguousarray(arr, dtype=np.uint8)


def check_bit_matrix(X, name="X"):
    """Like :func:`check_bits` but for 2-D arrays (one bit string per row)."""
    arr = np.asarray(X)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > 1):
        raise ValueError(f"{name} must contain only 0 and 1")
    return np.ascontiguousarray(arr, dtype=np.uint8)


def check_fraction(value, name, *, open_low=False, open_high=False):
    value = float(value)
    low_ok = value > 0 if open_low else value >= 0
    high_ok = value < 1 if open_high else value <= 1
    if not (math.isfinite(value) and low_ok and high_ok):
        lo = "(" if open_low else "["
        hi = ")" if open_high else "]"
        raise ValueError(f"{name} must lie in {lo}0, 1{hi}, got {value}")
    return value


def check_positive(value, name, *, allow_zero=False):
    value = float(value)
    ok = value >= 0 if allow_zero else value > 0
    if not (math.isfinite(value) and ok):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be finite and {bound}, got {value}")
    return value


def check_count(value, name, *, minimum=0):
    if isinstance(value, (bool, np.bool_)) or int(value) != value:
        raise ValueError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return value


def pack_bits(bits):
    """Pack a 0/1 array into bytes, most significant bit first."""
    return np.packbits(check_bits(bits)).tobytes()


def unpack_bits(data, n_bits):
    arr = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if arr.size < n_bits:
        raise ValueError(f"need {n_bits} bits, buffer holds only {arr.size}")
    return arr[:n_bits].copy()
