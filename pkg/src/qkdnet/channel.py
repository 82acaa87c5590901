"""Monte Carlo generation of raw detection records for one link.

Clicks are drawn at the detection-event level: every gate independently fires
with its class gain (thinned geometric skipping keeps this O(detections)),
then a sequential pass applies the detector dead time and afterpulsing.
Photon numbers are only sampled for detected pulses, from the posterior given
a click, which is what the single-photon ground truth needs.
"""

from __future__ import annotations

import bisect
import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_count
from .linkmodel import (
    LinkParams,
    PulseClass,
    PulseClassStats,
    ideal_gain,
    photon_error_weight,
    photon_yield,
    total_transmittance,
)

RAW_MAGIC = b"QKDRAW"
RAW_VERSION = 1


def bits_at(packed, idx):
    """Read bits at positions ``idx`` from an MSB-first packed array."""
    idx = np.asarray(idx, dtype=np.int64)
    return (packed[idx >> 3] >> (7 - (idx & 7)).astype(np.uint8)) & 1


def params_digest(p):
    blob = json.dumps(p.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).digest()


@dataclass
class RawBlock:
    """Everything both parties recorded for one run of pulses.

    Per-pulse bit sequences are kept packed (MSB first); ``pulse_classes`` is
    one byte per pulse.  ``det_photons`` and ``det_afterpulse`` are simulator
    bookkeeping that no real receiver would have.
    """

    pulse_count: int
    alice_bits_packed: np.ndarray
    alice_bases_packed: np.ndarray
    bob_bases_packed: np.ndarray
    pulse_classes: np.ndarray
    det_index: np.ndarray
    det_bit: np.ndarray
    det_photons: np.ndarray
    det_afterpulse: np.ndarray
    rng_seed: object = None
    params_hash: bytes = field(default=b"\x00" * 32, repr=False)

    def __post_init__(self):
        n = self.pulse_count
        if self.pulse_classes.shape != (n,):
            raise ValueError("pulse_classes must have one entry per pulse")
        nbytes = (n + 7) // 8
        for name in ("alice_bits_packed", "alice_bases_packed", "bob_bases_packed"):
            if getattr(self, name).shape != (nbytes,):
                raise ValueError(f"{name} must hold {nbytes} bytes")
        idx = self.det_index
        if idx.size:
            if idx[0] < 0 or idx[-1] >= n or np.any(np.diff(idx) <= 0):
                raise ValueError("detection indices must be strictly increasing and < pulse_count")
        sizes = {a.size for a in (idx, self.det_bit, self.det_photons, self.det_afterpulse)}
        if len(sizes) != 1:
            raise ValueError("detection arrays must have equal length")

    @property
    def alice_bits(self):
        return np.unpackbits(self.alice_bits_packed, count=self.pulse_count)

    @property
    def alice_bases(self):
        return np.unpackbits(self.alice_bases_packed, count=self.pulse_count)

    @property
    def bob_bases(self):
        return np.unpackbits(self.bob_bases_packed, count=self.pulse_count)

    @property
    def detections(self):
        """``(pulse index, measured bit)`` pairs."""
        return list(zip(self.det_index.tolist(), self.det_bit.tolist()))

    @property
    def n_detections(self):
        return int(self.det_index.size)

    def det_classes(self):
        return self.pulse_classes[self.det_index]

    def det_basis_match(self):
        i = self.det_index
        return bits_at(self.alice_bases_packed, i) == bits_at(self.bob_bases_packed, i)

    def det_alice_bits(self):
        return bits_at(self.alice_bits_packed, self.det_index)

    def __eq__(self, other):
        if not isinstance(other, RawBlock):
            return NotImplemented
        return self.pulse_count == other.pulse_count and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in (
                "alice_bits_packed",
                "alice_bases_packed",
                "bob_bases_packed",
                "pulse_classes",
                "det_index",
                "det_bit",
                "det_photons",
                "det_afterpulse",
            )
        )


def _class_table(p, total):
    """Lookup from a uniform integer in [0, total) to a pulse class."""
    return np.repeat(np.arange(3, dtype=np.uint8), p.state_mix)[:total]


def _candidate_clicks(rng, n_pulses, p_max):
    """Positions of clicks of a Bernoulli(p_max) process over ``n_pulses`` gates."""
    if p_max <= 0:
        return np.empty(0, dtype=np.int64)
    if p_max >= 1:
        return np.arange(n_pulses, dtype=np.int64)
    expected = p_max * n_pulses
    chunks = []
    pos = -1
    while True:
        size = int(expected + 10 * math.sqrt(expected) + 64)
        gaps = rng.geometric(p_max, size=size)
        steps = pos + np.cumsum(gaps, dtype=np.int64)
        chunks.append(steps)
        pos = int(steps[-1])
        if pos >= n_pulses:
            break
    cand = np.concatenate(chunks)
    return cand[cand < n_pulses]


def _apply_dead_time(cand, n_pulses, dead, ap_prob, rng):
    """Filter genuine click candidates through dead time and add afterpulses.

    Returns detection indices and a flag array marking afterpulses.
    """
    if cand.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=bool)
    if dead == 0 and ap_prob == 0:
        return cand.astype(np.int64), np.zeros(cand.size, dtype=bool)

    cand_list = cand.tolist()
    nc = len(cand_list)
    ap_draws = rng.random(nc + 64).tolist()
    ap_pos = 0
    out_idx = []
    out_ap = []
    i = 0
    next_free = 0
    while True:
        if i < nc and cand_list[i] < next_free:
            i = bisect.bisect_left(cand_list, next_free, i)
        if i >= nc:
            break
        t = cand_list[i]
        i += 1
        out_idx.append(t)
        out_ap.append(False)
        while True:
            reopen = t + dead + 1
            if reopen >= n_pulses:
                next_free = n_pulses
                break
            if ap_pos == len(ap_draws):
                ap_draws.extend(rng.random(1024).tolist())
            u = ap_draws[ap_pos]
            ap_pos += 1
            if u < ap_prob:
                out_idx.append(reopen)
                out_ap.append(True)
                t = reopen
            else:
                next_free = reopen
                break
    return np.array(out_idx, dtype=np.int64), np.array(out_ap, dtype=bool)


def _photon_tables(p, eta):
    """Per class: photon-number support, prior CDF and click-posterior CDF."""
    tables = []
    for m in p.intensities:
        n_max = int(math.ceil(m + 12 * math.sqrt(m) + 30))
        n = np.arange(n_max + 1)
        log_prior = -m + n * math.log(m) - np.array([math.lgamma(k + 1) for k in n]) if m > 0 else None
        prior = np.exp(log_prior) if m > 0 else (n == 0).astype(float)
        prior /= prior.sum()
        yields = photon_yield(n, eta, p.y0)
        post = prior * yields
        post = post / post.sum() if post.sum() > 0 else prior
        tables.append((n, np.cumsum(prior), np.cumsum(post), yields))
    return tables


def simulate_block(p: LinkParams, pulse_count, seed=None):
    """Generate one :class:`RawBlock` of ``pulse_count`` gates.

    Deterministic for a given ``seed`` (an int, a sequence of ints or a
    ``numpy.random.SeedSequence``).
    """
    n = check_count(pulse_count, "pulse_count", minimum=1)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss)

    total = sum(p.state_mix)
    lut = _class_table(p, total)
    dtype = np.uint8 if total <= 256 else np.uint16
    classes = lut[rng.integers(0, total, size=n, dtype=dtype)]
    nbytes = (n + 7) // 8
    alice_bits = rng.integers(0, 256, size=nbytes, dtype=np.uint8)
    alice_bases = rng.integers(0, 256, size=nbytes, dtype=np.uint8)
    bob_bases = rng.integers(0, 256, size=nbytes, dtype=np.uint8)

    eta = total_transmittance(p)
    gains = np.array([ideal_gain(m, eta, p.y0) for m in p.intensities])
    p_max = float(gains.max())
    cand = _candidate_clicks(rng, n, p_max)
    if cand.size:
        keep = rng.random(cand.size) * p_max < gains[classes[cand]]
        cand = cand[keep]
    det_idx, det_ap = _apply_dead_time(cand, n, p.dead_time_pulses, p.afterpulse_prob, rng)

    k = det_idx.size
    det_cls = classes[det_idx]
    photons = np.zeros(k, dtype=np.int64)
    u_photon = rng.random(k)
    tables = _photon_tables(p, eta)
    for c, (support, prior_cdf, post_cdf, _) in enumerate(tables):
        sel = det_cls == c
        genuine = sel & ~det_ap
        after = sel & det_ap
        photons[genuine] = support[np.minimum(np.searchsorted(post_cdf, u_photon[genuine]), support[-1])]
        photons[after] = support[np.minimum(np.searchsorted(prior_cdf, u_photon[after]), support[-1])]

    yields = photon_yield(photons, eta, p.y0)
    err_prob = np.divide(
        photon_error_weight(photons, eta, p.y0, p.e_det, p.e0),
        yields,
        out=np.full(k, 0.5),
        where=yields > 0,
    )
    err_prob[det_ap] = 0.5  # afterpulses carry no signal information
    u_err = rng.random(k)
    random_bits = rng.integers(0, 2, size=k, dtype=np.uint8)

    a_bits = bits_at(alice_bits, det_idx)
    match = bits_at(alice_bases, det_idx) == bits_at(bob_bases, det_idx)
    flips = (u_err < err_prob).astype(np.uint8)
    measured = np.where(match & ~det_ap, a_bits ^ flips, random_bits).astype(np.uint8)

    seed_repr = ss.entropy if ss.spawn_key == () else [ss.entropy, list(ss.spawn_key)]
    return RawBlock(
        pulse_count=n,
        alice_bits_packed=alice_bits,
        alice_bases_packed=alice_bases,
        bob_bases_packed=bob_bases,
        pulse_classes=classes.astype(np.uint8),
        det_index=det_idx,
        det_bit=measured,
        det_photons=np.minimum(photons, 255).astype(np.uint8),
        det_afterpulse=det_ap,
        rng_seed=seed_repr,
        params_hash=params_digest(p),
    )


def simulate_subblocks(p, pulse_count, seed=None, max_pulses=1 << 24):
    """Split a long run into independently seeded sub-blocks.

    Dead time does not carry over sub-block boundaries; at ``max_pulses``
    gates per piece that coupling is negligible.
    """
    n = check_count(pulse_count, "pulse_count", minimum=0)
    if n == 0:
        return []
    pieces = -(-n // max_pulses)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sizes = [max_pulses] * (pieces - 1) + [n - max_pulses * (pieces - 1)]
    return [simulate_block(p, size, child) for size, child in zip(sizes, ss.spawn(pieces))]


def tally(block: RawBlock):
    """Per-class sent/detected/sifted/errored counts for a block."""
    sent = np.bincount(block.pulse_classes, minlength=3)
    cls = block.det_classes()
    match = block.det_basis_match()
    wrong = block.det_bit != block.det_alice_bits()
    detected = np.bincount(cls, minlength=3)
    sifted = np.bincount(cls[match], minlength=3)
    errored = np.bincount(cls[match & wrong], minlength=3)
    return {
        c: PulseClassStats(c, int(sent[c]), int(detected[c]), int(sifted[c]), int(errored[c]))
        for c in PulseClass
    }


def merge_stats(parts):
    out = None
    for stats in parts:
        out = dict(stats) if out is None else {c: out[c] + stats[c] for c in PulseClass}
    if out is None:
        out = {c: PulseClassStats(c) for c in PulseClass}
    return out


@dataclass(frozen=True)
class SinglePhotonTruth:
    """Realised single-photon counts for one class (simulator bookkeeping)."""

    n_sent: int = 0
    n_detected: int = 0
    n_sifted: int = 0
    n_errored: int = 0

    @property
    def gain(self):
        return self.n_detected / self.n_sent if self.n_sent else 0.0

    @property
    def error_rate(self):
        return self.n_errored / self.n_sifted if self.n_sifted else 0.0

    def __add__(self, other):
        return SinglePhotonTruth(
            self.n_sent + other.n_sent,
            self.n_detected + other.n_detected,
            self.n_sifted + other.n_sifted,
            self.n_errored + other.n_errored,
        )


def single_photon_truth(block, pulse_class=PulseClass.SIGNAL):
    """Single-photon gain and error rate actually realised in ``block``."""
    sent = int(np.count_nonzero(block.pulse_classes == pulse_class))
    one = (block.det_classes() == pulse_class) & (block.det_photons == 1)
    sifted = one & block.det_basis_match()
    errored = sifted & (block.det_bit != block.det_alice_bits())
    return SinglePhotonTruth(sent, int(one.sum()), int(sifted.sum()), int(errored.sum()))


# -- binary record format ---------------------------------------------------
#
# magic "QKDRAW" | u16 version | 32-byte params sha256 | u64 pulse_count |
# u64 n_detections | u32 len + utf-8 JSON seed | packed alice bits |
# packed alice bases | packed bob bases | u8 class per pulse |
# u64 detection index * n | packed detection bits | u8 photons * n |
# packed afterpulse flags.  All integers big-endian.

_HEAD = struct.Struct(">6sH32sQQI")


def dumps_raw_block(block: RawBlock) -> bytes:
    seed_blob = json.dumps(block.rng_seed).encode()
    buf = io.BytesIO()
    buf.write(
        _HEAD.pack(
            RAW_MAGIC,
            RAW_VERSION,
            block.params_hash,
            block.pulse_count,
            block.n_detections,
            len(seed_blob),
        )
    )
    buf.write(seed_blob)
    buf.write(block.alice_bits_packed.tobytes())
    buf.write(block.alice_bases_packed.tobytes())
    buf.write(block.bob_bases_packed.tobytes())
    buf.write(block.pulse_classes.astype(np.uint8).tobytes())
    buf.write(block.det_index.astype(">u8").tobytes())
    buf.write(np.packbits(block.det_bit).tobytes())
    buf.write(block.det_photons.astype(np.uint8).tobytes())
    buf.write(np.packbits(block.det_afterpulse.astype(np.uint8)).tobytes())
    return buf.getvalue()


def loads_raw_block(data: bytes, params: LinkParams | None = None) -> RawBlock:
    if len(data) < _HEAD.size:
        raise ValueError("truncated raw block record")
    magic, version, phash, n, k, seed_len = _HEAD.unpack_from(data)
    if magic != RAW_MAGIC:
        raise ValueError("not a raw block record (bad magic)")
    if version != RAW_VERSION:
        raise ValueError(f"unsupported raw block version {version}")
    if params is not None and params_digest(params) != phash:
        raise ValueError("raw block was produced with different link parameters")
    off = _HEAD.size

    def take(nbytes):
        nonlocal off
        if off + nbytes > len(data):
            raise ValueError("truncated raw block record")
        chunk = data[off : off + nbytes]
        off += nbytes
        return chunk

    seed = json.loads(take(seed_len).decode())
    nb = (n + 7) // 8
    a_bits = np.frombuffer(take(nb), dtype=np.uint8).copy()
    a_bases = np.frombuffer(take(nb), dtype=np.uint8).copy()
    b_bases = np.frombuffer(take(nb), dtype=np.uint8).copy()
    classes = np.frombuffer(take(n), dtype=np.uint8).copy()
    idx = np.frombuffer(take(8 * k), dtype=">u8").astype(np.int64)
    kb = (k + 7) // 8
    det_bit = np.unpackbits(np.frombuffer(take(kb), dtype=np.uint8), count=k)
    photons = np.frombuffer(take(k), dtype=np.uint8).copy()
    ap = np.unpackbits(np.frombuffer(take(kb), dtype=np.uint8), count=k).astype(bool)
    if off != len(data):
        raise ValueError("trailing bytes after raw block record")
    return RawBlock(n, a_bits, a_bases, b_bases, classes, idx, det_bit, photons, ap, seed, phash)


def write_raw_block(path, block):
    with open(path, "wb") as fh:
        fh.write(dumps_raw_block(block))


def read_raw_block(path, params=None):
    with open(path, "rb") as fh:
        return loads_raw_block(fh.read(), params)
