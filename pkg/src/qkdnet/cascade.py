"""Cascade interactive error correction.

Bob drives the protocol; Alice only answers parity queries through a channel
object.  Pass 1 uses contiguous blocks of ``ceil(0.73 / qber)`` bits, each later
pass doubles the block size over a fresh public permutation.  When a bit is
corrected, every earlier-pass block containing it flips parity and is searched
again (the cascade).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from ._validation import check_bits
from .decoy import binary_entropy
from .errors import AbortBlockError
from .keynet.frames import FrameType, Sequencer
from .toeplitz import toeplitz_hash

MAX_QBER = 0.11


def block_sizes(n, qber, n_passes=4, k1_factor=0.73):
    k1 = max(1, math.ceil(k1_factor / qber))
    return [min(n, k1 << p) for p in range(n_passes)]


def _permutations(n, n_passes, seed):
    rng = np.random.default_rng(seed)
    perms = [np.arange(n)]
    for _ in range(1, n_passes):
        perms.append(rng.permutation(n))
    return perms


def _block_parity(bits, k):
    starts = np.arange(0, bits.size, k)
    return (np.add.reduceat(bits, starts, dtype=np.int64) & 1).astype(np.uint8)


def _verify_tag(bits, seed, tag_bits):
    # Tag over a tag_bits-wide Toeplitz hash; seed drawn from public randomness.
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 2, size=bits.size + tag_bits - 1, dtype=np.uint8)
    return toeplitz_hash(bits, s, tag_bits)


class ParityResponder:
    """Alice's side: answers parity queries over her key."""

    def __init__(self, alice_bits):
        self.bits = check_bits(alice_bits, "alice")
        self._views = None

    def setup(self, seed, sizes):
        n = self.bits.size
        self.sizes = list(sizes)
        perms = _permutations(n, len(self.sizes), seed)
        self._views = []
        for perm in perms:
            view = self.bits[perm]
            prefix = np.concatenate(([0], np.bitwise_xor.accumulate(view)))
            self._views.append((view, prefix.astype(np.uint8)))

    def block_parities(self, pass_idx):
        view, _ = self._views[pass_idx]
        return _block_parity(view, self.sizes[pass_idx])

    def range_parity(self, pass_idx, start, stop):
        _, prefix = self._views[pass_idx]
        return int(prefix[stop] ^ prefix[start])

    def verify_tag(self, seed, tag_bits):
        return _verify_tag(self.bits, seed, tag_bits)


class LocalChannel:
    """Direct calls to an in-process responder, counting disclosed bits."""

    def __init__(self, responder):
        self.responder = responder
        self.leaked_bits = 0

    def setup(self, seed, sizes):
        self.responder.setup(seed, sizes)

    def block_parities(self, pass_idx):
        par = self.responder.block_parities(pass_idx)
        self.leaked_bits += int(par.size)
        return par

    def range_parity(self, pass_idx, start, stop):
        self.leaked_bits += 1
        return self.responder.range_parity(pass_idx, start, stop)

    def verify_tag(self, seed, tag_bits):
        self.leaked_bits += tag_bits
        return self.responder.verify_tag(seed, tag_bits)


# EC_PARITY / EC_VERIFY payloads: u8 opcode followed by operands.
_OP_SETUP, _OP_BLOCKS, _OP_RANGE, _OP_VERIFY = 1, 2, 3, 4


class FramedResponder:
    """Alice's end of :class:`FramedChannel`: decode a request frame, answer it."""

    def __init__(self, responder, link_id=0, sequencer=None):
        self.responder = responder
        self.link_id = link_id
        self.seq = sequencer or Sequencer()

    def handle(self, frame):
        p = frame.payload
        op = p[0]
        if op == _OP_SETUP:
            seed, count = struct.unpack_from(">QB", p, 1)
            sizes = struct.unpack_from(f">{count}I", p, 10)
            self.responder.setup(seed, sizes)
            body = b""
        elif op == _OP_BLOCKS:
            par = self.responder.block_parities(p[1])
            body = struct.pack(">I", par.size) + np.packbits(par).tobytes()
        elif op == _OP_RANGE:
            pass_idx, start, stop = struct.unpack_from(">BII", p, 1)
            body = bytes([self.responder.range_parity(pass_idx, start, stop)])
        elif op == _OP_VERIFY:
            seed, tag_bits = struct.unpack_from(">QH", p, 1)
            body = np.packbits(self.responder.verify_tag(seed, tag_bits)).tobytes()
        else:
            raise ValueError(f"unknown EC opcode {op}")
        return self.seq.frame(frame.type, self.link_id, bytes([op]) + body)


class FramedChannel:
    """Cascade queries as EC_PARITY / EC_VERIFY frames over a frame stream.

    ``exchange`` is any callable mapping a request frame to a response frame,
    e.g. a :class:`FramedResponder`'s ``handle`` or a round trip over a socket.
    """

    def __init__(self, exchange, link_id=0, sequencer=None):
        self.exchange = exchange
        self.link_id = link_id
        self.seq = sequencer or Sequencer()
        self.leaked_bits = 0
        self.frames_sent = 0

    def _ask(self, ftype, payload):
        self.frames_sent += 1
        reply = self.exchange(self.seq.frame(ftype, self.link_id, payload))
        if reply.type != ftype or reply.payload[:1] != payload[:1]:
            raise ValueError("unexpected reply to EC request")
        return reply.payload[1:]

    def setup(self, seed, sizes):
        self._ask(FrameType.EC_PARITY, struct.pack(f">BQB{len(sizes)}I", _OP_SETUP, seed, len(sizes), *sizes))

    def block_parities(self, pass_idx):
        body = self._ask(FrameType.EC_PARITY, struct.pack(">BB", _OP_BLOCKS, pass_idx))
        (count,) = struct.unpack_from(">I", body)
        par = np.unpackbits(np.frombuffer(body[4:], dtype=np.uint8), count=count)
        self.leaked_bits += count
        return par

    def range_parity(self, pass_idx, start, stop):
        body = self._ask(FrameType.EC_PARITY, struct.pack(">BBII", _OP_RANGE, pass_idx, start, stop))
        self.leaked_bits += 1
        return body[0]

    def verify_tag(self, seed, tag_bits):
        body = self._ask(FrameType.EC_VERIFY, struct.pack(">BQH", _OP_VERIFY, seed, tag_bits))
        self.leaked_bits += tag_bits
        return np.unpackbits(np.frombuffer(body, dtype=np.uint8), count=tag_bits)


@dataclass
class CascadeResult:
    corrected: np.ndarray
    leaked_bits: int
    n_corrections: int
    verified: bool | None
    block_sizes: list

    def efficiency(self, qber):
        """Realised leakage over the Shannon limit ``n * H2(qber)``."""
        h = binary_entropy(qber)
        return self.leaked_bits / (self.corrected.size * h) if h > 0 else math.inf


def cascade_correct(
    alice,
    bob,
    qber_est,
    channel=None,
    *,
    n_passes=4,
    k1_factor=0.73,
    seed=None,
    verify_bits=64,
    min_length=1000,
):
    """Correct Bob's key towards Alice's.

    ``alice`` may be ``None`` when a ``channel`` to a remote responder is given.
    ``seed`` drives the public permutations and the verification-tag hash.
    Returns a :class:`CascadeResult`; ``leaked_bits`` counts every parity
    disclosed, including the verification tag.
    """
    bob = check_bits(bob, "bob").copy()
    n = bob.size
    if channel is None:
        if alice is None:
            raise ValueError("need either Alice's key or a channel to her")
        alice = check_bits(alice, "alice")
        if alice.size != n:
            raise ValueError("Alice's and Bob's keys differ in length")
        channel = LocalChannel(ParityResponder(alice))
    if n < min_length:
        raise ValueError(f"cascade needs at least {min_length} bits, got {n}")
    if not 0 < qber_est < MAX_QBER:
        raise AbortBlockError(f"estimated QBER {qber_est:.4g} outside (0, {MAX_QBER})")

    leak_start = channel.leaked_bits
    rng = np.random.default_rng(seed)
    perm_seed = int(rng.integers(0, 1 << 63))
    tag_seed = int(rng.integers(0, 1 << 63))

    sizes = block_sizes(n, qber_est, n_passes, k1_factor)
    channel.setup(perm_seed, sizes)
    perms = _permutations(n, n_passes, perm_seed)
    invs = []
    for pm in perms:
        inv = np.empty(n, dtype=np.int64)
        inv[pm] = np.arange(n)
        invs.append(inv)

    views = []
    alice_par = []
    bob_par = []
    n_fixed = 0

    def binary_search(p, blk):
        k = sizes[p]
        view = views[p]
        lo = blk * k
        hi = min(lo + k, n)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            a = channel.range_parity(p, lo, mid)
            if a != (int(view[lo:mid].sum()) & 1):
                hi = mid
            else:
                lo = mid
        return lo

    def flip(i, found_in, pending):
        bob[i] ^= 1
        for q in range(len(views)):
            pos = invs[q][i]
            views[q][pos] ^= 1
            blk = pos // sizes[q]
            bob_par[q][blk] ^= 1
            if q != found_in and bob_par[q][blk] != alice_par[q][blk]:
                pending.append((q, blk))

    for p in range(n_passes):
        view = bob[perms[p]]
        views.append(view)
        alice_par.append(channel.block_parities(p))
        bob_par.append(_block_parity(view, sizes[p]))
        pending = [(p, int(b)) for b in np.flatnonzero(alice_par[p] != bob_par[p])[::-1]]
        while pending:
            q, blk = pending.pop()
            if bob_par[q][blk] == alice_par[q][blk]:
                continue
            pos = binary_search(q, blk)
            flip(int(perms[q][pos]), q, pending)
            n_fixed += 1

    verified = None
    if verify_bits:
        theirs = channel.verify_tag(tag_seed, verify_bits)
        verified = bool(np.array_equal(theirs, _verify_tag(bob, tag_seed, verify_bits)))

    return CascadeResult(
        corrected=bob,
        leaked_bits=channel.leaked_bits - leak_start,
        n_corrections=n_fixed,
        verified=verified,
        block_sizes=sizes,
    )
