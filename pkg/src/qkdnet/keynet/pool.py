"""Exactly-once key pools."""

from __future__ import annotations

import collections
import threading
import time

import numpy as np

from .._validation import check_bits, check_count
from ..errors import KeyExhaustedError


class DeliveryLedger:
    """Global record of every pool bit range handed out.

    ``record`` refuses any range that overlaps one already delivered from the
    same pool, so a test holding the ledger proves no pad bit is used twice.
    """

    def __init__(self):
        self._ranges = collections.defaultdict(list)
        self._lock = threading.Lock()

    def record(self, pool_id, start, stop):
        if stop <= start:
            return
        with self._lock:
            ranges = self._ranges[pool_id]
            for a, b in ranges:
                if start < b and a < stop:
                    raise AssertionError(f"pool {pool_id}: bits [{start}, {stop}) overlap [{a}, {b})")
            ranges.append((start, stop))

    def ranges(self, pool_id):
        return sorted(self._ranges[pool_id])

    def delivered_bits(self, pool_id):
        return sum(b - a for a, b in self._ranges[pool_id])

    def check(self):
        """Re-verify disjointness of everything recorded."""
        for pool_id, ranges in self._ranges.items():
            ordered = sorted(ranges)
            for (a0, b0), (a1, b1) in zip(ordered, ordered[1:]):
                if a1 < b0:
                    raise AssertionError(f"pool {pool_id}: [{a0}, {b0}) overlaps [{a1}, {b1})")
        return True


class KeyPool:
    """Queue of final key bits for one link endpoint.

    Bits are handed out in order exactly once; the pool keeps no copy of a
    delivered bit.  ``draw`` may block up to ``timeout`` seconds for deposits.
    """

    def __init__(self, link_id, pool_id=None, store=None, ledger=None, fill_window_s=120.0):
        self.link_id = link_id
        self.pool_id = pool_id if pool_id is not None else link_id
        self.store = store
        self.ledger = ledger
        self.fill_window_s = fill_window_s
        self._chunks = collections.deque()  # [array, position of first live bit]
        self._available = 0
        self.consumed_offset = 0
        self.total_deposited = 0
        self._fills = collections.deque()
        self._cond = threading.Condition()

    @property
    def available(self):
        return self._available

    def deposit(self, bits, t=None, created_at=0.0, persist=True):
        bits = check_bits(getattr(bits, "bits", bits)).copy()
        if not bits.size:
            return 0
        with self._cond:
            if persist and self.store is not None:
                self.store.append_block(bits, created_at)
            self._chunks.append([bits, 0])
            self._available += bits.size
            self.total_deposited += bits.size
            self._fills.append((time.monotonic() if t is None else t, bits.size))
            self._cond.notify_all()
        return bits.size

    def fill_rate(self, now=None):
        """Bits per second deposited over the trailing window."""
        now = time.monotonic() if now is None else now
        horizon = now - self.fill_window_s
        while self._fills and self._fills[0][0] < horizon:
            self._fills.popleft()
        return sum(n for _, n in self._fills) / self.fill_window_s

    def draw(self, n_bits, timeout=0.0):
        n_bits = check_count(n_bits, "n_bits")
        with self._cond:
            if self._available < n_bits and timeout:
                self._cond.wait_for(lambda: self._available >= n_bits, timeout)
            if self._available < n_bits:
                raise KeyExhaustedError(
                    f"pool {self.pool_id}: need {n_bits} bits, only {self._available} available"
                )
            out = np.empty(n_bits, dtype=np.uint8)
            filled = 0
            while filled < n_bits:
                chunk = self._chunks[0]
                arr, pos = chunk
                take = min(n_bits - filled, arr.size - pos)
                out[filled : filled + take] = arr[pos : pos + take]
                arr[pos : pos + take] = 0  # zeroize delivered pad
                chunk[1] = pos + take
                filled += take
                if chunk[1] == arr.size:
                    self._chunks.popleft()
            start = self.consumed_offset
            self.consumed_offset += n_bits
            self._available -= n_bits
            if self.ledger is not None:
                self.ledger.record(self.pool_id, start, self.consumed_offset)
            if self.store is not None and n_bits:
                self.store.append_consume(self.consumed_offset)
            return out

    def skip_to(self, offset):
        """Discard bits up to ``offset`` (never backwards)."""
        if offset < self.consumed_offset:
            raise ValueError(f"pool {self.pool_id}: offset {offset} already consumed")
        if offset > self.consumed_offset:
            self.draw(offset - self.consumed_offset)

    @classmethod
    def from_store(cls, store, ledger=None, pool_id=None):
        """Rebuild a pool from a key-store file, without the consumed bits."""
        blocks, cursor = store.replay()
        pool = cls(store.link_id, pool_id=pool_id, store=None, ledger=ledger)
        for bits, created_at in blocks:
            pool.deposit(bits, t=created_at, persist=False)
        if cursor:
            live_ledger, pool.ledger = pool.ledger, None
            pool.draw(cursor)
            pool.ledger = live_ledger
        pool.store = store
        return pool
