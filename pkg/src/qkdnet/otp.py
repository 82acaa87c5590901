"""One-time-pad messaging over the relay network.

A session owns one pad stream per (sender, receiver) direction.  Single-hop
streams draw pad bits straight from the link pools; multi-hop streams first
carry end-to-end key across the relay in chunks and then spend it.
"""

from __future__ import annotations

import collections
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_bits, check_count, check_positive
from .errors import FrameError, KeyExhaustedError, StarvationError
from .keynet.frames import FrameType, decode_frame, encode_frame

DEFAULT_CHUNK_BITS = 4096
VOICE_RATE_BPS = 600
OTP_HEADER = struct.Struct(">QI")  # session id, byte offset within the direction stream


def otp_encrypt(plaintext, pad):
    """XOR ``plaintext`` bytes with a pad holding ``8 * len(plaintext)`` bits."""
    data = np.frombuffer(bytes(plaintext), dtype=np.uint8)
    pad = check_bits(pad, "pad")
    if pad.size != 8 * data.size:
        raise ValueError(f"pad holds {pad.size} bits, need {8 * data.size}")
    return (data ^ np.packbits(pad)).tobytes()


def otp_decrypt(ciphertext, pad):
    return otp_encrypt(ciphertext, pad)


class _BitQueue:
    def __init__(self):
        self._parts = collections.deque()
        self.size = 0

    def push(self, bits):
        if bits.size:
            self._parts.append(bits)
            self.size += bits.size

    def pop(self, n):
        out = np.empty(n, dtype=np.uint8)
        got = 0
        while got < n:
            part = self._parts[0]
            take = min(n - got, part.size)
            out[got : got + take] = part[:take]
            if take == part.size:
                self._parts.popleft()
            else:
                self._parts[0] = part[take:]
            got += take
        self.size -= n
        return out


class PadStream:
    """Pad material for one direction, held at both ends.

    ``tx`` is what the sender encrypts with and ``rx`` what the receiver
    decrypts with; they coincide only if the pool copies stayed in step.
    """

    def __init__(self, network, sender, receiver, chunk_bits=DEFAULT_CHUNK_BITS, rng=None):
        self.network = network
        self.route = network.route(sender, receiver)
        self.chunk_bits = check_count(chunk_bits, "chunk_bits", minimum=1)
        self.rng = np.random.default_rng(rng)
        self.tx = _BitQueue()
        self.rx = _BitQueue()
        self.established_bits = 0
        self.spent_bits = 0

    @property
    def multi_hop(self):
        return len(self.route.hops) > 1

    def _hop_available(self):
        return min(self.network.available(link) for link in self.route.hops)

    def _establish(self, deficit):
        avail = self._hop_available()
        if self.multi_hop:
            # Pre-establish whole chunks only while a chunk's worth stays in
            # the hop pools for other streams; otherwise forward the deficit.
            want = -(-deficit // self.chunk_bits) * self.chunk_bits
            size = want if avail - want >= self.chunk_bits else deficit
        else:
            size = deficit
        if avail < size:
            return False
        if self.multi_hop:
            k_tx, k_rx = self.network.relay_forward(self.route, size, rng=self.rng)
        else:
            (link,) = self.route.hops
            sender, receiver = self.route.endpoints
            k_tx = self.network.pool(link, sender).draw(size)
            k_rx = self.network.pool(link, receiver).draw(size)
        self.tx.push(k_tx)
        self.rx.push(k_rx)
        self.established_bits += size
        return True

    def ready(self, n_bits):
        return self.tx.size >= n_bits or self._hop_available() >= n_bits - self.tx.size

    def take(self, n_bits, timeout=0.0):
        """Return ``(tx_pad, rx_pad)`` of ``n_bits`` each or raise StarvationError."""
        deadline = time.monotonic() + timeout
        while self.tx.size < n_bits:
            try:
                if self._establish(n_bits - self.tx.size):
                    continue
            except KeyExhaustedError as exc:
                raise StarvationError(f"{self.route.endpoints}: {exc}") from None
            if time.monotonic() >= deadline:
                raise StarvationError(
                    f"{self.route.endpoints[0]}->{self.route.endpoints[1]}: need {n_bits} pad bits, "
                    f"{self.tx.size} buffered, {self._hop_available()} in hop pools"
                )
            time.sleep(min(0.01, max(0.0, deadline - time.monotonic())))
        self.spent_bits += n_bits
        return self.tx.pop(n_bits), self.rx.pop(n_bits)


@dataclass
class Delivery:
    session_id: int
    sender: str
    receiver: str
    offset: int
    plaintext: bytes
    frame: bytes


class OtpSession:
    """Two-party duplex or one-to-many broadcast session.

    Parameters
    ----------
    network : Network
    participants : sequence of str
        Node names; duplicates are rejected.
    mode : {"duplex", "broadcast"}
    session_id : int
    payload_rate : float
        Target payload bits per second per sending direction.
    chunk_bits : int
        Size of end-to-end key chunks carried over multi-hop routes.
    """

    def __init__(
        self,
        network,
        participants,
        mode="duplex",
        session_id=0,
        payload_rate=VOICE_RATE_BPS,
        chunk_bits=DEFAULT_CHUNK_BITS,
        rng=None,
    ):
        participants = tuple(participants)
        if len(set(participants)) != len(participants):
            raise ValueError(f"participants repeat a node: {participants}")
        if mode not in ("duplex", "broadcast"):
            raise ValueError(f"unknown session mode {mode!r}")
        if mode == "duplex" and len(participants) != 2:
            raise ValueError("a duplex session has exactly two participants")
        if len(participants) < 2:
            raise ValueError("a session needs at least two participants")
        unknown = set(participants) - set(network.nodes)
        if unknown:
            raise ValueError(f"participants not in network: {sorted(unknown)}")
        self.network = network
        self.participants = participants
        self.mode = mode
        self.session_id = check_count(session_id, "session_id")
        self.payload_rate = check_positive(payload_rate, "payload_rate")
        self.chunk_bits = chunk_bits
        self._ss = np.random.SeedSequence(rng) if not isinstance(rng, np.random.SeedSequence) else rng
        self.streams = {}
        self.tx_cursor = collections.Counter()
        self.rx_cursor = collections.Counter()

    def stream(self, sender, receiver):
        key = (sender, receiver)
        if key not in self.streams:
            (child,) = self._ss.spawn(1)
            self.streams[key] = PadStream(self.network, sender, receiver, self.chunk_bits, child)
        return self.streams[key]

    def _deliver(self, sender, receiver, payload, timeout):
        stream = self.stream(sender, receiver)
        tx_pad, rx_pad = stream.take(8 * len(payload), timeout)
        offset = self.tx_cursor[(sender, receiver)]
        cipher = otp_encrypt(payload, tx_pad)
        link_id = self.network.link_ids[stream.route.hops[0]]
        frame = self.network.sequencer.frame(
            FrameType.OTP_DATA, link_id, OTP_HEADER.pack(self.session_id, offset) + cipher
        )
        blob = encode_frame(frame)
        self.tx_cursor[(sender, receiver)] += len(payload)
        plain = self._receive(sender, receiver, blob, rx_pad)
        return Delivery(self.session_id, sender, receiver, offset, plain, blob)

    def _receive(self, sender, receiver, blob, rx_pad):
        frame = decode_frame(blob)
        if frame.type != FrameType.OTP_DATA:
            raise FrameError(f"expected OTP_DATA, got {frame.type.name}")
        sid, offset = OTP_HEADER.unpack_from(frame.payload)
        if sid != self.session_id:
            raise FrameError(f"frame for session {sid} delivered to session {self.session_id}")
        if offset != self.rx_cursor[(sender, receiver)]:
            raise FrameError(f"stream offset {offset} != receiver cursor {self.rx_cursor[(sender, receiver)]}")
        cipher = frame.payload[OTP_HEADER.size :]
        self.rx_cursor[(sender, receiver)] += len(cipher)
        return otp_decrypt(cipher, rx_pad)


def _check_member(session, node):
    if node not in session.participants:
        raise ValueError(f"{node} is not a participant of session {session.session_id}")


def duplex_send(session: OtpSession, sender, payload, timeout=0.0):
    """Encrypt, frame and deliver ``payload`` to the other party."""
    if session.mode != "duplex":
        raise ValueError("duplex_send needs a duplex session")
    _check_member(session, sender)
    (receiver,) = [n for n in session.participants if n != sender]
    return session._deliver(sender, receiver, bytes(payload), timeout)


def broadcast_send(session: OtpSession, origin, payload, timeout=0.0):
    """Send ``payload`` to every other participant on its own pad stream.

    Returns ``{receiver: Delivery or StarvationError}``; one starving route
    does not stop the others.
    """
    if session.mode != "broadcast":
        raise ValueError("broadcast_send needs a broadcast session")
    _check_member(session, origin)
    payload = bytes(payload)
    out = {}
    for receiver in session.participants:
        if receiver == origin:
            continue
        try:
            out[receiver] = session._deliver(origin, receiver, payload, timeout)
        except StarvationError as exc:
            out[receiver] = exc
    return out


@dataclass
class StarvationEvent:
    t: float
    session_id: int
    sender: str
    receiver: str
    needed_bits: int


@dataclass
class TrafficApp:
    """Constant-bit-rate source attached to a session."""

    session: OtpSession
    senders: tuple = ()  # broadcast: the origin; duplex: both parties by default
    rate_bps: float = VOICE_RATE_BPS
    start_s: float = 0.0
    sent_bytes: collections.Counter = field(default_factory=collections.Counter)
    delivered_bytes: collections.Counter = field(default_factory=collections.Counter)
    mismatches: int = 0
    starvation: list = field(default_factory=list)
    _credit: collections.Counter = field(default_factory=collections.Counter)

    def __post_init__(self):
        if not self.senders:
            self.senders = self.session.participants if self.session.mode == "duplex" else self.session.participants[:1]
        self._payload_rng = np.random.default_rng(self.session.session_id)

    def step(self, t, dt):
        """Emit ``rate_bps * dt`` bits of payload per sender at virtual time ``t``."""
        if t < self.start_s:
            return
        for sender in self.senders:
            self._credit[sender] += self.rate_bps * dt / 8.0
            nbytes = int(self._credit[sender])
            self._credit[sender] -= nbytes
            payload = self._payload_rng.integers(0, 256, nbytes, dtype=np.uint8).tobytes()
            if self.session.mode == "duplex":
                results = {}
                (receiver,) = [n for n in self.session.participants if n != sender]
                try:
                    results[receiver] = duplex_send(self.session, sender, payload)
                except StarvationError as exc:
                    results[receiver] = exc
            else:
                results = broadcast_send(self.session, sender, payload)
            for receiver, res in results.items():
                if isinstance(res, StarvationError):
                    self.starvation.append(StarvationEvent(t, self.session.session_id, sender, receiver, 8 * nbytes))
                    continue
                self.sent_bytes[(sender, receiver)] += nbytes
                self.delivered_bytes[(sender, receiver)] += len(res.plaintext)
                if res.plaintext != payload:
                    self.mismatches += 1


def run_traffic(network, apps, duration_s, fill_bps=None, step_s=1.0, t0=0.0):
    """Advance the applications in virtual time.

    ``fill_bps`` maps link name to a constant deposit rate applied at the
    start of every step (pass ``None`` when pools are filled elsewhere).
    Returns per-link bits consumed during the run.
    """
    check_positive(step_s, "step_s")
    before = {link: network.consumed(link) for link in network.links}
    rng = np.random.default_rng(0)
    credit = collections.Counter()
    n_steps = int(round(duration_s / step_s))
    for i in range(n_steps):
        t = t0 + i * step_s
        for link, rate in (fill_bps or {}).items():
            credit[link] += rate * step_s
            n = int(credit[link])
            credit[link] -= n
            if n:
                network.deposit(link, rng.integers(0, 2, n, dtype=np.uint8), t=t)
        for app in apps:
            app.step(t, step_s)
    return {link: network.consumed(link) - before[link] for link in network.links}
