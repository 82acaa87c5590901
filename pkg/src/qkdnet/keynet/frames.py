"""Classical-channel wire frames.

Layout, big-endian::

    u8 version | u8 type | u16 reserved | u32 link_id | u64 sequence
    u32 payload length | payload
"""

from __future__ import annotations

import enum
import struct
import threading
from dataclasses import dataclass

from ..errors import FrameError

PROTOCOL_VERSION = 1
MAX_PAYLOAD = 64 * 1024
HEADER = struct.Struct(">BBHIQ")
LENGTH = struct.Struct(">I")
PREFIX_SIZE = HEADER.size + LENGTH.size


class FrameType(enum.IntEnum):
    BASIS_ANNOUNCE = 1
    SIFT_ACK = 2
    EC_PARITY = 3
    EC_VERIFY = 4
    PA_SEED = 5
    KEY_FORWARD = 6
    OTP_DATA = 7
    CONTROL = 8


@dataclass(frozen=True)
class Frame:
    type: FrameType
    link_id: int
    sequence: int
    payload: bytes = b""
    version: int = PROTOCOL_VERSION

    def __post_init__(self):
        object.__setattr__(self, "type", FrameType(self.type))
        if not 0 <= self.link_id < 1 << 32:
            raise FrameError(f"link_id out of range: {self.link_id}")
        if not 0 <= self.sequence < 1 << 64:
            raise FrameError(f"sequence out of range: {self.sequence}")
        if len(self.payload) > MAX_PAYLOAD:
            raise FrameError(f"payload of {len(self.payload)} bytes exceeds {MAX_PAYLOAD}")
        object.__setattr__(self, "payload", bytes(self.payload))


def encode_frame(frame: Frame) -> bytes:
    return (
        HEADER.pack(frame.version, int(frame.type), 0, frame.link_id, frame.sequence)
        + LENGTH.pack(len(frame.payload))
        + frame.payload
    )


def parse_prefix(prefix: bytes):
    """Decode the fixed 20-byte prefix; returns (version, type, link, seq, length)."""
    version, ftype, _reserved, link_id, seq = HEADER.unpack_from(prefix)
    (length,) = LENGTH.unpack_from(prefix, HEADER.size)
    if version != PROTOCOL_VERSION:
        raise FrameError(f"unsupported protocol version {version}")
    try:
        ftype = FrameType(ftype)
    except ValueError:
        raise FrameError(f"unknown frame type {ftype}") from None
    if length > MAX_PAYLOAD:
        raise FrameError(f"declared payload length {length} exceeds {MAX_PAYLOAD}")
    return version, ftype, link_id, seq, length


def decode_frame(data: bytes) -> Frame:
    if len(data) < PREFIX_SIZE:
        raise FrameError("truncated frame header")
    version, ftype, link_id, seq, length = parse_prefix(data[:PREFIX_SIZE])
    if len(data) != PREFIX_SIZE + length:
        raise FrameError(f"frame length mismatch: header says {length}, got {len(data) - PREFIX_SIZE}")
    return Frame(ftype, link_id, seq, data[PREFIX_SIZE:], version)


def iter_frames(data: bytes):
    """Split a byte string holding back-to-back frames."""
    off = 0
    while off < len(data):
        if len(data) - off < PREFIX_SIZE:
            raise FrameError("truncated frame header")
        *_, length = parse_prefix(data[off : off + PREFIX_SIZE])
        end = off + PREFIX_SIZE + length
        if end > len(data):
            raise FrameError("truncated frame payload")
        yield decode_frame(data[off:end])
        off = end


class Sequencer:
    """Hands out strictly increasing sequence numbers per (link, type)."""

    def __init__(self):
        self._next = {}
        self._lock = threading.Lock()

    def next(self, link_id, ftype):
        key = (link_id, FrameType(ftype))
        with self._lock:
            seq = self._next.get(key, 0)
            self._next[key] = seq + 1
        return seq

    def frame(self, ftype, link_id, payload=b""):
        return Frame(ftype, link_id, self.next(link_id, ftype), payload)


class SequenceChecker:
    """Rejects frames whose sequence does not increase within its stream."""

    def __init__(self):
        self._last = {}

    def check(self, frame: Frame):
        key = (frame.link_id, frame.type)
        last = self._last.get(key)
        if last is not None and frame.sequence <= last:
            raise FrameError(
                f"sequence {frame.sequence} not above {last} on link {frame.link_id} {frame.type.name}"
            )
        self._last[key] = frame.sequence
        return frame
