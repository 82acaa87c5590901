"""Reliable ordered byte streams carrying frames, in-process or over sockets."""

from __future__ import annotations

import collections
import socket
import threading

from ..errors import FrameError
from .frames import PREFIX_SIZE, Frame, SequenceChecker, decode_frame, encode_frame, parse_prefix


class Transport:
    """Minimal byte-stream interface: ``send`` all bytes, ``recv_exact`` n bytes."""

    def send(self, data: bytes):
        raise NotImplementedError

    def recv_exact(self, n: int, timeout=None) -> bytes:
        raise NotImplementedError

    def close(self):
        pass


class _Pipe:
    def __init__(self):
        self.buf = bytearray()
        self.cond = threading.Condition()
        self.closed = False


class InProcessTransport(Transport):
    def __init__(self, inbound: _Pipe, outbound: _Pipe):
        self._in = inbound
        self._out = outbound

    @classmethod
    def pair(cls):
        a, b = _Pipe(), _Pipe()
        return cls(a, b), cls(b, a)

    def send(self, data):
        with self._out.cond:
            if self._out.closed:
                raise ConnectionError("transport closed")
            self._out.buf.extend(data)
            self._out.cond.notify_all()

    def recv_exact(self, n, timeout=None):
        with self._in.cond:
            ok = self._in.cond.wait_for(lambda: len(self._in.buf) >= n or self._in.closed, timeout)
            if len(self._in.buf) < n:
                if self._in.closed:
                    raise ConnectionError("transport closed")
                if not ok:
                    raise TimeoutError("timed out waiting for data")
            data = bytes(self._in.buf[:n])
            del self._in.buf[:n]
            return data

    def close(self):
        for pipe in (self._in, self._out):
            with pipe.cond:
                pipe.closed = True
                pipe.cond.notify_all()


class SocketTransport(Transport):
    def __init__(self, sock: socket.socket):
        self.sock = sock

    def send(self, data):
        self.sock.sendall(data)

    def recv_exact(self, n, timeout=None):
        self.sock.settimeout(timeout)
        chunks = collections.deque()
        got = 0
        while got < n:
            chunk = self.sock.recv(n - got)
            if not chunk:
                raise ConnectionError("socket closed")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def close(self):
        self.sock.close()


class FrameStream:
    """Frames over a :class:`Transport`, with per-stream sequence checking."""

    def __init__(self, transport: Transport):
        self.transport = transport
        self.checker = SequenceChecker()

    def send(self, frame: Frame):
        self.transport.send(encode_frame(frame))

    def recv(self, timeout=None) -> Frame:
        prefix = self.transport.recv_exact(PREFIX_SIZE, timeout)
        *_, length = parse_prefix(prefix)
        payload = self.transport.recv_exact(length, timeout) if length else b""
        frame = decode_frame(prefix + payload)
        return self.checker.check(frame)

    def close(self):
        self.transport.close()


__all__ = ["Transport", "InProcessTransport", "SocketTransport", "FrameStream", "FrameError"]
