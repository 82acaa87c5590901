"""Append-only key-store file.

Header ``b"QKDKEYS1" | u32 link_id | u16 name length | name``, then records:

* ``0x01 | u32 n_bits | f64 created_at | 32-byte SHA-256 seal | packed bits``
* ``0x02 | u64 consumed cursor``

Replaying the journal yields the deposited blocks and the highest cursor, so
a restarted pool never hands out bits that were already delivered.
"""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path

import numpy as np

from .._validation import check_bits

MAGIC = b"QKDKEYS1"
_HEAD = struct.Struct(">8sIH")
_BLOCK = struct.Struct(">BId32s")
_CONSUME = struct.Struct(">BQ")
KIND_BLOCK = 1
KIND_CONSUME = 2


def _seal(n_bits, created_at, data):
    return hashlib.sha256(struct.pack(">Id", n_bits, created_at) + data).digest()


class KeyStoreError(ValueError):
    pass


class KeyStore:
    def __init__(self, path, link_id, name):
        self.path = Path(path)
        self.link_id = link_id
        self.name = name

    @classmethod
    def create(cls, path, link_id, name=""):
        path = Path(path)
        blob = name.encode()
        with open(path, "xb") as fh:
            fh.write(_HEAD.pack(MAGIC, link_id, len(blob)) + blob)
        return cls(path, link_id, name)

    @classmethod
    def open(cls, path):
        path = Path(path)
        with open(path, "rb") as fh:
            head = fh.read(_HEAD.size)
            if len(head) < _HEAD.size:
                raise KeyStoreError(f"{path}: truncated header")
            magic, link_id, name_len = _HEAD.unpack(head)
            if magic != MAGIC:
                raise KeyStoreError(f"{path}: not a key store")
            name = fh.read(name_len).decode()
        return cls(path, link_id, name)

    def _append(self, blob):
        with open(self.path, "ab") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())

    def append_block(self, bits, created_at=0.0):
        bits = check_bits(bits)
        data = np.packbits(bits).tobytes()
        created_at = float(created_at)
        self._append(_BLOCK.pack(KIND_BLOCK, bits.size, created_at, _seal(bits.size, created_at, data)) + data)

    def append_consume(self, cursor):
        self._append(_CONSUME.pack(KIND_CONSUME, cursor))

    def replay(self):
        """Return ``([(bits, created_at), ...], consumed cursor)``."""
        with open(self.path, "rb") as fh:
            raw = fh.read()
        _, _, name_len = _HEAD.unpack_from(raw)
        off = _HEAD.size + name_len
        blocks = []
        cursor = 0
        while off < len(raw):
            kind = raw[off]
            if kind == KIND_BLOCK:
                if off + _BLOCK.size > len(raw):
                    raise KeyStoreError("truncated block record")
                _, n_bits, created_at, seal = _BLOCK.unpack_from(raw, off)
                off += _BLOCK.size
                nbytes = (n_bits + 7) // 8
                data = raw[off : off + nbytes]
                if len(data) != nbytes or _seal(n_bits, created_at, data) != seal:
                    raise KeyStoreError("key block failed its integrity seal")
                off += nbytes
                bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=n_bits)
                blocks.append((bits, created_at))
            elif kind == KIND_CONSUME:
                if off + _CONSUME.size > len(raw):
                    raise KeyStoreError("truncated consume record")
                _, c = _CONSUME.unpack_from(raw, off)
                cursor = max(cursor, c)
                off += _CONSUME.size
            else:
                raise KeyStoreError(f"unknown record kind {kind}")
        total = sum(b.size for b, _ in blocks)
        if cursor > total:
            raise KeyStoreError(f"journal cursor {cursor} beyond stored {total} bits")
        return blocks, cursor

    def summary(self):
        blocks, cursor = self.replay()
        total = sum(b.size for b, _ in blocks)
        return {
            "link_id": self.link_id,
            "name": self.name,
            "blocks": len(blocks),
            "total_bits": total,
            "consumed_bits": cursor,
            "available_bits": total - cursor,
        }
