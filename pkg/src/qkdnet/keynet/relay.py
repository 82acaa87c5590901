"""Trusted-relay network: per-link pools, routing and hop-by-hop key forwarding."""

from __future__ import annotations

import collections
import struct
from dataclasses import dataclass

import numpy as np

from .._validation import check_count
from ..errors import KeyExhaustedError
from ..linkmodel import LINK_ENDPOINTS
from .frames import FrameType, Sequencer, decode_frame, encode_frame
from .pool import DeliveryLedger, KeyPool

# KEY_FORWARD payload: u16 hop index | u16 hop count | u32 bit offset | u32 n_bits | ciphertext
_FWD = struct.Struct(">HHII")
_FWD_CHUNK_BITS = 8 * 60000

ONE_WAY_BPS = 600


def accounting_required(n_nodes, mode):
    """Key rate (bits/s) one node needs for a given application mode."""
    n_nodes = check_count(n_nodes, "n_nodes", minimum=2)
    if mode == "one_way":
        return ONE_WAY_BPS
    if mode == "two_way":
        return 2 * ONE_WAY_BPS
    if mode == "broadcast_full_duplex":
        return 2 * ONE_WAY_BPS * (n_nodes - 1)
    raise ValueError(f"unknown accounting mode {mode!r}")


@dataclass(frozen=True)
class RelayRoute:
    endpoints: tuple
    hops: tuple  # link names, in travel order
    nodes: tuple  # every node visited, endpoints included

    def __post_init__(self):
        if len(self.nodes) != len(self.hops) + 1:
            raise ValueError("a route over k hops visits k + 1 nodes")
        if (self.nodes[0], self.nodes[-1]) != tuple(self.endpoints):
            raise ValueError("route endpoints must be its first and last node")

    @property
    def relays(self):
        return self.nodes[1:-1]


class Network:
    """Nodes joined by QKD links; every link end holds its own pool copy."""

    def __init__(self, links, ledger=None, link_ids=None):
        self.links = dict(links)  # name -> (node_a, node_b)
        self.link_ids = dict(link_ids) if link_ids else {n: i + 1 for i, n in enumerate(self.links)}
        self.ledger = ledger if ledger is not None else DeliveryLedger()
        self.sequencer = Sequencer()
        self.pools = {}
        for name, (a, b) in self.links.items():
            for node in (a, b):
                self.pools[(name, node)] = KeyPool(name, pool_id=(name, node), ledger=self.ledger)
        self.nodes = sorted({n for pair in self.links.values() for n in pair})

    @classmethod
    def chain(cls, ledger=None):
        """The Binhu - USTC - Xinglin chain."""
        return cls(LINK_ENDPOINTS, ledger=ledger)

    def pool(self, link, node):
        return self.pools[(link, node)]

    def deposit(self, link, bits, bits_b=None, t=None, created_at=0.0):
        """Add final key to both ends of ``link``.

        ``bits`` goes to the first endpoint and ``bits_b`` (default: the same
        bits) to the second.
        """
        a, b = self.links[link]
        self.pools[(link, a)].deposit(bits, t=t, created_at=created_at)
        self.pools[(link, b)].deposit(bits if bits_b is None else bits_b, t=t, created_at=created_at)

    def available(self, link):
        a, b = self.links[link]
        return min(self.pools[(link, a)].available, self.pools[(link, b)].available)

    def consumed(self, link):
        a, _ = self.links[link]
        return self.pools[(link, a)].consumed_offset

    def route(self, src, dst):
        """Shortest chain of links from ``src`` to ``dst``."""
        if src == dst:
            raise ValueError("route endpoints must differ")
        adj = collections.defaultdict(list)
        for name, (a, b) in self.links.items():
            adj[a].append((b, name))
            adj[b].append((a, name))
        prev = {src: None}
        queue = collections.deque([src])
        while queue:
            u = queue.popleft()
            if u == dst:
                break
            for v, name in adj[u]:
                if v not in prev:
                    prev[v] = (u, name)
                    queue.append(v)
        if dst not in prev:
            raise ValueError(f"no route from {src} to {dst}")
        nodes, hops = [dst], []
        while prev[nodes[-1]] is not None:
            u, name = prev[nodes[-1]]
            hops.append(name)
            nodes.append(u)
        return RelayRoute((src, dst), tuple(reversed(hops)), tuple(reversed(nodes)))

    def connected(self, nodes):
        nodes = list(nodes)
        try:
            for other in nodes[1:]:
                self.route(nodes[0], other)
        except ValueError:
            return False
        return True

    def relay_forward(self, route, key_len, rng=None, transcript=None, wire=None):
        return relay_forward(route, key_len, self, rng=rng, transcript=transcript, wire=wire)


def relay_forward(route, key_len, network, rng=None, transcript=None, wire=None):
    """Carry a fresh key from ``route.endpoints[0]`` to ``route.endpoints[1]``.

    The origin draws the key ``K`` from its randomness source.  On each hop
    the sender one-time-pads ``K`` with bits from its copy of that link's pool
    and sends KEY_FORWARD frames; the next node strips the pad with its own
    copy.  Relays therefore see ``K`` in plaintext (``transcript`` records
    this).  If a hop runs dry the forward aborts, and pads already drawn on
    earlier hops stay consumed.

    Returns ``(key at origin, key at destination)``.
    """
    key_len = check_count(key_len, "key_len")
    rng = np.random.default_rng(rng)
    origin_key = rng.integers(0, 2, size=key_len, dtype=np.uint8)
    if transcript is not None:
        transcript.setdefault(route.nodes[0], []).append(("generated", origin_key.copy()))
    held = origin_key
    n_hops = len(route.hops)
    for h, link in enumerate(route.hops):
        sender, receiver = route.nodes[h], route.nodes[h + 1]
        pad_tx = network.pool(link, sender).draw(key_len)
        cipher = held ^ pad_tx
        frames = []
        link_num = network.link_ids[link]
        for off in range(0, max(key_len, 1), _FWD_CHUNK_BITS):
            part = cipher[off : off + _FWD_CHUNK_BITS]
            payload = _FWD.pack(h, n_hops, off, part.size) + np.packbits(part).tobytes()
            frames.append(encode_frame(network.sequencer.frame(FrameType.KEY_FORWARD, link_num, payload)))
        if wire is not None:
            wire.extend(frames)
        try:
            pad_rx = network.pool(link, receiver).draw(key_len)
        except KeyExhaustedError:
            raise KeyExhaustedError(f"relay forward aborted on hop {link}: receiver pool empty") from None
        received = np.zeros(key_len, dtype=np.uint8)
        for blob in frames:
            fr = decode_frame(blob)
            _, _, off, nb = _FWD.unpack_from(fr.payload)
            received[off : off + nb] = np.unpackbits(np.frombuffer(fr.payload[_FWD.size :], dtype=np.uint8), count=nb)
        held = received ^ pad_rx
        if transcript is not None:
            transcript.setdefault(receiver, []).append(("plaintext", held.copy()))
    return origin_key, held
