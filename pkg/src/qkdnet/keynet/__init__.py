"""Key pools, trusted-relay forwarding and the classical wire protocol."""

from .frames import (
    MAX_PAYLOAD,
    PROTOCOL_VERSION,
    Frame,
    FrameType,
    Sequencer,
    SequenceChecker,
    decode_frame,
    encode_frame,
    iter_frames,
)
from .keystore import KeyStore, KeyStoreError
from .pool import DeliveryLedger, KeyPool
from .relay import Network, RelayRoute, accounting_required, relay_forward
from .transport import FrameStream, InProcessTransport, SocketTransport, Transport

__all__ = [
    "MAX_PAYLOAD",
    "PROTOCOL_VERSION",
    "DeliveryLedger",
    "Frame",
    "FrameStream",
    "FrameType",
    "InProcessTransport",
    "KeyPool",
    "KeyStore",
    "KeyStoreError",
    "Network",
    "RelayRoute",
    "SequenceChecker",
    "Sequencer",
    "SocketTransport",
    "Transport",
    "accounting_required",
    "decode_frame",
    "encode_frame",
    "iter_frames",
    "relay_forward",
]
