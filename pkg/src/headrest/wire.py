"""Framed binary link carrying ear positions to the controller.

One message type: timestamped binaural coordinates plus which side was
directly observed.  Frames are length-prefixed on a byte stream::

    u16 BE  length of everything after this prefix (66 for version 1)
    u8      version (1)
    u8      flags — bits 0-1: trusted side (0 Left, 1 Right, 2 Both)
    u64 LE  timestamp, microseconds
    6x f64  LE: left xyz, right xyz (meters, stage frame)
    f32 LE  confidence in [0, 1]
    u32 LE  CRC32 of the payload (everything between prefix and CRC)

Positions are state, not events: the subscriber keeps a depth-1
latest-wins mailbox, and a slow consumer simply skips intermediate
messages.  Both the in-process channel and the stream-socket transport
move actual encoded bytes, so every delivered message passed the CRC.
"""

from __future__ import annotations

import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

PROTOCOL_VERSION = 1

#: Value of the length prefix for a version-1 frame (payload + CRC).
FRAME_LENGTH = 66

#: Total bytes on the wire per frame, including the 2-byte prefix.
FRAME_SIZE = 2 + FRAME_LENGTH

#: Seconds without a message before a subscriber reports Stale.
STALE_AFTER = 0.25

_PAYLOAD = struct.Struct("<BBQ6df")


class WireError(Exception):
    """Base for protocol decode failures."""


class TruncatedFrame(WireError):
    """Not enough bytes for a complete frame; nothing was consumed."""


class BadCrc(WireError):
    """Frame checksum mismatch; the frame was discarded."""


class BadVersion(WireError):
    """Frame is intact but its version or layout is not understood."""


class MalformedPayload(WireError):
    """Checksummed frame carries impossible field values."""


class TrustedSide(Enum):
    LEFT = 0
    RIGHT = 1
    BOTH = 2


class Status(Enum):
    FRESH = "fresh"
    STALE = "stale"
    DISCONNECTED = "disconnected"


@dataclass(frozen=True)
class EarPositionMessage:
    """One binaural position estimate."""

    timestamp_us: int
    left: np.ndarray
    right: np.ndarray
    trusted_side: TrustedSide = TrustedSide.BOTH
    confidence: float = 1.0
    version: int = PROTOCOL_VERSION

    def __post_init__(self):
        left = np.asarray(self.left, dtype=float)
        right = np.asarray(self.right, dtype=float)
        if left.shape != (3,) or right.shape != (3,):
            raise ValueError("left/right must be 3-vectors")
        if not (np.all(np.isfinite(left)) and np.all(np.isfinite(right))):
            raise ValueError("coordinates must be finite")
        if self.version != PROTOCOL_VERSION:
            raise ValueError(f"version must be {PROTOCOL_VERSION}")
        if not (0.0 <= self.confidence <= 1.0) or not np.isfinite(self.confidence):
            raise ValueError("confidence must lie in [0, 1]")
        if not (0 <= int(self.timestamp_us) < 2**64):
            raise ValueError("timestamp_us must fit in u64")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    def __eq__(self, other):
        if not isinstance(other, EarPositionMessage):
            return NotImplemented
        return (
            self.timestamp_us == other.timestamp_us
            and np.array_equal(self.left, other.left)
            and np.array_equal(self.right, other.right)
            and self.trusted_side is other.trusted_side
            and self.confidence == other.confidence
            and self.version == other.version
        )


def encode(msg: EarPositionMessage) -> bytes:
    """Serialize ``msg`` into one complete wire frame."""
    payload = _PAYLOAD.pack(
        msg.version,
        msg.trusted_side.value,
        int(msg.timestamp_us),
        *[float(v) for v in msg.left],
        *[float(v) for v in msg.right],
        float(np.float32(msg.confidence)),
    )
    body = payload + struct.pack("<I", zlib.crc32(payload))
    return struct.pack(">H", len(body)) + body


def decode(data: bytes | bytearray | memoryview):
    """Decode one frame from the head of ``data``.

    Returns ``(message, bytes_consumed)``.  Raises :class:`TruncatedFrame`
    (nothing consumed) when the buffer holds less than one full frame; a
    frame failing its CRC or carrying an unknown version still counts as
    consumed so the stream can move on.
    """
    data = bytes(data)
    if len(data) < 2:
        raise TruncatedFrame("need 2 length bytes")
    (length,) = struct.unpack_from(">H", data)
    if len(data) < 2 + length:
        raise TruncatedFrame(f"need {2 + length} bytes, have {len(data)}")
    if length < 5:
        raise BadVersion(f"length {length} cannot hold a version and CRC")
    frame = data[2 : 2 + length]
    payload, trailer = frame[:-4], frame[-4:]
    (crc,) = struct.unpack("<I", trailer)
    if zlib.crc32(payload) != crc:
        raise BadCrc("payload CRC32 mismatch")
    version = payload[0]
    if version != PROTOCOL_VERSION:
        raise BadVersion(f"unknown version {version}")
    if length != FRAME_LENGTH:
        raise BadVersion(f"version 1 frame must have length {FRAME_LENGTH}, got {length}")
    fields = _PAYLOAD.unpack(payload)
    _, flags, t_us, lx, ly, lz, rx, ry, rz, conf = fields
    side_bits = flags & 0b11
    if side_bits > 2:
        raise MalformedPayload(f"trusted-side bits {side_bits}")
    left = np.array([lx, ly, lz])
    right = np.array([rx, ry, rz])
    if not (np.all(np.isfinite(left)) and np.all(np.isfinite(right))):
        raise MalformedPayload("non-finite coordinates")
    if not (0.0 <= conf <= 1.0):
        raise MalformedPayload(f"confidence {conf} outside [0, 1]")
    msg = EarPositionMessage(
        timestamp_us=t_us,
        left=left,
        right=right,
        trusted_side=TrustedSide(side_bits),
        confidence=conf,
    )
    return msg, 2 + length


class FrameDecoder:
    """Incremental decoder for a frame stream.

    Feed arbitrary byte chunks; complete valid messages come back in
    order.  Bad frames are counted and skipped — corrupted bytes never
    surface as positions.
    """

    def __init__(self):
        self._buffer = bytearray()
        self.bad_crc = 0
        self.bad_version = 0
        self.malformed = 0

    def feed(self, chunk: bytes) -> list:
        self._buffer.extend(chunk)
        out = []
        while True:
            try:
                msg, consumed = decode(self._buffer)
            except TruncatedFrame:
                break
            except BadCrc:
                self.bad_crc += 1
                consumed = 2 + struct.unpack_from(">H", self._buffer)[0]
            except BadVersion:
                self.bad_version += 1
                consumed = 2 + struct.unpack_from(">H", self._buffer)[0]
            except MalformedPayload:
                self.malformed += 1
                consumed = 2 + struct.unpack_from(">H", self._buffer)[0]
            else:
                out.append(msg)
            del self._buffer[:consumed]
        return out


class Mailbox:
    """Depth-1 latest-wins slot, safe for one writer and one reader."""

    def __init__(self):
        self._lock = threading.Lock()
        self._msg: EarPositionMessage | None = None
        self._seq = 0
        self._taken_seq = 0
        self._taken_t: int | None = None

    def put(self, msg: EarPositionMessage) -> None:
        with self._lock:
            if self._msg is not None and msg.timestamp_us < self._msg.timestamp_us:
                return  # never step backwards
            self._msg = msg
            self._seq += 1

    def take(self) -> EarPositionMessage | None:
        """The newest message not seen before, else None."""
        with self._lock:
            if self._seq == self._taken_seq:
                return None
            if self._taken_t is not None and self._msg.timestamp_us <= self._taken_t:
                return None
            self._taken_seq = self._seq
            self._taken_t = self._msg.timestamp_us
            return self._msg

    @property
    def latest(self) -> EarPositionMessage | None:
        """Last good message, seen or not."""
        with self._lock:
            return self._msg


class Subscriber:
    """Consumer end: poll the mailbox, watch freshness."""

    def __init__(self, mailbox: Mailbox, time_fn=time.monotonic):
        self._mailbox = mailbox
        self._time = time_fn
        self._last_arrival: float | None = None
        self._disconnected = False

    def _on_message(self) -> None:
        self._last_arrival = self._time()

    def poll(self) -> EarPositionMessage | None:
        return self._mailbox.take()

    @property
    def latest(self) -> EarPositionMessage | None:
        return self._mailbox.latest

    def status(self) -> Status:
        if self._disconnected:
            return Status.DISCONNECTED
        if self._last_arrival is None:
            return Status.STALE
        return Status.FRESH if self._time() - self._last_arrival <= STALE_AFTER else Status.STALE


class ChannelPublisher:
    """Producer end of the in-process channel.

    Messages still travel as encoded bytes through a real decoder, so the
    in-process path exercises the same contract as the socket path.
    """

    def __init__(self, subscriber: Subscriber):
        self._subscriber = subscriber
        self._decoder = FrameDecoder()

    def publish(self, msg: EarPositionMessage) -> None:
        for decoded in self._decoder.feed(encode(msg)):
            self._subscriber._mailbox.put(decoded)
            self._subscriber._on_message()

    def close(self) -> None:
        self._subscriber._disconnected = True


def channel(time_fn=time.monotonic):
    """An in-process publisher/subscriber pair sharing one mailbox."""
    sub = Subscriber(Mailbox(), time_fn=time_fn)
    return ChannelPublisher(sub), sub


def _parse_endpoint(endpoint: str):
    if "/" in endpoint:
        return socket.AF_UNIX, endpoint
    host, _, port = endpoint.rpartition(":")
    return socket.AF_INET, (host or "127.0.0.1", int(port))


class SocketPublisher:
    """Serves one subscriber over a stream socket and pushes frames to it."""

    def __init__(self, endpoint: str, accept_timeout: float = 10.0):
        family, addr = _parse_endpoint(endpoint)
        self._server = socket.socket(family, socket.SOCK_STREAM)
        if family == socket.AF_INET:
            self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server.bind(addr)
        self._server.listen(1)
        self._server.settimeout(accept_timeout)
        self._conn: socket.socket | None = None

    @property
    def address(self) -> str:
        name = self._server.getsockname()
        return name if isinstance(name, str) else f"{name[0]}:{name[1]}"

    def accept(self) -> None:
        self._conn, _ = self._server.accept()

    def publish(self, msg: EarPositionMessage) -> None:
        if self._conn is None:
            self.accept()
        self._conn.sendall(encode(msg))

    def close(self) -> None:
        if self._conn is not None:
            self._conn.close()
        self._server.close()


class SocketSubscriber(Subscriber):
    """Connects to a publisher and pumps frames on a background thread."""

    def __init__(self, endpoint: str, time_fn=time.monotonic, connect_timeout: float = 10.0):
        super().__init__(Mailbox(), time_fn=time_fn)
        family, addr = _parse_endpoint(endpoint)
        self._sock = socket.create_connection(addr, timeout=connect_timeout) if (
            family == socket.AF_INET
        ) else self._unix_connect(addr, connect_timeout)
        self._decoder = FrameDecoder()
        self._thread = threading.Thread(target=self._pump, daemon=True)
        self._thread.start()

    @staticmethod
    def _unix_connect(path: str, timeout: float) -> socket.socket:
        s = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        s.settimeout(timeout)
        s.connect(path)
        s.settimeout(None)
        return s

    def _pump(self) -> None:
        try:
            while True:
                chunk = self._sock.recv(4096)
                if not chunk:
                    break
                for msg in self._decoder.feed(chunk):
                    self._mailbox.put(msg)
                    self._on_message()
        except OSError:
            pass
        finally:
            self._disconnected = True

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        self._thread.join(timeout=2.0)
