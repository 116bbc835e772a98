"""Frame codec, mailbox, and transport behavior."""

import struct
import threading
import time
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from headrest.wire import (
    FRAME_LENGTH,
    FRAME_SIZE,
    BadCrc,
    BadVersion,
    ChannelPublisher,
    EarPositionMessage,
    FrameDecoder,
    Mailbox,
    MalformedPayload,
    SocketPublisher,
    SocketSubscriber,
    Status,
    TruncatedFrame,
    TrustedSide,
    channel,
    decode,
    encode,
)

# Every field zero, version 1, trusted side Left.  Layout derived by hand:
# 2-byte BE length (0x0042 = 66), version 0x01, flags 0x00, eight zero
# timestamp bytes, 48 zero coordinate bytes, four zero confidence bytes,
# then CRC32 of the 62 payload bytes, little-endian.
GOLDEN_HEX = (
    "0042"
    "01" "00"
    "0000000000000000"
    + "00" * 48
    + "00000000"
    "11477fab"
)
GOLDEN = bytes.fromhex(GOLDEN_HEX)

ZERO_MSG = EarPositionMessage(
    timestamp_us=0,
    left=np.zeros(3),
    right=np.zeros(3),
    trusted_side=TrustedSide.LEFT,
    confidence=0.0,
)


def crc32_bitwise(data: bytes) -> int:
    """Reference CRC-32 (reflected 0xEDB88320), bit by bit."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (0xEDB88320 if crc & 1 else 0)
    return crc ^ 0xFFFFFFFF


def random_message(rng):
    return EarPositionMessage(
        timestamp_us=int(rng.integers(0, 2**63)),
        left=rng.normal(size=3),
        right=rng.normal(size=3),
        trusted_side=TrustedSide(int(rng.integers(0, 3))),
        confidence=float(np.float32(rng.uniform())),
    )


class TestCodec:
    def test_golden_frame_bytes(self):
        assert encode(ZERO_MSG) == GOLDEN
        assert len(GOLDEN) == FRAME_SIZE == 68
        assert GOLDEN[:2] == b"\x00\x42"
        assert struct.unpack(">H", GOLDEN[:2])[0] == FRAME_LENGTH == 66

    def test_golden_frame_decodes(self):
        msg, consumed = decode(GOLDEN)
        assert consumed == FRAME_SIZE
        assert msg == ZERO_MSG

    def test_crc_matches_bitwise_reference(self):
        payload = GOLDEN[2:-4]
        assert len(payload) == 62
        expected = struct.unpack("<I", GOLDEN[-4:])[0]
        assert crc32_bitwise(payload) == expected
        assert zlib.crc32(payload) == expected

    def test_round_trip_random(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            msg = random_message(rng)
            out, consumed = decode(encode(msg))
            assert consumed == FRAME_SIZE
            assert out == msg

    @given(
        t=st.integers(min_value=0, max_value=2**64 - 1),
        coords=st.lists(
            st.floats(allow_nan=False, allow_infinity=False, width=64),
            min_size=6,
            max_size=6,
        ),
        side=st.sampled_from(list(TrustedSide)),
        conf=st.floats(min_value=0.0, max_value=1.0, width=32),
    )
    @settings(max_examples=200, deadline=None)
    def test_round_trip_property(self, t, coords, side, conf):
        msg = EarPositionMessage(
            timestamp_us=t,
            left=np.array(coords[:3]),
            right=np.array(coords[3:]),
            trusted_side=side,
            confidence=conf,
        )
        out, _ = decode(encode(msg))
        assert out == msg

    def test_decode_leaves_trailing_bytes(self):
        msg, consumed = decode(GOLDEN + b"extra")
        assert consumed == FRAME_SIZE
        assert msg == ZERO_MSG

    def test_every_truncation_raises_without_consuming(self):
        for cut in range(FRAME_SIZE):
            with pytest.raises(TruncatedFrame):
                decode(GOLDEN[:cut])

    def test_single_byte_corruption_is_bad_crc(self):
        # Any flipped bit between the prefix and the CRC, or in the CRC
        # itself, must surface as a checksum failure.
        for i in range(2, FRAME_SIZE):
            bad = bytearray(GOLDEN)
            bad[i] ^= 0x40
            with pytest.raises(BadCrc):
                decode(bytes(bad))

    def test_unknown_version_rejected_after_valid_crc(self):
        payload = bytearray(GOLDEN[2:-4])
        payload[0] = 2
        frame = struct.pack(">H", len(payload) + 4) + bytes(payload)
        frame += struct.pack("<I", zlib.crc32(bytes(payload)))
        with pytest.raises(BadVersion):
            decode(frame)

    def test_truncation_wins_over_bad_crc(self):
        bad = bytearray(GOLDEN)
        bad[10] ^= 0xFF
        with pytest.raises(TruncatedFrame):
            decode(bytes(bad[:40]))

    def test_invalid_trusted_side_bits(self):
        payload = bytearray(GOLDEN[2:-4])
        payload[1] = 3
        frame = struct.pack(">H", 66) + bytes(payload)
        frame += struct.pack("<I", zlib.crc32(bytes(payload)))
        with pytest.raises(MalformedPayload):
            decode(frame)

    def test_nan_coordinate_rejected(self):
        payload = bytearray(GOLDEN[2:-4])
        payload[10:18] = struct.pack("<d", float("nan"))
        frame = struct.pack(">H", 66) + bytes(payload)
        frame += struct.pack("<I", zlib.crc32(bytes(payload)))
        with pytest.raises(MalformedPayload):
            decode(frame)

    def test_message_validation(self):
        with pytest.raises(ValueError):
            EarPositionMessage(0, np.zeros(3), np.zeros(3), confidence=1.5)
        with pytest.raises(ValueError):
            EarPositionMessage(0, np.array([np.inf, 0, 0]), np.zeros(3))
        with pytest.raises(ValueError):
            EarPositionMessage(0, np.zeros(2), np.zeros(3))
        with pytest.raises(ValueError):
            EarPositionMessage(-1, np.zeros(3), np.zeros(3))


class TestFrameDecoder:
    def test_byte_at_a_time(self):
        rng = np.random.default_rng(3)
        msgs = [random_message(rng) for _ in range(3)]
        stream = b"".join(encode(m) for m in msgs)
        dec = FrameDecoder()
        out = []
        for i in range(len(stream)):
            out.extend(dec.feed(stream[i : i + 1]))
        assert out == msgs

    def test_corrupt_middle_frame_skipped(self):
        rng = np.random.default_rng(4)
        msgs = [random_message(rng) for _ in range(3)]
        frames = [bytearray(encode(m)) for m in msgs]
        frames[1][20] ^= 0xFF
        dec = FrameDecoder()
        out = dec.feed(b"".join(bytes(f) for f in frames))
        assert out == [msgs[0], msgs[2]]
        assert dec.bad_crc == 1

    def test_version_2_frame_counted_and_skipped(self):
        payload = bytearray(GOLDEN[2:-4])
        payload[0] = 2
        alien = struct.pack(">H", 66) + bytes(payload) + struct.pack(
            "<I", zlib.crc32(bytes(payload))
        )
        dec = FrameDecoder()
        out = dec.feed(alien + GOLDEN)
        assert out == [ZERO_MSG]
        assert dec.bad_version == 1


def msg_at(t_us, x=0.0):
    return EarPositionMessage(
        timestamp_us=t_us,
        left=np.array([x, 0.0, 0.0]),
        right=np.array([x, 1.0, 0.0]),
    )


class TestMailbox:
    def test_take_once(self):
        box = Mailbox()
        box.put(msg_at(10))
        assert box.take().timestamp_us == 10
        assert box.take() is None
        assert box.latest.timestamp_us == 10

    def test_latest_wins(self):
        box = Mailbox()
        box.put(msg_at(10))
        box.put(msg_at(20))
        box.put(msg_at(30))
        assert box.take().timestamp_us == 30
        assert box.take() is None

    def test_stale_write_dropped(self):
        box = Mailbox()
        box.put(msg_at(50))
        box.put(msg_at(40))
        assert box.take().timestamp_us == 50

    def test_empty(self):
        box = Mailbox()
        assert box.take() is None
        assert box.latest is None

    def test_concurrent_writer_reader(self):
        box = Mailbox()
        n = 20000

        def write():
            for t in range(1, n + 1):
                box.put(msg_at(t))

        seen = []
        writer = threading.Thread(target=write)
        writer.start()
        while writer.is_alive() or box.take() is not None:
            msg = box.take()
            if msg is not None:
                seen.append(msg.timestamp_us)
        writer.join()
        tail = box.take()
        if tail is not None:
            seen.append(tail.timestamp_us)
        assert seen, "reader never saw a message"
        assert all(a < b for a, b in zip(seen, seen[1:]))
        assert box.latest.timestamp_us == n


class FakeClock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t

    def advance(self, dt):
        self.t += dt


class TestChannel:
    def test_publish_poll(self):
        pub, sub = channel()
        msg = msg_at(123, x=0.4)
        pub.publish(msg)
        assert sub.poll() == msg
        assert sub.poll() is None

    def test_status_transitions(self):
        clock = FakeClock()
        pub, sub = channel(time_fn=clock)
        assert sub.status() is Status.STALE
        pub.publish(msg_at(1))
        assert sub.status() is Status.FRESH
        clock.advance(0.2)
        assert sub.status() is Status.FRESH
        clock.advance(0.1)
        assert sub.status() is Status.STALE
        pub.publish(msg_at(2))
        assert sub.status() is Status.FRESH
        pub.close()
        assert sub.status() is Status.DISCONNECTED

    def test_fast_publisher_slow_consumer(self):
        # 32 Hz producer against a 10 Hz consumer: every poll must yield
        # the newest published message, never an intermediate one.
        pub, sub = channel()
        t_us = 0
        polled = []
        for _ in range(50):
            last = None
            for _ in range(16):
                t_us += 31250
                last = msg_at(t_us)
                pub.publish(last)
            got = sub.poll()
            assert got == last
            polled.append(got.timestamp_us)
        assert all(a < b for a, b in zip(polled, polled[1:]))


class TestSocketTransport:
    def test_unix_socket_delivery(self, tmp_path):
        path = str(tmp_path / "ep.sock")
        pub = SocketPublisher(path)
        sub = SocketSubscriber(path)
        try:
            sent = [msg_at(1000 * (i + 1), x=0.01 * i) for i in range(10)]
            for m in sent:
                pub.publish(m)
            deadline = time.monotonic() + 2.0
            while time.monotonic() < deadline:
                if sub.latest is not None and sub.latest.timestamp_us == 10000:
                    break
                time.sleep(0.005)
            assert sub.latest == sent[-1]
            assert sub.status() is Status.FRESH
        finally:
            pub.close()
            sub.close()

    def test_tcp_socket_delivery(self):
        pub = SocketPublisher("127.0.0.1:0")
        sub = SocketSubscriber(pub.address)
        try:
            pub.publish(msg_at(777, x=1.5))
            deadline = time.monotonic() + 2.0
            while time.monotonic() < deadline and sub.latest is None:
                time.sleep(0.005)
            assert sub.latest == msg_at(777, x=1.5)
        finally:
            pub.close()
            sub.close()

    def test_disconnect_detected(self, tmp_path):
        path = str(tmp_path / "ep.sock")
        pub = SocketPublisher(path)
        sub = SocketSubscriber(path)
        try:
            pub.publish(msg_at(5))
            pub.close()
            deadline = time.monotonic() + 2.0
            while time.monotonic() < deadline and sub.status() is not Status.DISCONNECTED:
                time.sleep(0.005)
            assert sub.status() is Status.DISCONNECTED
            assert sub.latest == msg_at(5)
        finally:
            sub.close()

    def test_corrupted_stream_never_delivers_bad_frame(self, tmp_path):
        path = str(tmp_path / "ep.sock")
        pub = SocketPublisher(path)
        sub = SocketSubscriber(path)
        try:
            pub.publish(msg_at(10))
            bad = bytearray(encode(msg_at(20)))
            bad[30] ^= 0xFF
            pub._conn.sendall(bytes(bad))
            pub.publish(msg_at(30))
            deadline = time.monotonic() + 2.0
            while time.monotonic() < deadline:
                if sub.latest is not None and sub.latest.timestamp_us == 30:
                    break
                time.sleep(0.005)
            assert sub.latest.timestamp_us == 30
            assert sub._decoder.bad_crc == 1
        finally:
            pub.close()
            sub.close()
