"""Anatomy of an ear-position frame.

Encodes one message, dumps the bytes, then abuses the stream decoder with
a corrupted and a truncated copy to show how faults are counted rather
than crashed on.  Ends with the depth-1 mailbox: feed it a burst of
frames, read once, get only the newest.
"""

import numpy as np

from headrest.wire import (
    EarPositionMessage,
    FrameDecoder,
    Mailbox,
    TrustedSide,
    decode,
    encode,
)

msg = EarPositionMessage(
    timestamp_us=1_700_000_000_000_000,
    left=np.array([-0.075, 0.0, 0.0]),
    right=np.array([0.075, 0.0, 0.0]),
    trusted_side=TrustedSide.LEFT,
    confidence=0.93,
)
frame = encode(msg)

print(f"frame is {len(frame)} bytes: 2-byte length, payload, 4-byte CRC")
for off in range(0, len(frame), 16):
    chunk = frame[off : off + 16]
    print(f"  {off:3d}: {chunk.hex(' ')}")

back, used = decode(frame)
print(f"\ndecodes to: trusted={back.trusted_side.name} conf={back.confidence:.2f}")
print(f"left ear  {back.left}")
print(f"right ear {back.right}")

# one good frame, one with a flipped byte, one cut short
bad = bytearray(frame)
bad[30] ^= 0x40
dec = FrameDecoder()
got = dec.feed(frame + bytes(bad) + frame[:20])
print(f"\nstream of 3 frames (1 corrupted, 1 truncated): decoded {len(got)},")
print(f"bad_crc={dec.bad_crc}, truncated tail stays buffered")

box = Mailbox()
for t in range(10):
    box.put(EarPositionMessage(timestamp_us=t, left=back.left, right=back.right))
print(f"\nmailbox after 10 puts -> take() returns t_us={box.take().timestamp_us}")
print(f"second take() -> {box.take()}  (nothing newer arrived)")
