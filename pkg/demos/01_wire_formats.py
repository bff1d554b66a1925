"""
Wire formats
============

Every TCP message is framed as ``A5 | type | length | payload | xor``; inside a
device the Wi-Fi layer talks to the microcontroller with a 6-byte UART frame.
"""

from hapticvr.body import BodyPart
from hapticvr.wire import (
    ChecksumMismatch,
    CollisionEvent,
    Lookup,
    decode_message,
    decode_uart,
    encode_message,
    encode_uart,
)

# user 1 touched user 2's right hand; sequence number 7
event = CollisionEvent(target_user=2, body_part=BodyPart.RIGHT_HAND, source_user=1, seq=7)
raw = encode_message(event)
print("CollisionEvent ->", raw.hex(" ").upper())
print("decoded back   ->", decode_message(raw))

print("Lookup(1)      ->", encode_message(Lookup(1)).hex(" ").upper())

# flip one payload bit: the xor checksum notices
corrupt = bytearray(raw)
corrupt[6] ^= 0x01
try:
    decode_message(bytes(corrupt))
except ChecksumMismatch as exc:
    print("corrupted      ->", exc)

# the hop from the Wi-Fi module to the MCU
frame = encode_uart(2, BodyPart.RIGHT_HAND, 7)
print("UART frame     ->", frame.hex(" ").upper(), "=", decode_uart(frame))
