"""Binary codecs for the TCP application messages and the device UART frame.

TCP frame::

    [0xA5][type u8][payload length u16][payload][XOR of payload bytes]

UART frame (Wi-Fi layer -> MCU)::

    [0x7E][user_id][body_part][seq hi][seq lo][XOR of bytes 1..4]

All integers are big-endian.
"""

from __future__ import annotations

import enum
import ipaddress
import socket
import struct
from dataclasses import dataclass
from functools import reduce
from typing import Union

from .body import BodyPart, is_user_id

MAGIC = 0xA5
UART_START = 0x7E
UART_FRAME_LEN = 6
HEADER_LEN = 4
OBJECT_SOURCE = 0xFF


class Status(enum.IntEnum):
    OK = 0
    NOT_FOUND = 1
    REJECTED_WRONG_USER = 2
    MALFORMED = 3


class MsgType(enum.IntEnum):
    REGISTER = 0x01
    REGISTER_ACK = 0x02
    LOOKUP = 0x03
    LOOKUP_RESP = 0x04
    COLLISION_EVENT = 0x10
    EVENT_ACK = 0x11


PAYLOAD_LEN = {
    MsgType.REGISTER: 7,
    MsgType.REGISTER_ACK: 1,
    MsgType.LOOKUP: 1,
    MsgType.LOOKUP_RESP: 7,
    MsgType.COLLISION_EVENT: 5,
    MsgType.EVENT_ACK: 3,
}


class WireError(ValueError):
    """Base class for every decode/encode failure."""


class TruncatedFrame(WireError):
    pass


class BadMagic(WireError):
    pass


class UnknownType(WireError):
    pass


class LengthMismatch(WireError):
    pass


class ChecksumMismatch(WireError):
    pass


class InvalidPayload(WireError):
    pass


class BadStartByte(WireError):
    pass


class BadBodyPart(InvalidPayload):
    pass


class WrongLength(WireError):
    pass


@dataclass(frozen=True)
class Register:
    user_id: int
    ipv4: str
    port: int


@dataclass(frozen=True)
class RegisterAck:
    status: Status


@dataclass(frozen=True)
class Lookup:
    user_id: int


@dataclass(frozen=True)
class LookupResp:
    status: Status
    ipv4: str = "0.0.0.0"
    port: int = 0


@dataclass(frozen=True)
class CollisionEvent:
    target_user: int
    body_part: BodyPart
    source_user: int
    seq: int


@dataclass(frozen=True)
class EventAck:
    seq: int
    status: Status


Message = Union[Register, RegisterAck, Lookup, LookupResp, CollisionEvent, EventAck]

_TYPE_OF = {
    Register: MsgType.REGISTER,
    RegisterAck: MsgType.REGISTER_ACK,
    Lookup: MsgType.LOOKUP,
    LookupResp: MsgType.LOOKUP_RESP,
    CollisionEvent: MsgType.COLLISION_EVENT,
    EventAck: MsgType.EVENT_ACK,
}


def xor_checksum(data: bytes) -> int:
    return reduce(lambda a, b: a ^ b, data, 0)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _check_u16(name, v):
    if not _is_int(v) or not 0 <= v <= 0xFFFF:
        raise InvalidPayload(f"{name} {v!r} is not a u16")


def _check_status(v):
    if not _is_int(v) or v not in Status._value2member_map_:
        raise InvalidPayload(f"unknown status {v!r}")


def _check_wire_id(name, v):
    # registry-level ids: any non-zero byte; range policy is the server's call
    if not _is_int(v) or not 1 <= v <= 0xFF:
        raise InvalidPayload(f"{name} {v!r} must be in 1..255")


def _check_part(v):
    if not _is_int(v) or not 0 <= v < len(BodyPart):
        raise BadBodyPart(f"body part code {v!r} outside 0..{len(BodyPart) - 1}")


def _pack_ip(ipv4) -> bytes:
    try:
        return ipaddress.IPv4Address(ipv4).packed
    except (ipaddress.AddressValueError, ValueError, TypeError) as exc:
        raise InvalidPayload(f"bad IPv4 address {ipv4!r}") from exc


def _payload(msg: Message) -> bytes:
    if isinstance(msg, (Register, LookupResp)):
        if isinstance(msg, Register):
            _check_wire_id("user_id", msg.user_id)
            head = msg.user_id
        else:
            _check_status(msg.status)
            head = msg.status
        _check_u16("port", msg.port)
        return bytes([head]) + _pack_ip(msg.ipv4) + struct.pack(">H", msg.port)
    if isinstance(msg, RegisterAck):
        _check_status(msg.status)
        return bytes([msg.status])
    if isinstance(msg, Lookup):
        _check_wire_id("user_id", msg.user_id)
        return bytes([msg.user_id])
    if isinstance(msg, CollisionEvent):
        if not is_user_id(msg.target_user):
            raise InvalidPayload(f"target_user {msg.target_user!r} must be in 1..200")
        if not (is_user_id(msg.source_user) or msg.source_user == OBJECT_SOURCE):
            raise InvalidPayload(f"source_user {msg.source_user!r} must be in 1..200 or 0xFF")
        _check_part(msg.body_part)
        _check_u16("seq", msg.seq)
        return struct.pack(">BBBH", msg.target_user, msg.body_part, msg.source_user, msg.seq)
    if isinstance(msg, EventAck):
        _check_u16("seq", msg.seq)
        _check_status(msg.status)
        return struct.pack(">HB", msg.seq, msg.status)
    raise TypeError(f"not a message: {msg!r}")


def encode_message(msg: Message) -> bytes:
    payload = _payload(msg)
    return (struct.pack(">BBH", MAGIC, _TYPE_OF[type(msg)], len(payload))
            + payload + bytes([xor_checksum(payload)]))


def _parse_payload(mtype: MsgType, p: bytes) -> Message:
    if mtype is MsgType.REGISTER:
        msg = Register(p[0], str(ipaddress.IPv4Address(p[1:5])), struct.unpack(">H", p[5:7])[0])
    elif mtype is MsgType.REGISTER_ACK:
        _check_status(p[0])
        msg = RegisterAck(Status(p[0]))
    elif mtype is MsgType.LOOKUP:
        msg = Lookup(p[0])
    elif mtype is MsgType.LOOKUP_RESP:
        _check_status(p[0])
        msg = LookupResp(Status(p[0]), str(ipaddress.IPv4Address(p[1:5])),
                         struct.unpack(">H", p[5:7])[0])
    elif mtype is MsgType.COLLISION_EVENT:
        target, part, source, seq = struct.unpack(">BBBH", p)
        _check_part(part)
        msg = CollisionEvent(target, BodyPart(part), source, seq)
    else:
        seq, status = struct.unpack(">HB", p)
        _check_status(status)
        msg = EventAck(seq, Status(status))
    _payload(msg)  # shared invariant checks
    return msg


def parse_header(header: bytes) -> tuple[MsgType, int]:
    """Validate the 4-byte header; return (type, payload length)."""
    if not header:
        raise TruncatedFrame("empty input")
    if header[0] != MAGIC:
        raise BadMagic(f"bad magic byte 0x{header[0]:02X}")
    if len(header) < HEADER_LEN:
        raise TruncatedFrame(f"header needs {HEADER_LEN} bytes, got {len(header)}")
    try:
        mtype = MsgType(header[1])
    except ValueError:
        raise UnknownType(f"unknown message type 0x{header[1]:02X}") from None
    length = struct.unpack(">H", header[2:4])[0]
    if length != PAYLOAD_LEN[mtype]:
        raise LengthMismatch(
            f"{mtype.name} payload must be {PAYLOAD_LEN[mtype]} bytes, header says {length}")
    return mtype, length


def decode_message(data: bytes) -> Message:
    data = bytes(data)
    mtype, length = parse_header(data[:HEADER_LEN])
    total = HEADER_LEN + length + 1
    if len(data) < total:
        raise TruncatedFrame(f"frame needs {total} bytes, got {len(data)}")
    if len(data) > total:
        raise LengthMismatch(f"{len(data) - total} trailing bytes after frame")
    payload = data[HEADER_LEN:HEADER_LEN + length]
    if xor_checksum(payload) != data[-1]:
        raise ChecksumMismatch(
            f"checksum 0x{data[-1]:02X} != computed 0x{xor_checksum(payload):02X}")
    return _parse_payload(mtype, payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            break
        buf += chunk
    return bytes(buf)


def read_message(sock: socket.socket) -> Message | None:
    """Read one framed message from a stream socket.

    Returns None on clean EOF before any byte. The header is validated as soon
    as it arrives so a bogus length never makes us wait for 64 KiB.
    """
    first = _recv_exact(sock, 1)
    if not first:
        return None
    if first[0] != MAGIC:
        raise BadMagic(f"bad magic byte 0x{first[0]:02X}")
    header = first + _recv_exact(sock, HEADER_LEN - 1)
    _, length = parse_header(header)
    rest = _recv_exact(sock, length + 1)
    return decode_message(header + rest)


def send_message(sock: socket.socket, msg: Message) -> None:
    sock.sendall(encode_message(msg))


def reject_and_close(sock: socket.socket, msg: Message, drain_timeout: float = 0.1) -> None:
    """Send a final reply, then half-close and drain.

    Closing with unread input makes the kernel send RST, which can discard the
    reply before the peer reads it.
    """
    try:
        send_message(sock, msg)
        sock.shutdown(socket.SHUT_WR)
        sock.settimeout(drain_timeout)
        while sock.recv(4096):
            pass
    except OSError:
        pass


def encode_uart(user_id: int, body_part: int, seq: int) -> bytes:
    if not is_user_id(user_id):
        raise InvalidPayload(f"user_id {user_id!r} must be in 1..200")
    _check_part(body_part)
    _check_u16("seq", seq)
    body = struct.pack(">BBH", user_id, body_part, seq)
    return bytes([UART_START]) + body + bytes([xor_checksum(body)])


def decode_uart(data: bytes) -> tuple[int, BodyPart, int]:
    data = bytes(data)
    if len(data) != UART_FRAME_LEN:
        raise WrongLength(f"UART frame must be {UART_FRAME_LEN} bytes, got {len(data)}")
    if data[0] != UART_START:
        raise BadStartByte(f"bad start byte 0x{data[0]:02X}")
    if xor_checksum(data[1:5]) != data[5]:
        raise ChecksumMismatch(
            f"UART checksum 0x{data[5]:02X} != computed 0x{xor_checksum(data[1:5]):02X}")
    user_id, part, seq = struct.unpack(">BBH", data[1:5])
    _check_part(part)
    if not is_user_id(user_id):
        raise InvalidPayload(f"user_id {user_id} must be in 1..200")
    return user_id, BodyPart(part), seq
