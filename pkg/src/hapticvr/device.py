"""Software haptic kit: Wi-Fi mini-server -> UART hop -> MCU -> virtual motors.

The Wi-Fi stage accepts TCP connections carrying ``CollisionEvent`` frames,
filters on the configured user id, acks, and pushes a 6-byte UART frame down
a paced serial link. The MCU stage reassembles frames, re-validates them,
maps the body part to a motor channel and records a timed actuation.
"""

from __future__ import annotations

import enum
import json
import logging
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .body import (
    IDENTITY_MOTOR_MAP,
    BodyPart,
    MotorMapError,
    is_user_id,
    parse_part_mapping,
    validate_motor_map,
)
from .registry import DEFAULT_PORT as REGISTRY_PORT
from .registry import now_ms
from .wire import (
    UART_FRAME_LEN,
    UART_START,
    CollisionEvent,
    EventAck,
    Register,
    RegisterAck,
    Status,
    WireError,
    decode_message,
    decode_uart,
    encode_uart,
    read_message,
    reject_and_close,
    send_message,
)

log = logging.getLogger(__name__)

DEFAULT_PULSE_MS = 200
DEFAULT_BAUD = 115200
REGISTER_BACKOFF = (0.5, 1.0, 2.0)
REGISTER_TIMEOUT = 2.0


class OverlapPolicy(str, enum.Enum):
    RESTART = "RESTART"
    EXTEND = "EXTEND"


class RegistrationError(RuntimeError):
    """The registry could not be reached after all retries."""


class ConfigurationError(ValueError):
    pass


class DispatchError(ValueError):
    pass


class UserMismatch(DispatchError):
    pass


class UnmappedBodyPart(DispatchError):
    pass


def default_device_port(user_id: int) -> int:
    return REGISTRY_PORT + user_id


@dataclass
class DeviceConfig:
    user_id: int
    port: int | None = None
    motor_map: Mapping[BodyPart, int] = field(default_factory=lambda: dict(IDENTITY_MOTOR_MAP))
    pulse_ms: float = DEFAULT_PULSE_MS
    overlap_policy: OverlapPolicy = OverlapPolicy.EXTEND
    server: tuple[str, int] = ("127.0.0.1", REGISTRY_PORT)
    host: str = "127.0.0.1"
    advertise_ip: str | None = None
    baud: int = DEFAULT_BAUD
    dedup_seq: bool = False
    idle_timeout: float = 5.0
    log_path: str | None = None

    def __post_init__(self):
        if not is_user_id(self.user_id):
            raise ConfigurationError(f"user_id {self.user_id!r} must be in 1..200")
        if self.port is None:
            self.port = default_device_port(self.user_id)
        if not self.pulse_ms > 0:
            raise ConfigurationError(f"pulse_ms must be > 0, got {self.pulse_ms}")
        if not isinstance(self.overlap_policy, OverlapPolicy):
            try:
                self.overlap_policy = OverlapPolicy(str(self.overlap_policy).upper())
            except ValueError as exc:
                raise ConfigurationError(f"unknown overlap_policy {self.overlap_policy!r}") from exc
        try:
            validate_motor_map(self.motor_map)
        except MotorMapError as exc:
            raise ConfigurationError(str(exc)) from exc

    @property
    def announced_ip(self) -> str:
        return self.advertise_ip or (self.host if self.host not in ("", "0.0.0.0") else "127.0.0.1")


def load_device_config(path, **overrides) -> DeviceConfig:
    """Read a device JSON file (``user_id``, ``port``, ``pulse_ms``,
    ``overlap_policy``, ``motor_map`` as part-name -> channel, ``server``)."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a JSON object")
    kwargs = {k: raw[k] for k in ("user_id", "port", "pulse_ms", "overlap_policy",
                                  "host", "advertise_ip", "baud", "dedup_seq", "log_path")
              if k in raw}
    if "motor_map" in raw:
        try:
            kwargs["motor_map"] = parse_part_mapping(raw["motor_map"], "motor_map")
        except ValueError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    if "server" in raw:
        kwargs["server"] = parse_hostport(raw["server"], REGISTRY_PORT)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return DeviceConfig(**kwargs)


def parse_hostport(value, default_port: int) -> tuple[str, int]:
    if isinstance(value, (list, tuple)):
        return str(value[0]), int(value[1])
    host, _, port = str(value).rpartition(":")
    if not host:
        return str(value), default_port
    return host, int(port)


@dataclass(frozen=True)
class MotorCommand:
    motor_channel: int
    duration_ms: float
    seq: int


@dataclass(frozen=True)
class ActuationRecord:
    motor_channel: int
    start_ms: float
    end_ms: float
    seq: int

    def to_json(self) -> dict:
        return {"motor_channel": self.motor_channel, "start_ms": self.start_ms,
                "end_ms": self.end_ms, "seq": self.seq}


def register_with_server(config: DeviceConfig, timeout: float = REGISTER_TIMEOUT,
                         backoff: Sequence[float] = REGISTER_BACKOFF) -> None:
    """Announce this device's address to the registry.

    One attempt per backoff entry; after a failed attempt we sleep for that
    entry, so the default schedule gives up after ~3.5 s with the server down.
    """
    msg = Register(config.user_id, config.announced_ip, config.port)
    last_error: Exception | None = None
    for delay in backoff:
        try:
            with socket.create_connection(config.server, timeout=timeout) as sock:
                sock.settimeout(timeout)
                send_message(sock, msg)
                reply = read_message(sock)
        except (OSError, WireError) as exc:
            last_error = exc
            log.warning("register with %s:%d failed: %s", *config.server, exc)
            time.sleep(delay)
            continue
        if isinstance(reply, RegisterAck) and reply.status is Status.OK:
            return
        if isinstance(reply, RegisterAck) and reply.status is Status.MALFORMED:
            raise ConfigurationError(f"registry rejected registration of user {config.user_id}")
        last_error = WireError(f"unexpected registry reply {reply!r}")
        time.sleep(delay)
    raise RegistrationError(
        f"could not register user {config.user_id} with {config.server[0]}:{config.server[1]} "
        f"after {len(backoff)} attempts: {last_error}")


def handle_event_connection(event, config: DeviceConfig) -> tuple[EventAck, bytes | None]:
    """Wi-Fi layer filter. ``event`` is a decoded message or the raw frame bytes.

    Returns the ack to send and the UART frame to forward (None if rejected).
    """
    if isinstance(event, (bytes, bytearray, memoryview)):
        try:
            event = decode_message(event)
        except WireError:
            return EventAck(0, Status.MALFORMED), None
    if not isinstance(event, CollisionEvent):
        return EventAck(0, Status.MALFORMED), None
    if event.target_user != config.user_id:
        return EventAck(event.seq, Status.REJECTED_WRONG_USER), None
    return (EventAck(event.seq, Status.OK),
            encode_uart(event.target_user, event.body_part, event.seq))


def mcu_dispatch(frame: bytes, config: DeviceConfig) -> MotorCommand:
    user_id, part, seq = decode_uart(frame)
    if user_id != config.user_id:
        raise UserMismatch(f"frame for user {user_id} at device {config.user_id}")
    channel = config.motor_map.get(part)
    if channel is None:
        raise UnmappedBodyPart(f"no motor for {part.label}")
    return MotorCommand(channel, config.pulse_ms, seq)


def actuate(cmd: MotorCommand, timeline: Sequence[ActuationRecord], now: float,
            policy: OverlapPolicy = OverlapPolicy.EXTEND) -> list[ActuationRecord]:
    """Apply a motor pulse at ``now`` and return the new timeline.

    Records on one channel never overlap: a pulse landing on a busy channel
    either truncates and restarts it (RESTART) or stretches it (EXTEND).
    """
    out = list(timeline)
    end = now + cmd.duration_ms
    busy = None
    for i in range(len(out) - 1, -1, -1):
        if out[i].motor_channel == cmd.motor_channel:
            if out[i].end_ms > now:
                busy = i
            break
    if busy is None:
        out.append(ActuationRecord(cmd.motor_channel, now, end, cmd.seq))
        return out
    cur = out[busy]
    if OverlapPolicy(policy) is OverlapPolicy.EXTEND:
        out[busy] = ActuationRecord(cur.motor_channel, cur.start_ms, max(cur.end_ms, end), cur.seq)
        return out
    if cur.start_ms < now:
        out[busy] = ActuationRecord(cur.motor_channel, cur.start_ms, now, cur.seq)
    else:
        del out[busy]  # truncation would leave an empty record
    out.append(ActuationRecord(cmd.motor_channel, now, end, cmd.seq))
    return out


class UartLink:
    """Serial line between the Wi-Fi and MCU stages, one byte at a time.

    Writers are serialized so frames never interleave. Each byte takes
    10 bit times (8N1) at ``baud``.
    """

    def __init__(self, baud: int, sink):
        self.byte_time = 10.0 / baud
        self._sink = sink
        self._lock = threading.Lock()

    def write(self, frame: bytes) -> None:
        with self._lock:
            t0 = time.perf_counter()
            for i, b in enumerate(frame):
                delay = t0 + (i + 1) * self.byte_time - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
                self._sink(b)


class _EventHandler(socketserver.BaseRequestHandler):
    server: "_DeviceTCPServer"

    def handle(self):
        dev = self.server.device
        sock = self.request
        sock.settimeout(dev.config.idle_timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        while True:  # keep-alive clients may send several events
            try:
                msg = read_message(sock)
            except WireError as exc:
                dev._on_wifi(EventAck(0, Status.MALFORMED), None, None, str(exc))
                reject_and_close(sock, EventAck(0, Status.MALFORMED))
                return
            except OSError:
                return
            if msg is None:
                return
            ack, frame = handle_event_connection(msg, dev.config)
            dev._on_wifi(ack, frame, msg, None)
            if frame is not None:
                dev.forward_uart(frame)
            if ack.status is Status.MALFORMED:
                reject_and_close(sock, ack)
                return
            if not self._send(ack):
                return

    def _send(self, ack) -> bool:
        try:
            send_message(self.request, ack)
            return True
        except OSError:
            return False


class _DeviceTCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def handle_error(self, request, client_address):
        log.exception("device connection from %s failed", client_address)


class Device:
    """One emulated haptic kit. ``start()`` runs it on background threads."""

    def __init__(self, config: DeviceConfig):
        self.config = config
        self.uart = UartLink(config.baud, self._on_uart_byte)
        self.log: list[dict] = []
        self.counters = dict(acks_ok=0, acks_rejected=0, acks_malformed=0, uart_frames=0,
                             dispatch_ok=0, dispatch_errors=0, duplicates=0)
        self._timeline: list[ActuationRecord] = []
        self._rx = bytearray()
        self._seen_seqs: set[int] = set()
        self._lock = threading.Lock()
        self._idle = threading.Condition(self._lock)
        self._pending = 0
        self._log_file = open(config.log_path, "a") if config.log_path else None
        self._server: _DeviceTCPServer | None = None
        self._thread: threading.Thread | None = None

    # -- wiring -------------------------------------------------------------
    def _emit(self, kind: str, **fields) -> None:
        rec = {"kind": kind, "user_id": self.config.user_id, "t_ms": now_ms(), **fields}
        self.log.append(rec)
        if self._log_file is not None:
            self._log_file.write(json.dumps(rec) + "\n")
            self._log_file.flush()

    def _on_wifi(self, ack: EventAck, frame, msg, error) -> None:
        with self._lock:
            key = {Status.OK: "acks_ok", Status.REJECTED_WRONG_USER: "acks_rejected"}.get(
                ack.status, "acks_malformed")
            self.counters[key] += 1
            extra = {"error": error} if error else {}
            if isinstance(msg, CollisionEvent):
                extra.update(target_user=msg.target_user, body_part=msg.body_part.label,
                             source_user=msg.source_user)
            self._emit("ack", seq=ack.seq, status=ack.status.name, **extra)

    def forward_uart(self, frame: bytes) -> None:
        """Push one frame down the serial line to the MCU stage."""
        with self._lock:
            self.counters["uart_frames"] += 1
            self._pending += 1
        self.uart.write(frame)

    def _on_uart_byte(self, b: int) -> None:
        # MCU receive interrupt: resync on the start byte, dispatch on a full frame
        with self._lock:
            if not self._rx and b != UART_START:
                return
            self._rx.append(b)
            if len(self._rx) < UART_FRAME_LEN:
                return
            frame, self._rx = bytes(self._rx), bytearray()
            self._mcu(frame)
            self._pending -= 1
            self._idle.notify_all()

    def _mcu(self, frame: bytes) -> None:
        try:
            cmd = mcu_dispatch(frame, self.config)
        except (WireError, DispatchError) as exc:
            self.counters["dispatch_errors"] += 1
            log.warning("device %d: dispatch error: %s", self.config.user_id, exc)
            self._emit("dispatch_error", frame=frame.hex(), error=f"{type(exc).__name__}: {exc}")
            return
        if self.config.dedup_seq and cmd.seq in self._seen_seqs:
            self.counters["duplicates"] += 1
            self._emit("duplicate", seq=cmd.seq)
            return
        self._seen_seqs.add(cmd.seq)
        self.counters["dispatch_ok"] += 1
        t = now_ms()
        self._timeline = actuate(cmd, self._timeline, t, self.config.overlap_policy)
        self._emit("actuation", seq=cmd.seq, motor_channel=cmd.motor_channel,
                   duration_ms=cmd.duration_ms, actuated_ms=t)

    # -- public -------------------------------------------------------------
    @property
    def timeline(self) -> list[ActuationRecord]:
        with self._lock:
            return list(self._timeline)

    @property
    def address(self) -> tuple[str, int]:
        return (self.config.announced_ip, self.config.port)

    def wait_idle(self, timeout: float = 1.0) -> bool:
        """Block until every forwarded UART frame has been dispatched."""
        with self._idle:
            return self._idle.wait_for(lambda: self._pending == 0, timeout)

    def start(self, register: bool = True, **register_kwargs) -> "Device":
        self._server = _DeviceTCPServer((self.config.host, self.config.port), _EventHandler)
        self._server.device = self
        self.config.port = self._server.server_address[1]  # resolves port 0
        self._thread = threading.Thread(
            target=self._server.serve_forever, kwargs={"poll_interval": 0.05},
            name=f"device:{self.config.user_id}", daemon=True)
        self._thread.start()
        if register:
            try:
                register_with_server(self.config, **register_kwargs)
            except Exception:
                self.stop()
                raise
        self._emit("started", port=self.config.port)
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._thread.join()
            self._server = None
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def run_device(config: DeviceConfig, register: bool = True) -> None:
    """Run a device in the foreground until interrupted."""
    dev = Device(config).start(register=register)
    log.info("device %d listening on %s:%d", config.user_id, config.host, config.port)
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        dev.stop()
